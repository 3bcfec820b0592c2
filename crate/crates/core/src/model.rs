//! Shared domain types: the client request, function artifacts, microtasks,
//! submissions and review decisions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::sandbox::TestRunReport;
use crate::value::Value;

macro_rules! numeric_id {
    ($(#[$meta:meta])* $name:ident, $prefix:literal) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub u64);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

numeric_id!(FunctionId, "fn-");
numeric_id!(MicrotaskId, "mt-");
numeric_id!(
    /// One holding of a microtask by one worker. A microtask that expires and
    /// is fetched again gets a fresh assignment id, so stale holders are
    /// detected by id alone.
    AssignmentId,
    "as-"
);
numeric_id!(SubmissionId, "sub-");
numeric_id!(IssueId, "issue-");
numeric_id!(QuestionId, "q-");
numeric_id!(AnswerId, "a-");
numeric_id!(NotificationId, "note-");

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WorkerId(pub String);

impl WorkerId {
    pub fn new(id: impl Into<String>) -> Self {
        WorkerId(id.into())
    }
}

impl fmt::Display for WorkerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClientId(pub String);

impl fmt::Display for ClientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TestId(pub String);

impl fmt::Display for TestId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Logical time in whole seconds. Injected by callers; the engine never reads
/// a wall clock.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct LogicalTime(pub u64);

impl LogicalTime {
    pub const ZERO: LogicalTime = LogicalTime(0);

    pub fn from_minutes(minutes: u64) -> Self {
        LogicalTime(minutes * 60)
    }

    pub fn plus_secs(self, secs: u64) -> Self {
        LogicalTime(self.0 + secs)
    }

    pub fn since(self, earlier: LogicalTime) -> u64 {
        self.0.saturating_sub(earlier.0)
    }
}

impl fmt::Display for LogicalTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{:02}", self.0 / 60, self.0 % 60)
    }
}

/// A parameter, field or return type. Text form: `string`, `number`,
/// `boolean`, an ADT name, or `T[]` for a list.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum TypeRef {
    String,
    Number,
    Boolean,
    Adt(String),
    List(Box<TypeRef>),
}

impl TypeRef {
    pub fn list_of(inner: TypeRef) -> Self {
        TypeRef::List(Box::new(inner))
    }

    pub fn adt(name: impl Into<String>) -> Self {
        TypeRef::Adt(name.into())
    }

    /// ADT referenced by value, looking through no list.
    pub fn direct_adt(&self) -> Option<&str> {
        match self {
            TypeRef::Adt(name) => Some(name),
            _ => None,
        }
    }

    pub fn is_primitive_name(name: &str) -> bool {
        matches!(
            name.to_ascii_lowercase().as_str(),
            "string" | "number" | "boolean" | "void"
        )
    }
}

impl fmt::Display for TypeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TypeRef::String => f.write_str("string"),
            TypeRef::Number => f.write_str("number"),
            TypeRef::Boolean => f.write_str("boolean"),
            TypeRef::Adt(name) => f.write_str(name),
            TypeRef::List(inner) => write!(f, "{inner}[]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed type reference `{0}`")]
pub struct TypeRefParseError(pub String);

impl FromStr for TypeRef {
    type Err = TypeRefParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Some(inner) = s.strip_suffix("[]") {
            return Ok(TypeRef::list_of(inner.parse()?));
        }
        match s.to_ascii_lowercase().as_str() {
            "string" => return Ok(TypeRef::String),
            "number" => return Ok(TypeRef::Number),
            "boolean" => return Ok(TypeRef::Boolean),
            _ => {}
        }
        if is_identifier(s) {
            Ok(TypeRef::Adt(s.to_string()))
        } else {
            Err(TypeRefParseError(s.to_string()))
        }
    }
}

impl Serialize for TypeRef {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TypeRef {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// `None` is written as `"void"`.
mod void_type {
    use super::TypeRef;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &Option<TypeRef>, s: S) -> Result<S::Ok, S::Error> {
        match t {
            Some(t) => s.collect_str(t),
            None => s.serialize_str("void"),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<TypeRef>, D::Error> {
        let s = String::deserialize(d)?;
        if s.trim().eq_ignore_ascii_case("void") {
            return Ok(None);
        }
        s.parse().map(Some).map_err(serde::de::Error::custom)
    }
}

pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' || c == '$' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '$')
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: TypeRef,
}

impl Param {
    pub fn new(name: impl Into<String>, ty: TypeRef) -> Self {
        Param { name: name.into(), ty }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdtField {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: TypeRef,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Adt {
    pub name: String,
    pub fields: Vec<AdtField>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Signature {
    pub params: Vec<Param>,
    #[serde(with = "void_type", default)]
    pub return_type: Option<TypeRef>,
}

impl Signature {
    pub fn arity(&self) -> usize {
        self.params.len()
    }

    pub fn param_names(&self) -> Vec<&str> {
        self.params.iter().map(|p| p.name.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EndpointSpec {
    pub function_name: String,
    pub description: String,
    pub params: Vec<Param>,
    #[serde(with = "void_type", default)]
    pub return_type: Option<TypeRef>,
}

impl EndpointSpec {
    pub fn signature(&self) -> Signature {
        Signature { params: self.params.clone(), return_type: self.return_type.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ClientRequest {
    pub project_name: String,
    pub project_description: String,
    pub endpoints: Vec<EndpointSpec>,
    #[serde(default)]
    pub adts: Vec<Adt>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deploy_target: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase")]
pub enum Origin {
    ClientEndpoint,
    #[serde(rename_all = "camelCase")]
    CrowdCreated { creator: WorkerId, parent: FunctionId },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "camelCase")]
pub enum FunctionState {
    AwaitingWork,
    Halted { issue: IssueId },
    Completed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FunctionArtifact {
    pub id: FunctionId,
    pub name: String,
    pub description: String,
    pub signature: Signature,
    /// Body text only; the signature line is owned by the system.
    pub code: String,
    pub tests: Vec<TestCase>,
    pub stubs: Vec<Stub>,
    pub origin: Origin,
    pub state: FunctionState,
    pub version: u64,
}

impl FunctionArtifact {
    pub fn is_endpoint(&self) -> bool {
        matches!(self.origin, Origin::ClientEndpoint)
    }

    pub fn is_implemented(&self) -> bool {
        !self.code.trim().is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum TestKind {
    #[serde(rename_all = "camelCase")]
    IoPair { inputs: Vec<Value>, expected_output: Value },
    CodeTest { source: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TestCase {
    pub id: TestId,
    #[serde(flatten)]
    pub kind: TestKind,
    pub description: String,
    pub author: WorkerId,
}

impl TestCase {
    pub fn io_pair(
        id: impl Into<String>,
        description: impl Into<String>,
        author: WorkerId,
        inputs: Vec<Value>,
        expected_output: Value,
    ) -> Self {
        TestCase {
            id: TestId(id.into()),
            kind: TestKind::IoPair { inputs, expected_output },
            description: description.into(),
            author,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Stub {
    pub callee_name: String,
    pub argument_tuple: Vec<Value>,
    pub return_value: Value,
    pub author: WorkerId,
}

impl Stub {
    /// `(callee, canonical argument tuple)`; unique within one artifact.
    pub fn key(&self) -> (String, String) {
        let args = crate::value::canonical_tuple(&self.argument_tuple)
            .unwrap_or_else(|_| "<non-finite>".to_string());
        (self.callee_name.clone(), args)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase")]
pub enum MicrotaskKind {
    #[serde(rename_all = "camelCase")]
    ImplementFunctionBehavior {
        function_id: FunctionId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rework_feedback: Option<String>,
    },
    #[serde(rename_all = "camelCase")]
    Review { submission_id: SubmissionId, function_id: FunctionId },
}

impl MicrotaskKind {
    pub fn function_id(&self) -> FunctionId {
        match self {
            MicrotaskKind::ImplementFunctionBehavior { function_id, .. } => *function_id,
            MicrotaskKind::Review { function_id, .. } => *function_id,
        }
    }

    pub fn label(&self) -> TaskKindLabel {
        match self {
            MicrotaskKind::ImplementFunctionBehavior { .. } => TaskKindLabel::ImplementFunctionBehavior,
            MicrotaskKind::Review { .. } => TaskKindLabel::Review,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum TaskKindLabel {
    ImplementFunctionBehavior,
    Review,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "camelCase")]
pub enum MicrotaskState {
    Queued,
    #[serde(rename_all = "camelCase")]
    Assigned {
        worker: WorkerId,
        assignment: AssignmentId,
        assigned_at: LogicalTime,
        deadline: LogicalTime,
        warned: bool,
    },
    Submitted,
    Retired,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Microtask {
    pub id: MicrotaskId,
    pub kind: MicrotaskKind,
    pub state: MicrotaskState,
    pub created_at: LogicalTime,
}

impl Microtask {
    /// Queued, Assigned, or Submitted and still awaiting its review.
    pub fn is_live(&self) -> bool {
        !matches!(self.state, MicrotaskState::Retired)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct NewFunction {
    pub name: String,
    pub description: String,
    pub signature: Signature,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Contribution {
    /// Full replacement body; `None` leaves the body unchanged.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code: Option<String>,
    #[serde(default)]
    pub tests_added: Vec<TestCase>,
    #[serde(default)]
    pub stubs_added: Vec<Stub>,
    #[serde(default)]
    pub new_functions: Vec<NewFunction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase")]
pub enum SubmissionPayload {
    BehaviorContribution(Contribution),
    MarkComplete,
    IssueReport { text: String },
}

impl SubmissionPayload {
    pub fn is_issue(&self) -> bool {
        matches!(self, SubmissionPayload::IssueReport { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Submission {
    pub id: SubmissionId,
    pub microtask_id: MicrotaskId,
    pub assignment: AssignmentId,
    pub worker: WorkerId,
    pub function_id: FunctionId,
    /// Artifact version the contribution was written against.
    pub base_version: u64,
    pub payload: SubmissionPayload,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_report: Option<TestRunReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ReviewOutcome {
    Accepted,
    NeedsRevision,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ReviewDecision {
    pub submission_id: SubmissionId,
    pub reviewer: WorkerId,
    pub stars: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReviewValidationError {
    #[error("stars must be between 1 and 5, got {0}")]
    StarsOutOfRange(u8),
    #[error("feedback is required for ratings of 3 stars or fewer")]
    FeedbackRequired,
}

impl ReviewDecision {
    pub fn validate(&self) -> Result<ReviewOutcome, ReviewValidationError> {
        if !(1..=5).contains(&self.stars) {
            return Err(ReviewValidationError::StarsOutOfRange(self.stars));
        }
        if self.stars >= 4 {
            return Ok(ReviewOutcome::Accepted);
        }
        match self.feedback.as_deref().map(str::trim) {
            Some(text) if !text.is_empty() => Ok(ReviewOutcome::NeedsRevision),
            _ => Err(ReviewValidationError::FeedbackRequired),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Issue {
    pub id: IssueId,
    pub function_id: FunctionId,
    pub submission_id: SubmissionId,
    pub reporter: WorkerId,
    pub text: String,
    pub resolved: bool,
}

/// Client-supplied fix for an issue. Omitted fields are left unchanged.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct IssueResolution {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signature: Option<Signature>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Question {
    pub id: QuestionId,
    pub author: WorkerId,
    pub text: String,
    pub timestamp: LogicalTime,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Answer {
    pub id: AnswerId,
    pub question_id: QuestionId,
    pub author: WorkerId,
    pub text: String,
    pub timestamp: LogicalTime,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase")]
pub enum NotificationKind {
    #[serde(rename_all = "camelCase")]
    ReviewReceived {
        submission_id: SubmissionId,
        stars: u8,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        feedback: Option<String>,
    },
    #[serde(rename_all = "camelCase")]
    TimeWarning { microtask_id: MicrotaskId, assignment: AssignmentId },
    #[serde(rename_all = "camelCase")]
    IssueResolved { function_id: FunctionId },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Notification {
    pub id: NotificationId,
    pub recipient: WorkerId,
    pub kind: NotificationKind,
    pub read: bool,
}
