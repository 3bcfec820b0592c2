//! Test execution orchestration.
//!
//! A bundle carries everything one test run needs: the function sources, the
//! entry function's tests and stubs, and a persistence seed. An executor runs
//! it and reports per-test outcomes. [`run_tests`] normalizes whatever the
//! executor returns so the engine never sees a malformed report, and decides
//! io-pair outcomes itself by canonical equality.

mod mock;
mod store;
mod subprocess;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

pub use mock::{MockExecutor, Script, Step};
pub use store::{DocumentStore, StoreError};
pub use subprocess::{read_frame, serve, write_frame, SubprocessExecutor, WireError};

use crate::model::{Contribution, FunctionId, Stub, TestCase, TestId, TestKind};
use crate::state::ProjectState;
use crate::value::{canonical_tuple, Value};

/// Default wall-time limit for one bundle.
pub const DEFAULT_WALL_TIME_MS: u64 = 5_000;
pub const DEFAULT_MAX_OUTPUT_BYTES: u64 = 1 << 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BundleFunction {
    pub name: String,
    pub params: Vec<String>,
    pub source: String,
    pub version: u64,
}

impl BundleFunction {
    pub fn is_implemented(&self) -> bool {
        !self.source.trim().is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SeedDocument {
    pub collection: String,
    pub id: String,
    pub value: Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Limits {
    pub wall_time_ms: u64,
    pub max_output_bytes: u64,
}

impl Default for Limits {
    fn default() -> Self {
        Limits { wall_time_ms: DEFAULT_WALL_TIME_MS, max_output_bytes: DEFAULT_MAX_OUTPUT_BYTES }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExecutionBundle {
    pub bundle_id: String,
    pub functions: Vec<BundleFunction>,
    pub entry_function: String,
    pub tests: Vec<TestCase>,
    pub stubs: Vec<Stub>,
    #[serde(default)]
    pub persistence_seed: Vec<SeedDocument>,
    #[serde(default)]
    pub limits: Limits,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BundleError {
    #[error("entry function `{0}` is not part of the bundle")]
    MissingEntry(String),
    #[error("duplicate test id `{0}`")]
    DuplicateTest(TestId),
    #[error("duplicate stub for {0}{1}")]
    DuplicateStub(String, String),
}

impl ExecutionBundle {
    pub fn validate(&self) -> Result<(), BundleError> {
        if !self.functions.iter().any(|f| f.name == self.entry_function) {
            return Err(BundleError::MissingEntry(self.entry_function.clone()));
        }
        let mut ids = HashSet::new();
        for t in &self.tests {
            if !ids.insert(&t.id) {
                return Err(BundleError::DuplicateTest(t.id.clone()));
            }
        }
        let mut keys = HashSet::new();
        for s in &self.stubs {
            let key = s.key();
            if !keys.insert(key.clone()) {
                return Err(BundleError::DuplicateStub(key.0, key.1));
            }
        }
        Ok(())
    }

    pub fn entry(&self) -> Option<&BundleFunction> {
        self.functions.iter().find(|f| f.name == self.entry_function)
    }

    pub fn implemented(&self) -> HashSet<String> {
        self.functions.iter().filter(|f| f.is_implemented()).map(|f| f.name.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "message", rename_all = "camelCase")]
pub enum TestStatus {
    Passed,
    Failed(String),
    Errored(String),
}

impl TestStatus {
    pub fn is_passed(&self) -> bool {
        matches!(self, TestStatus::Passed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Trace {
    pub expression: String,
    pub values: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StubCall {
    pub callee_name: String,
    pub argument_tuple: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TestResult {
    pub test_id: TestId,
    #[serde(flatten)]
    pub status: TestStatus,
    /// Return value of the entry function, when it returned.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actual: Option<Value>,
    #[serde(default)]
    pub traces: Vec<Trace>,
    #[serde(default)]
    pub stub_hits: Vec<StubCall>,
    #[serde(default)]
    pub stub_misses: Vec<StubCall>,
}

impl TestResult {
    pub fn errored(test_id: TestId, message: impl Into<String>) -> Self {
        TestResult {
            test_id,
            status: TestStatus::Errored(message.into()),
            actual: None,
            traces: vec![],
            stub_hits: vec![],
            stub_misses: vec![],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TestRunReport {
    pub bundle_id: String,
    pub per_test: Vec<TestResult>,
    #[serde(default)]
    pub persistence_final_state: Vec<SeedDocument>,
}

impl TestRunReport {
    pub fn passed(&self) -> usize {
        self.per_test.iter().filter(|t| t.status.is_passed()).count()
    }

    pub fn result(&self, id: &TestId) -> Option<&TestResult> {
        self.per_test.iter().find(|t| &t.test_id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExecutorError {
    #[error("executor unreachable: {0}")]
    Unreachable(String),
    #[error("executor timed out after {0} ms")]
    Timeout(u64),
    #[error("executor protocol violation: {0}")]
    Protocol(String),
}

/// Runs a bundle and reports per-test outcomes. Implementations must not
/// carry persistence state from one call to the next.
pub trait ExecutorPort: Send + Sync {
    fn execute(&self, bundle: &ExecutionBundle) -> Result<TestRunReport, ExecutorError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "resolution", rename_all = "camelCase")]
pub enum CallResolution {
    UseStub { return_value: Value },
    CallReal,
    MissError,
}

/// Stubs intercept on an exact canonical match, even for implemented
/// callees. Without a match, implemented callees run for real and anything
/// else is a miss.
pub fn resolve_call(
    callee: &str,
    args: &[Value],
    stubs: &[Stub],
    implemented: &HashSet<String>,
) -> CallResolution {
    if let Ok(key) = canonical_tuple(args) {
        if let Some(stub) = stubs
            .iter()
            .find(|s| s.callee_name == callee && canonical_tuple(&s.argument_tuple).as_ref() == Ok(&key))
        {
            return CallResolution::UseStub { return_value: stub.return_value.clone() };
        }
    }
    if implemented.contains(callee) {
        CallResolution::CallReal
    } else {
        CallResolution::MissError
    }
}

/// Dispatches a bundle and normalizes the report: one entry per bundle test,
/// in bundle order; io-pair outcomes decided by canonical equality; executor
/// failures become `Errored` entries rather than errors.
pub fn run_tests(bundle: &ExecutionBundle, executor: &dyn ExecutorPort) -> Result<TestRunReport, BundleError> {
    bundle.validate()?;
    let raw = match executor.execute(bundle) {
        Ok(report) => report,
        Err(e) => {
            return Ok(TestRunReport {
                bundle_id: bundle.bundle_id.clone(),
                per_test: bundle.tests.iter().map(|t| TestResult::errored(t.id.clone(), e.to_string())).collect(),
                persistence_final_state: vec![],
            })
        }
    };
    let mut per_test = Vec::with_capacity(bundle.tests.len());
    for test in &bundle.tests {
        let mut result = match raw.per_test.iter().find(|r| r.test_id == test.id) {
            Some(r) => r.clone(),
            None => TestResult::errored(test.id.clone(), "test missing from executor report"),
        };
        if let (TestKind::IoPair { expected_output, .. }, Some(actual)) = (&test.kind, &result.actual) {
            if !matches!(result.status, TestStatus::Errored(_)) {
                result.status = compare_io(expected_output, actual);
            }
        }
        per_test.push(result);
    }
    Ok(TestRunReport {
        bundle_id: bundle.bundle_id.clone(),
        per_test,
        persistence_final_state: raw.persistence_final_state,
    })
}

pub(crate) fn compare_io(expected: &Value, actual: &Value) -> TestStatus {
    match (expected.canonicalize(), actual.canonicalize()) {
        (Ok(e), Ok(a)) if e == a => TestStatus::Passed,
        (Ok(e), Ok(a)) => TestStatus::Failed(format!("expected {e}, got {a}")),
        _ => TestStatus::Errored("non-finite value".into()),
    }
}

/// Structural problems in a report relative to its bundle. Empty for a
/// conforming executor.
pub fn report_violations(bundle: &ExecutionBundle, report: &TestRunReport) -> Vec<String> {
    let mut out = Vec::new();
    for test in &bundle.tests {
        let n = report.per_test.iter().filter(|r| r.test_id == test.id).count();
        if n != 1 {
            out.push(format!("test {} appears {n} times", test.id));
        }
    }
    let implemented = bundle.implemented();
    let stub_keys: HashSet<_> = bundle.stubs.iter().map(Stub::key).collect();
    for r in &report.per_test {
        if !bundle.tests.iter().any(|t| t.id == r.test_id) {
            out.push(format!("unknown test {}", r.test_id));
        }
        for hit in &r.stub_hits {
            let key = (hit.callee_name.clone(), canonical_tuple(&hit.argument_tuple).unwrap_or_default());
            if !stub_keys.contains(&key) {
                out.push(format!("stub hit {}{} has no stub", key.0, key.1));
            }
        }
        for miss in &r.stub_misses {
            if implemented.contains(&miss.callee_name) {
                out.push(format!("stub miss on implemented function {}", miss.callee_name));
            }
        }
    }
    out
}

/// Builds the bundle for running a function's tests, optionally overlaid with
/// a worker's unsubmitted draft.
pub fn bundle_for(
    state: &ProjectState,
    function_id: FunctionId,
    draft: Option<&Contribution>,
    persistence_seed: Vec<SeedDocument>,
    limits: Limits,
) -> Option<ExecutionBundle> {
    let entry = state.functions.get(&function_id)?;
    let functions = state
        .functions
        .values()
        .map(|f| {
            let source = match draft.and_then(|d| d.code.as_ref()) {
                Some(code) if f.id == function_id => code.clone(),
                _ => f.code.clone(),
            };
            BundleFunction {
                name: f.name.clone(),
                params: f.signature.param_names().into_iter().map(String::from).collect(),
                source,
                version: f.version,
            }
        })
        .collect();
    let mut tests = entry.tests.clone();
    let mut stubs = entry.stubs.clone();
    if let Some(d) = draft {
        for t in &d.tests_added {
            match tests.iter_mut().find(|x| x.id == t.id) {
                Some(slot) => *slot = t.clone(),
                None => tests.push(t.clone()),
            }
        }
        for s in &d.stubs_added {
            match stubs.iter_mut().find(|x| x.key() == s.key()) {
                Some(slot) => *slot = s.clone(),
                None => stubs.push(s.clone()),
            }
        }
    }
    Some(ExecutionBundle {
        bundle_id: format!("{}-v{}", entry.name, entry.version),
        functions,
        entry_function: entry.name.clone(),
        tests,
        stubs,
        persistence_seed,
        limits,
    })
}
