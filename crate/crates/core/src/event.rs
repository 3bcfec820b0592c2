//! The append-only project event record.

use serde::{Deserialize, Serialize};

use crate::model::{
    Answer, AssignmentId, ClientId, ClientRequest, FunctionId, IssueId, LogicalTime, MicrotaskId,
    MicrotaskKind, Notification, Origin, Question, ReviewDecision, Signature, Submission,
    SubmissionId, WorkerId,
};
use crate::scheduler::AssignmentPolicy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProjectEvent {
    /// Dense, starting at 1.
    pub sequence: u64,
    /// Every event appended by one command shares a batch number.
    pub batch: u64,
    pub timestamp: LogicalTime,
    pub kind: EventKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum AwardReason {
    ImplementerAward { stars: u8 },
    ReviewerAward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase")]
pub enum EventKind {
    #[serde(rename_all = "camelCase")]
    ProjectCreated { client: ClientId, request: ClientRequest, policy: AssignmentPolicy },
    #[serde(rename_all = "camelCase")]
    FunctionCreated {
        function_id: FunctionId,
        name: String,
        description: String,
        signature: Signature,
        origin: Origin,
    },
    #[serde(rename_all = "camelCase")]
    MicrotaskGenerated { microtask_id: MicrotaskId, kind: MicrotaskKind },
    #[serde(rename_all = "camelCase")]
    MicrotaskAssigned {
        microtask_id: MicrotaskId,
        assignment: AssignmentId,
        worker: WorkerId,
        deadline: LogicalTime,
    },
    #[serde(rename_all = "camelCase")]
    MicrotaskSkipped { microtask_id: MicrotaskId, assignment: AssignmentId, worker: WorkerId },
    #[serde(rename_all = "camelCase")]
    MicrotaskExpired { microtask_id: MicrotaskId, assignment: AssignmentId, worker: WorkerId },
    #[serde(rename_all = "camelCase")]
    SubmissionReceived { submission: Submission },
    #[serde(rename_all = "camelCase")]
    ReviewRecorded { review_microtask_id: MicrotaskId, decision: ReviewDecision },
    #[serde(rename_all = "camelCase")]
    ContributionApplied { function_id: FunctionId, submission_id: SubmissionId, version: u64 },
    #[serde(rename_all = "camelCase")]
    ReworkRequested { function_id: FunctionId, submission_id: SubmissionId, feedback: String },
    #[serde(rename_all = "camelCase")]
    IssueOpened {
        issue_id: IssueId,
        function_id: FunctionId,
        submission_id: SubmissionId,
        reporter: WorkerId,
        text: String,
    },
    #[serde(rename_all = "camelCase")]
    IssueResolved {
        issue_id: IssueId,
        function_id: FunctionId,
        description: String,
        signature: Signature,
    },
    #[serde(rename_all = "camelCase")]
    FunctionCompleted { function_id: FunctionId },
    #[serde(rename_all = "camelCase")]
    QuestionPosted { question: Question },
    #[serde(rename_all = "camelCase")]
    AnswerPosted { answer: Answer },
    #[serde(rename_all = "camelCase")]
    NotificationEmitted { notification: Notification },
    #[serde(rename_all = "camelCase")]
    ScoreAwarded { worker: WorkerId, points: u32, reason: AwardReason },
    #[serde(rename_all = "camelCase")]
    ProjectPublished { location: String, content_hash: String },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::ProjectCreated { .. } => "ProjectCreated",
            EventKind::FunctionCreated { .. } => "FunctionCreated",
            EventKind::MicrotaskGenerated { .. } => "MicrotaskGenerated",
            EventKind::MicrotaskAssigned { .. } => "MicrotaskAssigned",
            EventKind::MicrotaskSkipped { .. } => "MicrotaskSkipped",
            EventKind::MicrotaskExpired { .. } => "MicrotaskExpired",
            EventKind::SubmissionReceived { .. } => "SubmissionReceived",
            EventKind::ReviewRecorded { .. } => "ReviewRecorded",
            EventKind::ContributionApplied { .. } => "ContributionApplied",
            EventKind::ReworkRequested { .. } => "ReworkRequested",
            EventKind::IssueOpened { .. } => "IssueOpened",
            EventKind::IssueResolved { .. } => "IssueResolved",
            EventKind::FunctionCompleted { .. } => "FunctionCompleted",
            EventKind::QuestionPosted { .. } => "QuestionPosted",
            EventKind::AnswerPosted { .. } => "AnswerPosted",
            EventKind::NotificationEmitted { .. } => "NotificationEmitted",
            EventKind::ScoreAwarded { .. } => "ScoreAwarded",
            EventKind::ProjectPublished { .. } => "ProjectPublished",
        }
    }
}
