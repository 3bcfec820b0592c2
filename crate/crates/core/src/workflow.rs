//! Microtask generation and chaining.
//!
//! Handlers are pure: they read a [`ProjectState`] snapshot and return the
//! events a command produces. [`Project`] pairs the log with its folded state
//! and appends each command's events as one batch.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::event::{AwardReason, EventKind, ProjectEvent};
use crate::model::{
    Answer, AssignmentId, ClientId, ClientRequest, Contribution, FunctionId, FunctionState,
    IssueId, IssueResolution, LogicalTime, MicrotaskKind, MicrotaskState, Notification,
    NotificationKind, Origin, Question, QuestionId, ReviewDecision, ReviewOutcome, Submission,
    SubmissionId, SubmissionPayload, TestKind, WorkerId,
};
use crate::sandbox::TestRunReport;
use crate::scheduler::{self, AssignmentPolicy, FetchOutcome};
use crate::scoring::points_for;
use crate::state::{ApplyError, AssignmentStatus, ProjectState};
use crate::validate::{
    validate_client_request, validate_signature, AdtRegistry, Violation, RESERVED_NAMES,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CommandError {
    #[error("request is invalid ({} violations)", .0.len())]
    Invalid(Vec<Violation>),
    #[error("assignment {0} is not live for this worker")]
    StaleAssignment(AssignmentId),
    #[error("worker {worker} already holds assignment {assignment}")]
    AlreadyAssigned { worker: WorkerId, assignment: AssignmentId },
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("not authorized: {0}")]
    Unauthorized(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CommandError {
    fn invalid(path: &str, message: impl Into<String>) -> Self {
        CommandError::Invalid(vec![Violation::new(path, message)])
    }
}

/// Events that start a project: the project itself, then one function and
/// one IFB microtask per endpoint.
pub fn init_project(
    client: ClientId,
    request: ClientRequest,
    policy: AssignmentPolicy,
) -> Result<Vec<EventKind>, CommandError> {
    let violations = validate_client_request(&request);
    if !violations.is_empty() {
        return Err(CommandError::Invalid(violations));
    }
    policy.validate().map_err(|e| CommandError::invalid("policy", e.to_string()))?;

    let mut functions = crate::state::IdCounters::default().functions();
    let mut microtasks = crate::state::IdCounters::default().microtasks();
    let mut out = vec![EventKind::ProjectCreated { client, request: request.clone(), policy }];
    let mut created = Vec::new();
    for ep in &request.endpoints {
        let function_id = functions.next();
        created.push(function_id);
        out.push(EventKind::FunctionCreated {
            function_id,
            name: ep.function_name.clone(),
            description: ep.description.clone(),
            signature: ep.signature(),
            origin: Origin::ClientEndpoint,
        });
    }
    for function_id in created {
        out.push(EventKind::MicrotaskGenerated {
            microtask_id: microtasks.next(),
            kind: MicrotaskKind::ImplementFunctionBehavior { function_id, rework_feedback: None },
        });
    }
    Ok(out)
}

/// Stages an IFB submission: a Review for contributions and completion
/// claims, or an issue that halts the function.
pub fn handle_ifb_submission(
    state: &ProjectState,
    submission: &Submission,
    now: LogicalTime,
) -> Result<Vec<EventKind>, CommandError> {
    let (microtask_id, _) = state.live_assignment(&submission.worker, submission.assignment, now)?;
    let task = &state.microtasks[&microtask_id];
    let function_id = match &task.kind {
        MicrotaskKind::ImplementFunctionBehavior { function_id, .. } => *function_id,
        MicrotaskKind::Review { .. } => {
            return Err(CommandError::Conflict(format!("{microtask_id} is a review microtask")))
        }
    };
    if submission.microtask_id != microtask_id || submission.function_id != function_id {
        return Err(CommandError::Conflict("submission does not match its assignment".into()));
    }
    let function = state
        .functions
        .get(&function_id)
        .ok_or_else(|| CommandError::NotFound(function_id.to_string()))?;
    if function.state != FunctionState::AwaitingWork {
        return Err(CommandError::Conflict(format!("function {} is not awaiting work", function.name)));
    }

    let mut out = vec![EventKind::SubmissionReceived { submission: submission.clone() }];
    match &submission.payload {
        SubmissionPayload::IssueReport { text } => {
            if text.trim().is_empty() {
                return Err(CommandError::invalid("payload.text", "issue report text must be nonempty"));
            }
            out.push(EventKind::IssueOpened {
                issue_id: state.next_ids.issues().next(),
                function_id,
                submission_id: submission.id,
                reporter: submission.worker.clone(),
                text: text.clone(),
            });
        }
        SubmissionPayload::MarkComplete => {
            out.push(EventKind::MicrotaskGenerated {
                microtask_id: state.next_ids.microtasks().next(),
                kind: MicrotaskKind::Review { submission_id: submission.id, function_id },
            });
        }
        SubmissionPayload::BehaviorContribution(contribution) => {
            check_contribution(state, function.signature.arity(), contribution)?;
            let mut microtasks = state.next_ids.microtasks();
            let mut functions = state.next_ids.functions();
            out.push(EventKind::MicrotaskGenerated {
                microtask_id: microtasks.next(),
                kind: MicrotaskKind::Review { submission_id: submission.id, function_id },
            });
            for nf in &contribution.new_functions {
                let new_id = functions.next();
                out.push(EventKind::FunctionCreated {
                    function_id: new_id,
                    name: nf.name.clone(),
                    description: nf.description.clone(),
                    signature: nf.signature.clone(),
                    origin: Origin::CrowdCreated { creator: submission.worker.clone(), parent: function_id },
                });
                out.push(EventKind::MicrotaskGenerated {
                    microtask_id: microtasks.next(),
                    kind: MicrotaskKind::ImplementFunctionBehavior { function_id: new_id, rework_feedback: None },
                });
            }
        }
    }
    Ok(out)
}

fn check_contribution(
    state: &ProjectState,
    arity: usize,
    contribution: &Contribution,
) -> Result<(), CommandError> {
    let mut violations = Vec::new();
    let mut test_ids = HashSet::new();
    for test in &contribution.tests_added {
        let path = format!("testsAdded.{}", test.id);
        if test.id.0.trim().is_empty() {
            violations.push(Violation::new(&path, "test id must be nonempty"));
        }
        if !test_ids.insert(&test.id) {
            violations.push(Violation::new(&path, "duplicate test id"));
        }
        if let TestKind::IoPair { inputs, expected_output } = &test.kind {
            if inputs.len() != arity {
                violations.push(Violation::new(
                    &path,
                    format!("io pair has {} inputs but the function takes {arity}", inputs.len()),
                ));
            }
            if inputs.iter().chain([expected_output]).any(|v| v.canonicalize().is_err()) {
                violations.push(Violation::new(&path, "values must be finite"));
            }
        }
    }
    let mut stub_keys = HashSet::new();
    for stub in &contribution.stubs_added {
        let path = format!("stubsAdded.{}", stub.callee_name);
        if crate::value::canonical_tuple(&stub.argument_tuple).is_err()
            || stub.return_value.canonicalize().is_err()
        {
            violations.push(Violation::new(&path, "stub values must be finite"));
        } else if !stub_keys.insert(stub.key()) {
            violations.push(Violation::new(&path, "duplicate stub for the same arguments"));
        }
    }
    let registry = registry_of(state);
    let mut new_names = HashSet::new();
    for nf in &contribution.new_functions {
        let path = format!("newFunctions.{}", nf.name);
        if !crate::model::is_identifier(&nf.name) {
            violations.push(Violation::new(&path, format!("`{}` is not an identifier", nf.name)));
        } else if RESERVED_NAMES.contains(&nf.name.as_str()) {
            violations.push(Violation::new(&path, "name is reserved by the persistence API"));
        }
        if state.function_by_name(&nf.name).is_some() || !new_names.insert(nf.name.as_str()) {
            violations.push(Violation::new(&path, format!("function `{}` already exists", nf.name)));
        }
        if nf.description.trim().is_empty() {
            violations.push(Violation::new(&path, "description must be nonempty"));
        }
        violations.extend(validate_signature(&path, &nf.signature, &registry));
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(CommandError::Invalid(violations))
    }
}

fn registry_of(state: &ProjectState) -> AdtRegistry {
    state.request.as_ref().map(|r| AdtRegistry::new(&r.adts)).unwrap_or_default()
}

/// Records a review. Both outcomes apply the contribution and award points;
/// acceptance continues (or completes) the function, rejection generates a
/// rework IFB carrying the feedback.
pub fn handle_review_submission(
    state: &ProjectState,
    decision: &ReviewDecision,
    now: LogicalTime,
) -> Result<Vec<EventKind>, CommandError> {
    let outcome = decision.validate().map_err(|e| CommandError::invalid("stars", e.to_string()))?;
    let review_task = state
        .microtasks
        .values()
        .find(|t| {
            matches!(t.kind, MicrotaskKind::Review { submission_id, .. } if submission_id == decision.submission_id)
                && t.is_live()
        })
        .ok_or_else(|| CommandError::NotFound(format!("pending review of {}", decision.submission_id)))?;
    match &review_task.state {
        MicrotaskState::Assigned { worker, deadline, assignment, .. } => {
            if worker != &decision.reviewer || now >= *deadline {
                return Err(CommandError::StaleAssignment(*assignment));
            }
        }
        _ => return Err(CommandError::Conflict(format!("review {} is not assigned", review_task.id))),
    }
    let submission = &state.submissions[&decision.submission_id];
    let function = &state.functions[&submission.function_id];
    let function_id = function.id;

    let mut notes = state.next_ids.notifications();
    let notification = EventKind::NotificationEmitted {
        notification: Notification {
            id: notes.next(),
            recipient: submission.worker.clone(),
            kind: NotificationKind::ReviewReceived {
                submission_id: submission.id,
                stars: decision.stars,
                feedback: decision.feedback.clone(),
            },
            read: false,
        },
    };
    let implementer_reason = AwardReason::ImplementerAward { stars: decision.stars };
    let implementer_points =
        points_for(implementer_reason).map_err(|e| CommandError::invalid("stars", e.to_string()))?;
    let reviewer_points = points_for(AwardReason::ReviewerAward).unwrap_or_default();

    let mut out = vec![
        EventKind::ReviewRecorded { review_microtask_id: review_task.id, decision: decision.clone() },
        EventKind::ContributionApplied {
            function_id,
            submission_id: submission.id,
            version: function.version + 1,
        },
        EventKind::ScoreAwarded {
            worker: submission.worker.clone(),
            points: implementer_points,
            reason: implementer_reason,
        },
        EventKind::ScoreAwarded {
            worker: decision.reviewer.clone(),
            points: reviewer_points,
            reason: AwardReason::ReviewerAward,
        },
    ];
    let next_ifb = |feedback: Option<String>| EventKind::MicrotaskGenerated {
        microtask_id: state.next_ids.microtasks().next(),
        kind: MicrotaskKind::ImplementFunctionBehavior { function_id, rework_feedback: feedback },
    };
    match outcome {
        ReviewOutcome::Accepted => {
            out.push(notification);
            if matches!(submission.payload, SubmissionPayload::MarkComplete) {
                out.push(EventKind::FunctionCompleted { function_id });
            } else {
                out.push(next_ifb(None));
            }
        }
        ReviewOutcome::NeedsRevision => {
            let feedback = decision.feedback.clone().unwrap_or_default();
            out.push(EventKind::ReworkRequested {
                function_id,
                submission_id: submission.id,
                feedback: feedback.clone(),
            });
            out.push(next_ifb(Some(feedback)));
            out.push(notification);
        }
    }
    Ok(out)
}

/// Client-side fix for a halted function; work resumes with a fresh IFB.
pub fn resolve_issue(
    state: &ProjectState,
    caller: &ClientId,
    issue_id: IssueId,
    resolution: &IssueResolution,
) -> Result<Vec<EventKind>, CommandError> {
    if state.client.as_ref() != Some(caller) {
        return Err(CommandError::Unauthorized("only the project client may resolve issues".into()));
    }
    let issue = state.issues.get(&issue_id).ok_or_else(|| CommandError::NotFound(issue_id.to_string()))?;
    if issue.resolved {
        return Err(CommandError::Conflict(format!("{issue_id} is already resolved")));
    }
    let function = &state.functions[&issue.function_id];
    let description = resolution.description.clone().unwrap_or_else(|| function.description.clone());
    let signature = resolution.signature.clone().unwrap_or_else(|| function.signature.clone());
    let mut violations = validate_signature("signature", &signature, &registry_of(state));
    if description.trim().is_empty() {
        violations.push(Violation::new("description", "description must be nonempty"));
    }
    if !violations.is_empty() {
        return Err(CommandError::Invalid(violations));
    }
    Ok(vec![
        EventKind::IssueResolved { issue_id, function_id: function.id, description, signature },
        EventKind::MicrotaskGenerated {
            microtask_id: state.next_ids.microtasks().next(),
            kind: MicrotaskKind::ImplementFunctionBehavior { function_id: function.id, rework_feedback: None },
        },
        EventKind::NotificationEmitted {
            notification: Notification {
                id: state.next_ids.notifications().next(),
                recipient: issue.reporter.clone(),
                kind: NotificationKind::IssueResolved { function_id: function.id },
                read: false,
            },
        },
    ])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FunctionStatus {
    pub id: FunctionId,
    pub name: String,
    pub description: String,
    #[serde(flatten)]
    pub state: FunctionState,
    pub version: u64,
    pub endpoint: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LiveCounts {
    pub queued: usize,
    pub assigned: usize,
    pub awaiting_review: usize,
}

impl LiveCounts {
    pub fn total(&self) -> usize {
        self.queued + self.assigned + self.awaiting_review
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProjectStatus {
    pub functions: Vec<FunctionStatus>,
    pub live: LiveCounts,
    pub complete: bool,
}

pub fn project_status(state: &ProjectState) -> ProjectStatus {
    let functions: Vec<_> = state
        .functions
        .values()
        .map(|f| FunctionStatus {
            id: f.id,
            name: f.name.clone(),
            description: f.description.clone(),
            state: f.state,
            version: f.version,
            endpoint: f.is_endpoint(),
        })
        .collect();
    let mut live = LiveCounts::default();
    for task in state.microtasks.values() {
        match task.state {
            MicrotaskState::Queued => live.queued += 1,
            MicrotaskState::Assigned { .. } => live.assigned += 1,
            MicrotaskState::Submitted => live.awaiting_review += 1,
            MicrotaskState::Retired => {}
        }
    }
    let complete = !functions.is_empty()
        && functions.iter().all(|f| f.state == FunctionState::Completed)
        && live.total() == 0;
    ProjectStatus { functions, live, complete }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SubmitOutcome {
    pub submission_id: SubmissionId,
    /// True when the assignment had already been submitted; no events were
    /// appended.
    pub duplicate: bool,
}

/// An event log together with its folded state.
#[derive(Debug, Clone)]
pub struct Project {
    events: Vec<ProjectEvent>,
    state: ProjectState,
}

impl Project {
    pub fn create(
        client: ClientId,
        request: ClientRequest,
        policy: AssignmentPolicy,
        now: LogicalTime,
    ) -> Result<Project, CommandError> {
        let kinds = init_project(client, request, policy)?;
        let mut project = Project { events: vec![], state: ProjectState::default() };
        project.commit(kinds, now)?;
        Ok(project)
    }

    pub fn from_events(events: Vec<ProjectEvent>) -> Result<Project, ApplyError> {
        let state = ProjectState::replay(&events)?;
        Ok(Project { events, state })
    }

    /// Resumes from a snapshot plus the events recorded after it.
    pub fn from_snapshot(
        mut state: ProjectState,
        events: Vec<ProjectEvent>,
    ) -> Result<Project, ApplyError> {
        let from = state.last_sequence;
        for e in events.iter().filter(|e| e.sequence > from) {
            state.apply(e)?;
        }
        Ok(Project { events, state })
    }

    pub fn state(&self) -> &ProjectState {
        &self.state
    }

    pub fn events(&self) -> &[ProjectEvent] {
        &self.events
    }

    pub fn into_events(self) -> Vec<ProjectEvent> {
        self.events
    }

    pub fn status(&self) -> ProjectStatus {
        project_status(&self.state)
    }

    /// Appends `kinds` as one batch. An empty batch appends nothing.
    pub fn commit(&mut self, kinds: Vec<EventKind>, now: LogicalTime) -> Result<Vec<ProjectEvent>, CommandError> {
        if kinds.is_empty() {
            return Ok(vec![]);
        }
        let batch = self.state.last_batch + 1;
        let timestamp = now.max(self.state.last_timestamp);
        let start = self.events.len();
        for kind in kinds {
            let event = ProjectEvent { sequence: self.state.last_sequence + 1, batch, timestamp, kind };
            if let Err(e) = self.state.apply(&event) {
                // Roll back the partial batch.
                self.events.truncate(start);
                self.state = ProjectState::replay(&self.events)
                    .map_err(|e| CommandError::Internal(e.to_string()))?;
                return Err(CommandError::Internal(e.to_string()));
            }
            self.events.push(event);
        }
        Ok(self.events[start..].to_vec())
    }

    pub fn fetch(&mut self, worker: &WorkerId, now: LogicalTime) -> Result<FetchOutcome, CommandError> {
        let (outcome, kinds) = scheduler::fetch(&self.state, worker, now)?;
        self.commit(kinds, now)?;
        Ok(outcome)
    }

    pub fn skip(
        &mut self,
        worker: &WorkerId,
        assignment: AssignmentId,
        now: LogicalTime,
    ) -> Result<Vec<ProjectEvent>, CommandError> {
        let kinds = scheduler::skip(&self.state, worker, assignment, now)?;
        self.commit(kinds, now)
    }

    pub fn tick(&mut self, now: LogicalTime) -> Result<Vec<ProjectEvent>, CommandError> {
        let kinds = scheduler::tick(&self.state, now);
        self.commit(kinds, now)
    }

    /// An assignment that already produced a result returns that result again.
    fn previous_result(&self, worker: &WorkerId, assignment: AssignmentId) -> Option<SubmissionId> {
        let record = self.state.assignments.get(&assignment)?;
        (record.status == AssignmentStatus::Submitted && &record.worker == worker)
            .then_some(record.result)
            .flatten()
    }

    pub fn submit_work(
        &mut self,
        worker: &WorkerId,
        assignment: AssignmentId,
        payload: SubmissionPayload,
        test_report: Option<TestRunReport>,
        now: LogicalTime,
    ) -> Result<SubmitOutcome, CommandError> {
        if let Some(submission_id) = self.previous_result(worker, assignment) {
            return Ok(SubmitOutcome { submission_id, duplicate: true });
        }
        let (microtask_id, _) = self.state.live_assignment(worker, assignment, now)?;
        let function_id = self.state.microtasks[&microtask_id].kind.function_id();
        let base_version = self.state.functions.get(&function_id).map(|f| f.version).unwrap_or_default();
        let submission = Submission {
            id: self.state.next_ids.submissions().next(),
            microtask_id,
            assignment,
            worker: worker.clone(),
            function_id,
            base_version,
            payload,
            test_report,
        };
        let kinds = handle_ifb_submission(&self.state, &submission, now)?;
        self.commit(kinds, now)?;
        Ok(SubmitOutcome { submission_id: submission.id, duplicate: false })
    }

    pub fn submit_review(
        &mut self,
        worker: &WorkerId,
        assignment: AssignmentId,
        stars: u8,
        feedback: Option<String>,
        now: LogicalTime,
    ) -> Result<SubmitOutcome, CommandError> {
        if let Some(submission_id) = self.previous_result(worker, assignment) {
            return Ok(SubmitOutcome { submission_id, duplicate: true });
        }
        let (microtask_id, _) = self.state.live_assignment(worker, assignment, now)?;
        let submission_id = match self.state.microtasks[&microtask_id].kind {
            MicrotaskKind::Review { submission_id, .. } => submission_id,
            MicrotaskKind::ImplementFunctionBehavior { .. } => {
                return Err(CommandError::Conflict(format!("{microtask_id} is not a review microtask")))
            }
        };
        let feedback = feedback.filter(|f| !f.trim().is_empty());
        let decision = ReviewDecision { submission_id, reviewer: worker.clone(), stars, feedback };
        let kinds = handle_review_submission(&self.state, &decision, now)?;
        self.commit(kinds, now)?;
        Ok(SubmitOutcome { submission_id, duplicate: false })
    }

    pub fn resolve_issue(
        &mut self,
        caller: &ClientId,
        issue: IssueId,
        resolution: &IssueResolution,
        now: LogicalTime,
    ) -> Result<Vec<ProjectEvent>, CommandError> {
        let kinds = resolve_issue(&self.state, caller, issue, resolution)?;
        self.commit(kinds, now)
    }

    pub fn post_question(
        &mut self,
        worker: &WorkerId,
        text: &str,
        now: LogicalTime,
    ) -> Result<Question, CommandError> {
        if text.trim().is_empty() {
            return Err(CommandError::invalid("text", "question text must be nonempty"));
        }
        let question = Question {
            id: self.state.next_ids.questions().next(),
            author: worker.clone(),
            text: text.to_string(),
            timestamp: now.max(self.state.last_timestamp),
        };
        self.commit(vec![EventKind::QuestionPosted { question: question.clone() }], now)?;
        Ok(question)
    }

    pub fn post_answer(
        &mut self,
        worker: &WorkerId,
        question_id: QuestionId,
        text: &str,
        now: LogicalTime,
    ) -> Result<Answer, CommandError> {
        if !self.state.questions.contains_key(&question_id) {
            return Err(CommandError::NotFound(question_id.to_string()));
        }
        if text.trim().is_empty() {
            return Err(CommandError::invalid("text", "answer text must be nonempty"));
        }
        let answer = Answer {
            id: self.state.next_ids.answers().next(),
            question_id,
            author: worker.clone(),
            text: text.to_string(),
            timestamp: now.max(self.state.last_timestamp),
        };
        self.commit(vec![EventKind::AnswerPosted { answer: answer.clone() }], now)?;
        Ok(answer)
    }

    /// Questions in timestamp order, each with its answers in timestamp order.
    pub fn threads(&self) -> Vec<QaThread> {
        let mut questions: Vec<_> = self.state.questions.values().cloned().collect();
        questions.sort_by_key(|q| (q.timestamp, q.id));
        questions
            .into_iter()
            .map(|question| {
                let mut answers: Vec<_> = self
                    .state
                    .answers
                    .values()
                    .filter(|a| a.question_id == question.id)
                    .cloned()
                    .collect();
                answers.sort_by_key(|a| (a.timestamp, a.id));
                QaThread { question, answers }
            })
            .collect()
    }

    pub fn record_publication(
        &mut self,
        caller: &ClientId,
        location: String,
        content_hash: String,
        now: LogicalTime,
    ) -> Result<Vec<ProjectEvent>, CommandError> {
        if self.state.client.as_ref() != Some(caller) {
            return Err(CommandError::Unauthorized("only the project client may publish".into()));
        }
        self.commit(vec![EventKind::ProjectPublished { location, content_hash }], now)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct QaThread {
    pub question: Question,
    pub answers: Vec<Answer>,
}
