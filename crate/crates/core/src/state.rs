//! Project state as a pure fold over the event log.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::event::{EventKind, ProjectEvent};
use crate::model::{
    Answer, AnswerId, AssignmentId, ClientId, ClientRequest, FunctionArtifact, FunctionId,
    FunctionState, Issue, IssueId, LogicalTime, Microtask, MicrotaskId, MicrotaskKind,
    MicrotaskState, Notification, NotificationId, NotificationKind, Question, QuestionId,
    ReviewDecision, Submission, SubmissionId, SubmissionPayload, WorkerId,
};
use crate::scheduler::{AssignmentPolicy, Cooldown, MicrotaskQueue};
use crate::scoring::ScoreLedger;
use crate::workflow::CommandError;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("event {sequence} ({kind}) cannot be applied: {reason}")]
pub struct ApplyError {
    pub sequence: u64,
    pub kind: &'static str,
    pub reason: String,
}

/// Highest id of each kind seen so far.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct IdCounters {
    pub function: u64,
    pub microtask: u64,
    pub assignment: u64,
    pub submission: u64,
    pub issue: u64,
    pub question: u64,
    pub answer: u64,
    pub notification: u64,
}

/// Hands out consecutive ids within one command batch.
pub struct Mint<T> {
    next: u64,
    make: fn(u64) -> T,
}

impl<T> Mint<T> {
    #[allow(clippy::should_implement_trait)]
    pub fn next(&mut self) -> T {
        self.next += 1;
        (self.make)(self.next)
    }
}

impl IdCounters {
    pub fn assignment(&self) -> AssignmentId {
        AssignmentId(self.assignment + 1)
    }

    pub fn functions(&self) -> Mint<FunctionId> {
        Mint { next: self.function, make: FunctionId }
    }

    pub fn microtasks(&self) -> Mint<MicrotaskId> {
        Mint { next: self.microtask, make: MicrotaskId }
    }

    pub fn submissions(&self) -> Mint<SubmissionId> {
        Mint { next: self.submission, make: SubmissionId }
    }

    pub fn issues(&self) -> Mint<IssueId> {
        Mint { next: self.issue, make: IssueId }
    }

    pub fn questions(&self) -> Mint<QuestionId> {
        Mint { next: self.question, make: QuestionId }
    }

    pub fn answers(&self) -> Mint<AnswerId> {
        Mint { next: self.answer, make: AnswerId }
    }

    pub fn notifications(&self) -> Mint<NotificationId> {
        Mint { next: self.notification, make: NotificationId }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum AssignmentStatus {
    Live,
    Skipped,
    Expired,
    Submitted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AssignmentRecord {
    pub microtask_id: MicrotaskId,
    pub worker: WorkerId,
    pub assigned_at: LogicalTime,
    pub deadline: LogicalTime,
    pub status: AssignmentStatus,
    /// For completed assignments: the submission produced (IFB) or reviewed
    /// (Review).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<SubmissionId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Publication {
    pub location: String,
    pub content_hash: String,
    pub timestamp: LogicalTime,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProjectState {
    pub client: Option<ClientId>,
    pub request: Option<ClientRequest>,
    pub policy: AssignmentPolicy,
    pub functions: BTreeMap<FunctionId, FunctionArtifact>,
    pub microtasks: BTreeMap<MicrotaskId, Microtask>,
    pub queue: MicrotaskQueue,
    /// Worker to the microtask they currently hold.
    pub held: BTreeMap<WorkerId, MicrotaskId>,
    pub assignments: BTreeMap<AssignmentId, AssignmentRecord>,
    pub cooldowns: BTreeMap<WorkerId, Vec<Cooldown>>,
    pub submissions: BTreeMap<SubmissionId, Submission>,
    pub reviews: BTreeMap<SubmissionId, ReviewDecision>,
    pub issues: BTreeMap<IssueId, Issue>,
    pub questions: BTreeMap<QuestionId, Question>,
    pub answers: BTreeMap<AnswerId, Answer>,
    pub notifications: Vec<Notification>,
    pub ledger: ScoreLedger,
    pub publications: Vec<Publication>,
    pub next_ids: IdCounters,
    pub last_sequence: u64,
    pub last_batch: u64,
    pub last_timestamp: LogicalTime,
}

impl ProjectState {
    /// Folds a complete log. Stops at the first event that cannot apply.
    pub fn replay<'a>(events: impl IntoIterator<Item = &'a ProjectEvent>) -> Result<Self, ApplyError> {
        let mut state = ProjectState::default();
        for event in events {
            state.apply(event)?;
        }
        Ok(state)
    }

    pub fn published(&self) -> bool {
        !self.publications.is_empty()
    }

    pub fn function_by_name(&self, name: &str) -> Option<&FunctionArtifact> {
        self.functions.values().find(|f| f.name == name)
    }

    pub fn held_assignment(&self, worker: &WorkerId) -> Option<AssignmentId> {
        let id = self.held.get(worker)?;
        match &self.microtasks.get(id)?.state {
            MicrotaskState::Assigned { assignment, .. } => Some(*assignment),
            _ => None,
        }
    }

    /// Live microtasks referencing a function, directly (IFB) or through the
    /// submission under review.
    pub fn live_microtasks_for(&self, function: FunctionId) -> usize {
        self.microtasks
            .values()
            .filter(|t| t.is_live() && t.kind.function_id() == function)
            .count()
    }

    /// Resolves an assignment that `worker` claims to hold. Errors if it is
    /// unknown, held by someone else, no longer live, or past its deadline.
    pub fn live_assignment(
        &self,
        worker: &WorkerId,
        assignment: AssignmentId,
        now: LogicalTime,
    ) -> Result<(MicrotaskId, &AssignmentRecord), CommandError> {
        let record =
            self.assignments.get(&assignment).ok_or(CommandError::StaleAssignment(assignment))?;
        if &record.worker != worker || record.status != AssignmentStatus::Live || now >= record.deadline {
            return Err(CommandError::StaleAssignment(assignment));
        }
        Ok((record.microtask_id, record))
    }

    pub fn apply(&mut self, event: &ProjectEvent) -> Result<(), ApplyError> {
        let fail = |reason: String| ApplyError { sequence: event.sequence, kind: event.kind.name(), reason };
        if event.sequence != self.last_sequence + 1 {
            return Err(fail(format!("expected sequence {}", self.last_sequence + 1)));
        }
        self.apply_relaxed(event)
    }

    /// Applies an event without requiring it to follow the previous sequence
    /// number. Used by the invariant checker so that a gap is reported rather
    /// than ending the replay.
    pub(crate) fn apply_relaxed(&mut self, event: &ProjectEvent) -> Result<(), ApplyError> {
        let fail = |reason: String| ApplyError { sequence: event.sequence, kind: event.kind.name(), reason };
        self.apply_kind(&event.kind, event.timestamp, event.sequence).map_err(fail)?;
        self.last_sequence = event.sequence;
        self.last_batch = event.batch;
        self.last_timestamp = event.timestamp;
        Ok(())
    }

    fn apply_kind(&mut self, kind: &EventKind, at: LogicalTime, sequence: u64) -> Result<(), String> {
        match kind {
            EventKind::ProjectCreated { client, request, policy } => {
                if self.request.is_some() {
                    return Err("project already created".into());
                }
                self.client = Some(client.clone());
                self.request = Some(request.clone());
                self.policy = policy.clone();
            }
            EventKind::FunctionCreated { function_id, name, description, signature, origin } => {
                if self.functions.contains_key(function_id) {
                    return Err(format!("function {function_id} already exists"));
                }
                self.next_ids.function = self.next_ids.function.max(function_id.0);
                self.functions.insert(
                    *function_id,
                    FunctionArtifact {
                        id: *function_id,
                        name: name.clone(),
                        description: description.clone(),
                        signature: signature.clone(),
                        code: String::new(),
                        tests: vec![],
                        stubs: vec![],
                        origin: origin.clone(),
                        state: FunctionState::AwaitingWork,
                        version: 0,
                    },
                );
            }
            EventKind::MicrotaskGenerated { microtask_id, kind } => {
                if self.microtasks.contains_key(microtask_id) {
                    return Err(format!("microtask {microtask_id} already exists"));
                }
                if !self.functions.contains_key(&kind.function_id()) {
                    return Err(format!("unknown function {}", kind.function_id()));
                }
                if let MicrotaskKind::Review { submission_id, .. } = kind {
                    let sub = self
                        .submissions
                        .get(submission_id)
                        .ok_or_else(|| format!("unknown submission {submission_id}"))?;
                    // The IFB stays live until its review takes over the lock.
                    if let Some(ifb) = self.microtasks.get_mut(&sub.microtask_id) {
                        ifb.state = MicrotaskState::Retired;
                    }
                }
                self.next_ids.microtask = self.next_ids.microtask.max(microtask_id.0);
                self.queue.enqueue(*microtask_id).map_err(|e| e.to_string())?;
                self.microtasks.insert(
                    *microtask_id,
                    Microtask {
                        id: *microtask_id,
                        kind: kind.clone(),
                        state: MicrotaskState::Queued,
                        created_at: at,
                    },
                );
            }
            EventKind::MicrotaskAssigned { microtask_id, assignment, worker, deadline } => {
                if self.held.contains_key(worker) {
                    return Err(format!("worker {worker} already holds an assignment"));
                }
                let task = self
                    .microtasks
                    .get_mut(microtask_id)
                    .ok_or_else(|| format!("unknown microtask {microtask_id}"))?;
                if task.state != MicrotaskState::Queued || !self.queue.remove(*microtask_id) {
                    return Err(format!("microtask {microtask_id} is not queued"));
                }
                task.state = MicrotaskState::Assigned {
                    worker: worker.clone(),
                    assignment: *assignment,
                    assigned_at: at,
                    deadline: *deadline,
                    warned: false,
                };
                self.held.insert(worker.clone(), *microtask_id);
                self.next_ids.assignment = self.next_ids.assignment.max(assignment.0);
                self.assignments.insert(
                    *assignment,
                    AssignmentRecord {
                        microtask_id: *microtask_id,
                        worker: worker.clone(),
                        assigned_at: at,
                        deadline: *deadline,
                        status: AssignmentStatus::Live,
                        result: None,
                    },
                );
                // Taking any assignment counts down this worker's cooldowns;
                // another worker taking the item clears everyone else's.
                if let Some(list) = self.cooldowns.get_mut(worker) {
                    for c in list.iter_mut() {
                        c.remaining = c.remaining.saturating_sub(1);
                    }
                    list.retain(|c| c.remaining > 0);
                }
                for (other, list) in self.cooldowns.iter_mut() {
                    if other != worker {
                        list.retain(|c| c.microtask_id != *microtask_id);
                    }
                }
                self.cooldowns.retain(|_, list| !list.is_empty());
            }
            EventKind::MicrotaskSkipped { microtask_id, assignment, worker } => {
                self.release(*microtask_id, *assignment, worker, AssignmentStatus::Skipped)?;
            }
            EventKind::MicrotaskExpired { microtask_id, assignment, worker } => {
                self.release(*microtask_id, *assignment, worker, AssignmentStatus::Expired)?;
            }
            EventKind::SubmissionReceived { submission } => {
                if self.submissions.contains_key(&submission.id) {
                    return Err(format!("submission {} already exists", submission.id));
                }
                self.finish_assignment(submission.microtask_id, submission.assignment, &submission.worker, submission.id)?;
                self.next_ids.submission = self.next_ids.submission.max(submission.id.0);
                self.submissions.insert(submission.id, submission.clone());
            }
            EventKind::ReviewRecorded { review_microtask_id, decision } => {
                if !self.submissions.contains_key(&decision.submission_id) {
                    return Err(format!("unknown submission {}", decision.submission_id));
                }
                if self.reviews.contains_key(&decision.submission_id) {
                    return Err(format!("submission {} already reviewed", decision.submission_id));
                }
                let assignment = match self.microtasks.get(review_microtask_id).map(|t| &t.state) {
                    Some(MicrotaskState::Assigned { assignment, .. }) => *assignment,
                    _ => return Err(format!("review microtask {review_microtask_id} is not assigned")),
                };
                self.finish_assignment(*review_microtask_id, assignment, &decision.reviewer, decision.submission_id)?;
                if let Some(task) = self.microtasks.get_mut(review_microtask_id) {
                    task.state = MicrotaskState::Retired;
                }
                self.reviews.insert(decision.submission_id, decision.clone());
            }
            EventKind::ContributionApplied { function_id, submission_id, version } => {
                let sub = self
                    .submissions
                    .get(submission_id)
                    .ok_or_else(|| format!("unknown submission {submission_id}"))?;
                let f = self
                    .functions
                    .get_mut(function_id)
                    .ok_or_else(|| format!("unknown function {function_id}"))?;
                if *version != f.version + 1 {
                    return Err(format!("version {version} does not follow {}", f.version));
                }
                if let SubmissionPayload::BehaviorContribution(c) = &sub.payload {
                    if let Some(code) = &c.code {
                        f.code = code.clone();
                    }
                    for test in &c.tests_added {
                        match f.tests.iter_mut().find(|t| t.id == test.id) {
                            Some(slot) => *slot = test.clone(),
                            None => f.tests.push(test.clone()),
                        }
                    }
                    for stub in &c.stubs_added {
                        let key = stub.key();
                        match f.stubs.iter_mut().find(|s| s.key() == key) {
                            Some(slot) => *slot = stub.clone(),
                            None => f.stubs.push(stub.clone()),
                        }
                    }
                }
                f.version = *version;
            }
            EventKind::ReworkRequested { function_id, .. } => {
                if !self.functions.contains_key(function_id) {
                    return Err(format!("unknown function {function_id}"));
                }
            }
            EventKind::IssueOpened { issue_id, function_id, submission_id, reporter, text } => {
                let sub = self
                    .submissions
                    .get(submission_id)
                    .ok_or_else(|| format!("unknown submission {submission_id}"))?;
                if let Some(task) = self.microtasks.get_mut(&sub.microtask_id) {
                    task.state = MicrotaskState::Retired;
                }
                let f = self
                    .functions
                    .get_mut(function_id)
                    .ok_or_else(|| format!("unknown function {function_id}"))?;
                f.state = FunctionState::Halted { issue: *issue_id };
                self.next_ids.issue = self.next_ids.issue.max(issue_id.0);
                self.issues.insert(
                    *issue_id,
                    Issue {
                        id: *issue_id,
                        function_id: *function_id,
                        submission_id: *submission_id,
                        reporter: reporter.clone(),
                        text: text.clone(),
                        resolved: false,
                    },
                );
            }
            EventKind::IssueResolved { issue_id, function_id, description, signature } => {
                let issue =
                    self.issues.get_mut(issue_id).ok_or_else(|| format!("unknown issue {issue_id}"))?;
                if issue.resolved {
                    return Err(format!("issue {issue_id} already resolved"));
                }
                issue.resolved = true;
                let f = self
                    .functions
                    .get_mut(function_id)
                    .ok_or_else(|| format!("unknown function {function_id}"))?;
                f.description = description.clone();
                f.signature = signature.clone();
                f.state = FunctionState::AwaitingWork;
                // An endpoint's contract changes with it.
                if f.is_endpoint() {
                    let name = f.name.clone();
                    if let Some(ep) = self
                        .request
                        .as_mut()
                        .and_then(|r| r.endpoints.iter_mut().find(|e| e.function_name == name))
                    {
                        ep.description = description.clone();
                        ep.params = signature.params.clone();
                        ep.return_type = signature.return_type.clone();
                    }
                }
            }
            EventKind::FunctionCompleted { function_id } => {
                let f = self
                    .functions
                    .get_mut(function_id)
                    .ok_or_else(|| format!("unknown function {function_id}"))?;
                f.state = FunctionState::Completed;
            }
            EventKind::QuestionPosted { question } => {
                self.next_ids.question = self.next_ids.question.max(question.id.0);
                self.questions.insert(question.id, question.clone());
            }
            EventKind::AnswerPosted { answer } => {
                if !self.questions.contains_key(&answer.question_id) {
                    return Err(format!("unknown question {}", answer.question_id));
                }
                self.next_ids.answer = self.next_ids.answer.max(answer.id.0);
                self.answers.insert(answer.id, answer.clone());
            }
            EventKind::NotificationEmitted { notification } => {
                if let NotificationKind::TimeWarning { microtask_id, assignment } = &notification.kind {
                    if let Some(Microtask {
                        state: MicrotaskState::Assigned { assignment: held, warned, .. },
                        ..
                    }) = self.microtasks.get_mut(microtask_id)
                    {
                        if held == assignment {
                            *warned = true;
                        }
                    }
                }
                self.next_ids.notification = self.next_ids.notification.max(notification.id.0);
                self.notifications.push(notification.clone());
            }
            EventKind::ScoreAwarded { worker, points, reason } => {
                self.ledger.record(worker.clone(), sequence, *points, *reason);
            }
            EventKind::ProjectPublished { location, content_hash } => {
                self.publications.push(Publication {
                    location: location.clone(),
                    content_hash: content_hash.clone(),
                    timestamp: at,
                });
            }
        }
        Ok(())
    }

    fn release(
        &mut self,
        microtask_id: MicrotaskId,
        assignment: AssignmentId,
        worker: &WorkerId,
        status: AssignmentStatus,
    ) -> Result<(), String> {
        let record = self
            .assignments
            .get_mut(&assignment)
            .ok_or_else(|| format!("unknown assignment {assignment}"))?;
        if record.status != AssignmentStatus::Live || &record.worker != worker || record.microtask_id != microtask_id {
            return Err(format!("assignment {assignment} is not live for {worker}"));
        }
        record.status = status;
        let task = self
            .microtasks
            .get_mut(&microtask_id)
            .ok_or_else(|| format!("unknown microtask {microtask_id}"))?;
        task.state = MicrotaskState::Queued;
        self.held.remove(worker);
        self.queue.enqueue(microtask_id).map_err(|e| e.to_string())?;
        if self.policy.skip_cooldown > 0 {
            let list = self.cooldowns.entry(worker.clone()).or_default();
            list.retain(|c| c.microtask_id != microtask_id);
            list.push(Cooldown { microtask_id, remaining: self.policy.skip_cooldown });
        }
        Ok(())
    }

    fn finish_assignment(
        &mut self,
        microtask_id: MicrotaskId,
        assignment: AssignmentId,
        worker: &WorkerId,
        result: SubmissionId,
    ) -> Result<(), String> {
        let record = self
            .assignments
            .get_mut(&assignment)
            .ok_or_else(|| format!("unknown assignment {assignment}"))?;
        if record.status != AssignmentStatus::Live || &record.worker != worker || record.microtask_id != microtask_id {
            return Err(format!("assignment {assignment} is not live for {worker}"));
        }
        record.status = AssignmentStatus::Submitted;
        record.result = Some(result);
        let task = self
            .microtasks
            .get_mut(&microtask_id)
            .ok_or_else(|| format!("unknown microtask {microtask_id}"))?;
        task.state = MicrotaskState::Submitted;
        self.held.remove(worker);
        Ok(())
    }
}
