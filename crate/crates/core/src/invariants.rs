//! Workflow invariants checked at every prefix of an event log.
//!
//! The checker folds events one at a time and inspects only what each event
//! can have changed, so a full audit stays linear in the log length.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::event::{AwardReason, EventKind, ProjectEvent};
use crate::model::{
    FunctionId, FunctionState, MicrotaskId, MicrotaskKind, MicrotaskState, NotificationKind,
    ReviewDecision, SubmissionId, SubmissionPayload,
};
use crate::state::{AssignmentStatus, ProjectState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Invariant {
    DenseSequence,
    Applies,
    MonotonicTime,
    Locking,
    FunctionLiveness,
    HaltedHasIssue,
    Conservation,
    SelfReview,
    ScoreRange,
    Chaining,
    SingleAssignment,
    ExpiryOnce,
    NoLostMicrotask,
    ReviewNotified,
}

impl fmt::Display for Invariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let text = serde_json::to_value(self).ok();
        f.write_str(text.as_ref().and_then(|v| v.as_str()).unwrap_or("unknown"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Violation {
    /// Sequence of the event after which the invariant failed; 0 for
    /// whole-log checks on an empty log.
    pub sequence: u64,
    pub invariant: Invariant,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{} {}: {}", self.sequence, self.invariant, self.message)
    }
}

/// Whole-log tallies used by the conservation checks and by simulator metrics.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LogCounts {
    pub events: u64,
    pub ifb_submissions: u64,
    pub issue_reports: u64,
    pub reviews_generated: u64,
    pub reviews_recorded: u64,
    pub reviews_accepted: u64,
    pub contributions_applied: u64,
    pub review_notifications: u64,
    pub skips: u64,
    pub expiries: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct InvariantReport {
    pub state: ProjectState,
    pub counts: LogCounts,
    pub violations: Vec<Violation>,
    /// Events folded before the first one that could not be applied.
    pub applied: u64,
}

impl InvariantReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// The current batch as seen so far.
#[derive(Default)]
struct Batch {
    number: u64,
    last_sequence: u64,
    functions: BTreeSet<FunctionId>,
    microtasks: BTreeSet<MicrotaskId>,
    review: Option<ReviewDecision>,
    /// IFBs generated in this batch: (function, carries rework feedback).
    ifbs: Vec<(FunctionId, bool)>,
    completed: BTreeSet<FunctionId>,
    implementer_awards: u32,
    reviewer_awards: u32,
}

struct Checker {
    state: ProjectState,
    by_function: BTreeMap<FunctionId, Vec<MicrotaskId>>,
    counts: LogCounts,
    notified: BTreeMap<SubmissionId, u32>,
    violations: Vec<Violation>,
    batch: Batch,
    expected_sequence: u64,
}

impl Checker {
    fn new() -> Self {
        Checker {
            state: ProjectState::default(),
            by_function: BTreeMap::new(),
            counts: LogCounts::default(),
            notified: BTreeMap::new(),
            violations: vec![],
            batch: Batch::default(),
            expected_sequence: 1,
        }
    }

    fn flag(&mut self, sequence: u64, invariant: Invariant, message: impl Into<String>) {
        self.violations.push(Violation { sequence, invariant, message: message.into() });
    }

    fn live_count(&self, function: FunctionId) -> usize {
        self.by_function
            .get(&function)
            .map(|ids| ids.iter().filter(|id| self.state.microtasks[id].is_live()).count())
            .unwrap_or(0)
    }

    /// Counts every event whether or not it applies, so conservation is a
    /// property of the log text itself.
    fn tally(&mut self, event: &ProjectEvent) {
        let c = &mut self.counts;
        c.events += 1;
        match &event.kind {
            EventKind::SubmissionReceived { submission } => {
                if submission.payload.is_issue() {
                    c.issue_reports += 1;
                } else {
                    c.ifb_submissions += 1;
                }
            }
            EventKind::MicrotaskGenerated { kind: MicrotaskKind::Review { .. }, .. } => c.reviews_generated += 1,
            EventKind::ReviewRecorded { decision, .. } => {
                c.reviews_recorded += 1;
                if decision.stars >= 4 {
                    c.reviews_accepted += 1;
                }
            }
            EventKind::ContributionApplied { .. } => c.contributions_applied += 1,
            EventKind::NotificationEmitted { notification } => {
                if let NotificationKind::ReviewReceived { submission_id, .. } = &notification.kind {
                    c.review_notifications += 1;
                    *self.notified.entry(*submission_id).or_default() += 1;
                }
            }
            EventKind::MicrotaskSkipped { .. } => c.skips += 1,
            EventKind::MicrotaskExpired { .. } => c.expiries += 1,
            _ => {}
        }
    }

    /// Checks that need the state before the event. Returns false when the
    /// event must not be applied.
    fn before(&mut self, event: &ProjectEvent) -> bool {
        let seq = event.sequence;
        if seq != self.expected_sequence {
            self.flag(seq, Invariant::DenseSequence, format!("expected sequence {}", self.expected_sequence));
        }
        self.expected_sequence = seq + 1;
        if event.timestamp < self.state.last_timestamp {
            self.flag(seq, Invariant::MonotonicTime, format!("time {} precedes {}", event.timestamp.0, self.state.last_timestamp.0));
        }
        match &event.kind {
            EventKind::MicrotaskAssigned { worker, microtask_id, .. } => {
                if let Some(held) = self.state.held.get(worker) {
                    let msg = format!("{worker} takes {microtask_id} while holding {held}");
                    self.flag(seq, Invariant::SingleAssignment, msg);
                    return false;
                }
            }
            EventKind::MicrotaskExpired { assignment, .. } => {
                if self.state.assignments.get(assignment).map(|a| a.status) == Some(AssignmentStatus::Expired) {
                    self.flag(seq, Invariant::ExpiryOnce, format!("{assignment} expired twice"));
                    return false;
                }
            }
            EventKind::ReviewRecorded { decision, .. } => {
                if let Some(sub) = self.state.submissions.get(&decision.submission_id) {
                    if !self.state.policy.self_review_allowed && sub.worker == decision.reviewer {
                        let msg = format!("{} reviewed their own submission {}", decision.reviewer, sub.id);
                        self.flag(seq, Invariant::SelfReview, msg);
                    }
                }
            }
            EventKind::ScoreAwarded { worker, points, reason } => self.check_award(seq, worker, *points, *reason),
            _ => {}
        }
        true
    }

    fn check_award(&mut self, seq: u64, worker: &crate::model::WorkerId, points: u32, reason: AwardReason) {
        if points == 0 {
            self.flag(seq, Invariant::ScoreRange, "award of zero points");
        }
        let Some(review) = self.batch.review.clone() else {
            self.flag(seq, Invariant::ScoreRange, format!("award to {worker} outside a review batch"));
            return;
        };
        match reason {
            AwardReason::ImplementerAward { stars } => {
                self.batch.implementer_awards += 1;
                let allowed: &[u32] = if stars >= 4 { &[8, 10] } else { &[2, 4, 6] };
                if !(1..=5).contains(&stars) || points != 2 * u32::from(stars) || !allowed.contains(&points) {
                    self.flag(seq, Invariant::ScoreRange, format!("{points} points for a {stars}-star review"));
                }
                if stars != review.stars {
                    let msg = format!("award cites {stars} stars but the review gave {}", review.stars);
                    self.flag(seq, Invariant::ScoreRange, msg);
                }
                let author = self.state.submissions.get(&review.submission_id).map(|s| &s.worker);
                if author != Some(worker) {
                    self.flag(seq, Invariant::ScoreRange, format!("implementer award to {worker}, not the author"));
                }
            }
            AwardReason::ReviewerAward => {
                self.batch.reviewer_awards += 1;
                if points != 5 {
                    self.flag(seq, Invariant::ScoreRange, format!("reviewer award of {points} points"));
                }
                if worker != &review.reviewer {
                    self.flag(seq, Invariant::ScoreRange, format!("reviewer award to {worker}, not the reviewer"));
                }
            }
        }
    }

    /// Checks after the event is applied.
    fn after(&mut self, event: &ProjectEvent) {
        let seq = event.sequence;
        let touched = match &event.kind {
            EventKind::FunctionCreated { function_id, .. } => {
                self.batch.functions.insert(*function_id);
                None
            }
            EventKind::MicrotaskGenerated { microtask_id, kind } => {
                let f = kind.function_id();
                self.by_function.entry(f).or_default().push(*microtask_id);
                if let MicrotaskKind::ImplementFunctionBehavior { rework_feedback, .. } = kind {
                    self.batch.ifbs.push((f, rework_feedback.is_some()));
                }
                if let MicrotaskKind::Review { submission_id, .. } = kind {
                    if let Some(sub) = self.state.submissions.get(submission_id) {
                        self.batch.microtasks.insert(sub.microtask_id);
                    }
                }
                self.batch.microtasks.insert(*microtask_id);
                Some(f)
            }
            EventKind::ReviewRecorded { review_microtask_id, decision } => {
                self.batch.review = Some(decision.clone());
                self.batch.microtasks.insert(*review_microtask_id);
                self.state.microtasks.get(review_microtask_id).map(|t| t.kind.function_id())
            }
            EventKind::IssueOpened { function_id, submission_id, .. } => {
                if let Some(sub) = self.state.submissions.get(submission_id) {
                    self.batch.microtasks.insert(sub.microtask_id);
                }
                Some(*function_id)
            }
            EventKind::MicrotaskAssigned { microtask_id, .. }
            | EventKind::MicrotaskSkipped { microtask_id, .. }
            | EventKind::MicrotaskExpired { microtask_id, .. } => {
                self.batch.microtasks.insert(*microtask_id);
                None
            }
            EventKind::SubmissionReceived { submission } => {
                self.batch.microtasks.insert(submission.microtask_id);
                None
            }
            EventKind::FunctionCompleted { function_id } => {
                self.batch.completed.insert(*function_id);
                self.batch.functions.insert(*function_id);
                None
            }
            EventKind::IssueResolved { function_id, .. } => {
                self.batch.functions.insert(*function_id);
                None
            }
            _ => None,
        };
        if let Some(f) = touched {
            self.batch.functions.insert(f);
            let live = self.live_count(f);
            if live > 1 {
                let name = self.state.functions.get(&f).map(|x| x.name.as_str()).unwrap_or("?");
                self.flag(seq, Invariant::Locking, format!("{live} live microtasks for {name}"));
            }
        }
    }

    fn end_batch(&mut self) {
        let batch = std::mem::take(&mut self.batch);
        let seq = batch.last_sequence;
        for f in &batch.functions {
            let Some(function) = self.state.functions.get(f).cloned() else { continue };
            let live = self.live_count(*f);
            let (ok, expected) = match function.state {
                FunctionState::AwaitingWork => (live == 1, "exactly one"),
                FunctionState::Halted { .. } | FunctionState::Completed => (live == 0, "no"),
            };
            if !ok {
                let msg = format!("{} is {:?} with {live} live microtasks, expected {expected}", function.name, function.state);
                self.flag(seq, Invariant::FunctionLiveness, msg);
            }
            if let FunctionState::Halted { issue } = function.state {
                if self.state.issues.get(&issue).is_none_or(|i| i.resolved) {
                    self.flag(seq, Invariant::HaltedHasIssue, format!("{} halted without an open issue", function.name));
                }
            }
        }
        for id in &batch.microtasks {
            self.check_placement(seq, *id);
        }
        if let Some(review) = &batch.review {
            self.check_chaining(seq, review, &batch);
            if batch.implementer_awards != 1 || batch.reviewer_awards != 1 {
                let msg = format!(
                    "review of {} produced {} implementer and {} reviewer awards",
                    review.submission_id, batch.implementer_awards, batch.reviewer_awards
                );
                self.flag(seq, Invariant::ScoreRange, msg);
            }
        }
    }

    fn check_chaining(&mut self, seq: u64, review: &ReviewDecision, batch: &Batch) {
        let Some(sub) = self.state.submissions.get(&review.submission_id) else { return };
        let f = sub.function_id;
        let ifbs: Vec<bool> = batch.ifbs.iter().filter(|(g, _)| *g == f).map(|(_, rework)| *rework).collect();
        let mark_complete = matches!(sub.payload, SubmissionPayload::MarkComplete);
        let problem = if review.stars >= 4 && mark_complete {
            (!batch.completed.contains(&f) || !ifbs.is_empty()).then_some("accepted completion must complete the function")
        } else if review.stars >= 4 {
            (ifbs != [false]).then_some("accepted contribution must chain exactly one new IFB")
        } else {
            (ifbs != [true]).then_some("rejected contribution must chain exactly one rework IFB")
        };
        if let Some(problem) = problem {
            self.flag(seq, Invariant::Chaining, format!("{}: {problem}", sub.id));
        }
    }

    /// Each live microtask is in exactly one of: the queue, its worker's
    /// single assignment, or submitted awaiting review.
    fn check_placement(&mut self, seq: u64, id: MicrotaskId) {
        let Some(task) = self.state.microtasks.get(&id) else { return };
        let queued = self.state.queue.contains(id);
        let problem = match &task.state {
            MicrotaskState::Queued => (!queued).then(|| "queued but absent from the queue".to_string()),
            MicrotaskState::Assigned { worker, .. } => {
                if queued {
                    Some("assigned but still queued".to_string())
                } else if self.state.held.get(worker) != Some(&id) {
                    Some(format!("assigned to {worker} who does not hold it"))
                } else {
                    None
                }
            }
            MicrotaskState::Submitted | MicrotaskState::Retired => {
                let held = self.state.held.values().any(|h| *h == id);
                (queued || held).then(|| format!("{:?} but still queued or held", task.state))
            }
        };
        if let Some(problem) = problem {
            self.flag(seq, Invariant::NoLostMicrotask, format!("{id} {problem}"));
        }
    }

    fn finish(&mut self, fully_applied: bool) {
        let seq = self.state.last_sequence;
        let c = self.counts.clone();
        if c.reviews_generated != c.ifb_submissions {
            let msg = format!("{} reviews generated for {} non-issue submissions", c.reviews_generated, c.ifb_submissions);
            self.flag(seq, Invariant::Conservation, msg);
        }
        if c.reviews_recorded != c.contributions_applied {
            let msg = format!("{} reviews recorded but {} contributions applied", c.reviews_recorded, c.contributions_applied);
            self.flag(seq, Invariant::Conservation, msg);
        }
        if c.reviews_recorded > c.reviews_generated {
            let msg = format!("{} reviews recorded but only {} generated", c.reviews_recorded, c.reviews_generated);
            self.flag(seq, Invariant::Conservation, msg);
        }
        if c.review_notifications != c.reviews_recorded {
            let msg = format!("{} review notifications for {} reviews", c.review_notifications, c.reviews_recorded);
            self.flag(seq, Invariant::ReviewNotified, msg);
        }
        let repeated: Vec<_> = self.notified.iter().filter(|(_, n)| **n > 1).map(|(s, _)| *s).collect();
        for s in repeated {
            self.flag(seq, Invariant::ReviewNotified, format!("{s} notified more than once"));
        }
        if fully_applied {
            let ids: Vec<_> = self.state.microtasks.keys().copied().collect();
            for id in ids {
                self.check_placement(seq, id);
            }
            let queued = self.state.queue.iter().filter(|id| !self.state.microtasks.contains_key(id)).count();
            if queued > 0 {
                self.flag(seq, Invariant::NoLostMicrotask, format!("{queued} unknown microtasks in the queue"));
            }
        }
    }
}

/// Folds `events` and checks every invariant at every prefix. Sequence gaps
/// are reported and folding continues; the first event that cannot be
/// applied is reported and folding stops, though whole-log counts still
/// cover every event.
pub fn check_log(events: &[ProjectEvent]) -> InvariantReport {
    let mut checker = Checker::new();
    let mut applied = 0;
    let mut stopped = false;
    for event in events {
        checker.tally(event);
        if stopped {
            continue;
        }
        if event.batch != checker.batch.number && checker.batch.last_sequence > 0 {
            checker.end_batch();
        }
        checker.batch.number = event.batch;
        checker.batch.last_sequence = event.sequence;
        if !checker.before(event) {
            stopped = true;
            continue;
        }
        if let Err(e) = checker.state.apply_relaxed(event) {
            checker.flag(event.sequence, Invariant::Applies, e.reason);
            stopped = true;
            continue;
        }
        applied += 1;
        checker.after(event);
    }
    if !stopped && checker.batch.last_sequence > 0 {
        checker.end_batch();
    }
    checker.finish(!stopped);
    InvariantReport { state: checker.state, counts: checker.counts, violations: checker.violations, applied }
}
