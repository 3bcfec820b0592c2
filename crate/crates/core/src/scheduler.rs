//! Microtask queueing, assignment, skip and expiry.
//!
//! The queue itself lives inside [`ProjectState`] and is rebuilt by the event
//! fold; the functions here only decide which events a fetch, skip or clock
//! tick produces.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::event::EventKind;
use crate::model::{
    AssignmentId, LogicalTime, MicrotaskId, MicrotaskKind, MicrotaskState, Notification,
    NotificationKind, WorkerId,
};
use crate::state::ProjectState;
use crate::workflow::CommandError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "camelCase")]
pub enum AssignmentMode {
    Fifo,
    Random { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AssignmentPolicy {
    pub mode: AssignmentMode,
    pub self_review_allowed: bool,
    /// Assignments a worker must take before a microtask they skipped can
    /// come back to them.
    pub skip_cooldown: u32,
    /// Seconds.
    pub time_limit: u64,
    /// Seconds; strictly less than `time_limit`.
    pub warning_at: u64,
}

impl Default for AssignmentPolicy {
    fn default() -> Self {
        AssignmentPolicy {
            mode: AssignmentMode::Fifo,
            self_review_allowed: false,
            skip_cooldown: 1,
            time_limit: 15 * 60,
            warning_at: 14 * 60,
        }
    }
}

/// Largest integer a canonical-form number holds exactly.
pub const MAX_SAFE_SEED: u64 = (1 << 53) - 1;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PolicyError {
    #[error("warning time ({warning_at}s) must be less than the time limit ({time_limit}s)")]
    WarningNotBeforeLimit { warning_at: u64, time_limit: u64 },
    #[error("seed {0} does not fit in a canonical-form number (max {MAX_SAFE_SEED})")]
    SeedTooLarge(u64),
}

impl AssignmentPolicy {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.warning_at >= self.time_limit {
            return Err(PolicyError::WarningNotBeforeLimit {
                warning_at: self.warning_at,
                time_limit: self.time_limit,
            });
        }
        match self.mode {
            AssignmentMode::Random { seed } if seed > MAX_SAFE_SEED => Err(PolicyError::SeedTooLarge(seed)),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("microtask {0} is already queued")]
pub struct DuplicateMicrotask(pub MicrotaskId);

/// FIFO of queued microtask ids. Each id appears at most once.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MicrotaskQueue {
    items: VecDeque<MicrotaskId>,
}

impl MicrotaskQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn enqueue(&mut self, id: MicrotaskId) -> Result<(), DuplicateMicrotask> {
        if self.items.contains(&id) {
            return Err(DuplicateMicrotask(id));
        }
        self.items.push_back(id);
        Ok(())
    }

    pub fn remove(&mut self, id: MicrotaskId) -> bool {
        match self.items.iter().position(|m| *m == id) {
            Some(pos) => {
                self.items.remove(pos);
                true
            }
            None => false,
        }
    }

    pub fn contains(&self, id: MicrotaskId) -> bool {
        self.items.contains(&id)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = MicrotaskId> + '_ {
        self.items.iter().copied()
    }
}

/// A skipped microtask that may not return to the worker yet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Cooldown {
    pub microtask_id: MicrotaskId,
    pub remaining: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Assignment {
    pub assignment: AssignmentId,
    pub microtask_id: MicrotaskId,
    pub worker: WorkerId,
    pub kind: MicrotaskKind,
    pub deadline: LogicalTime,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "camelCase")]
pub enum FetchOutcome {
    Assigned(Assignment),
    NoneAvailable,
}

/// Whether `worker` may be handed `id` right now.
pub fn is_eligible(state: &ProjectState, worker: &WorkerId, id: MicrotaskId) -> bool {
    let Some(task) = state.microtasks.get(&id) else { return false };
    if !state.policy.self_review_allowed {
        if let MicrotaskKind::Review { submission_id, .. } = &task.kind {
            if state.submissions.get(submission_id).is_some_and(|s| &s.worker == worker) {
                return false;
            }
        }
    }
    !state
        .cooldowns
        .get(worker)
        .is_some_and(|list| list.iter().any(|c| c.microtask_id == id))
}

/// Picks the microtask a fetch would hand out. The random draw is seeded by
/// the policy seed and the next event sequence, so replays agree.
pub fn select(state: &ProjectState, worker: &WorkerId) -> Option<MicrotaskId> {
    let eligible: Vec<MicrotaskId> =
        state.queue.iter().filter(|id| is_eligible(state, worker, *id)).collect();
    if eligible.is_empty() {
        return None;
    }
    match state.policy.mode {
        AssignmentMode::Fifo => Some(eligible[0]),
        AssignmentMode::Random { seed } => {
            let stream = state.last_sequence + 1;
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
            Some(eligible[rng.random_range(0..eligible.len())])
        }
    }
}

pub fn fetch(
    state: &ProjectState,
    worker: &WorkerId,
    now: LogicalTime,
) -> Result<(FetchOutcome, Vec<EventKind>), CommandError> {
    if let Some(held) = state.held_assignment(worker) {
        return Err(CommandError::AlreadyAssigned { worker: worker.clone(), assignment: held });
    }
    let Some(id) = select(state, worker) else {
        return Ok((FetchOutcome::NoneAvailable, vec![]));
    };
    let task = &state.microtasks[&id];
    let assignment = state.next_ids.assignment();
    let deadline = now.plus_secs(state.policy.time_limit);
    let event = EventKind::MicrotaskAssigned {
        microtask_id: id,
        assignment,
        worker: worker.clone(),
        deadline,
    };
    let outcome = FetchOutcome::Assigned(Assignment {
        assignment,
        microtask_id: id,
        worker: worker.clone(),
        kind: task.kind.clone(),
        deadline,
    });
    Ok((outcome, vec![event]))
}

/// Releases a held assignment back to the tail of the queue. Staged editor
/// work is never sent to the server, so discarding it needs no event.
pub fn skip(
    state: &ProjectState,
    worker: &WorkerId,
    assignment: AssignmentId,
    now: LogicalTime,
) -> Result<Vec<EventKind>, CommandError> {
    let (microtask_id, _) = state.live_assignment(worker, assignment, now)?;
    Ok(vec![EventKind::MicrotaskSkipped { microtask_id, assignment, worker: worker.clone() }])
}

/// Emits one time warning per assignment past `warning_at`, and expires
/// assignments past `time_limit`, oldest assignment first.
pub fn tick(state: &ProjectState, now: LogicalTime) -> Vec<EventKind> {
    let mut held: Vec<_> = state
        .microtasks
        .values()
        .filter_map(|t| match &t.state {
            MicrotaskState::Assigned { worker, assignment, assigned_at, warned, .. } => {
                Some((*assigned_at, t.id, *assignment, worker.clone(), *warned))
            }
            _ => None,
        })
        .collect();
    held.sort_by_key(|(at, id, ..)| (*at, *id));

    let mut notes = state.next_ids.notifications();
    let mut out = Vec::new();
    for (assigned_at, microtask_id, assignment, worker, warned) in held {
        let elapsed = now.since(assigned_at);
        if elapsed >= state.policy.time_limit {
            out.push(EventKind::MicrotaskExpired { microtask_id, assignment, worker });
        } else if elapsed >= state.policy.warning_at && !warned {
            out.push(EventKind::NotificationEmitted {
                notification: Notification {
                    id: notes.next(),
                    recipient: worker,
                    kind: NotificationKind::TimeWarning { microtask_id, assignment },
                    read: false,
                },
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::{ClientId, Contribution, SubmissionPayload};
    use crate::workflow::Project;

    fn w(s: &str) -> WorkerId {
        WorkerId::new(s)
    }

    fn project_with(endpoints: usize, policy: AssignmentPolicy) -> Project {
        let mut req = fixtures::todo_request();
        req.endpoints.truncate(endpoints);
        Project::create(ClientId("client".into()), req, policy, LogicalTime::ZERO).unwrap()
    }

    fn assigned(outcome: FetchOutcome) -> Assignment {
        match outcome {
            FetchOutcome::Assigned(a) => a,
            FetchOutcome::NoneAvailable => panic!("expected an assignment"),
        }
    }

    #[test]
    fn enqueue_rejects_duplicates() {
        let mut q = MicrotaskQueue::new();
        q.enqueue(MicrotaskId(1)).unwrap();
        assert_eq!(q.len(), 1);
        assert_eq!(q.enqueue(MicrotaskId(1)), Err(DuplicateMicrotask(MicrotaskId(1))));
        assert_eq!(q.len(), 1);
    }

    #[test]
    fn initial_queue_holds_one_ifb_per_endpoint() {
        let p = project_with(12, AssignmentPolicy::default());
        assert_eq!(p.state().queue.len(), 12);
    }

    #[test]
    fn fifo_fetch_takes_head() {
        let mut p = project_with(2, AssignmentPolicy::default());
        let head: Vec<_> = p.state().queue.iter().collect();
        let a = assigned(p.fetch(&w("a"), LogicalTime::ZERO).unwrap());
        assert_eq!(a.microtask_id, head[0]);
        assert_eq!(p.state().queue.iter().collect::<Vec<_>>(), vec![head[1]]);
        assert_eq!(a.deadline, LogicalTime(15 * 60));
    }

    #[test]
    fn one_assignment_per_worker() {
        let mut p = project_with(2, AssignmentPolicy::default());
        p.fetch(&w("a"), LogicalTime::ZERO).unwrap();
        assert!(matches!(
            p.fetch(&w("a"), LogicalTime::ZERO),
            Err(CommandError::AlreadyAssigned { .. })
        ));
    }

    #[test]
    fn own_review_is_ineligible() {
        // Two-microtask fixture: one IFB held by `a`, whose submission spawns
        // a Review. Enumerate (worker, item) eligibility and confirm that the
        // only exclusion is `a` reviewing its own work.
        let mut p = project_with(1, AssignmentPolicy::default());
        let a = assigned(p.fetch(&w("a"), LogicalTime::ZERO).unwrap());
        p.submit_work(
            &w("a"),
            a.assignment,
            SubmissionPayload::BehaviorContribution(Contribution::default()),
            None,
            LogicalTime(60),
        )
        .unwrap();
        let queued: Vec<_> = p.state().queue.iter().collect();
        assert_eq!(queued.len(), 1);
        let mut table = vec![];
        for worker in ["a", "b"] {
            for id in &queued {
                table.push((worker, is_eligible(p.state(), &w(worker), *id)));
            }
        }
        assert_eq!(table, vec![("a", false), ("b", true)]);
        assert_eq!(p.fetch(&w("a"), LogicalTime(61)).unwrap(), FetchOutcome::NoneAvailable);
        assert!(matches!(p.fetch(&w("b"), LogicalTime(61)).unwrap(), FetchOutcome::Assigned(_)));
    }

    #[test]
    fn self_review_when_allowed() {
        let policy = AssignmentPolicy { self_review_allowed: true, ..Default::default() };
        let mut p = project_with(1, policy);
        let a = assigned(p.fetch(&w("a"), LogicalTime::ZERO).unwrap());
        p.submit_work(&w("a"), a.assignment, SubmissionPayload::MarkComplete, None, LogicalTime(1))
            .unwrap();
        assert!(matches!(p.fetch(&w("a"), LogicalTime(2)).unwrap(), FetchOutcome::Assigned(_)));
    }

    #[test]
    fn random_draw_is_pinned() {
        let policy = AssignmentPolicy { mode: AssignmentMode::Random { seed: 42 }, ..Default::default() };
        let mut p = project_with(5, policy.clone());
        let a = assigned(p.fetch(&w("a"), LogicalTime::ZERO).unwrap());
        // Regression value recorded from the first run.
        assert_eq!(a.microtask_id, MicrotaskId(RANDOM_SEED_42_DRAW));

        let mut again = project_with(5, policy);
        let b = assigned(again.fetch(&w("a"), LogicalTime::ZERO).unwrap());
        assert_eq!(a.microtask_id, b.microtask_id);
    }

    #[test]
    fn random_draws_cover_the_queue() {
        let mut seen = std::collections::BTreeSet::new();
        for seed in 0..64 {
            let policy = AssignmentPolicy { mode: AssignmentMode::Random { seed }, ..Default::default() };
            let mut p = project_with(5, policy);
            seen.insert(assigned(p.fetch(&w("a"), LogicalTime::ZERO).unwrap()).microtask_id);
        }
        assert_eq!(seen.len(), 5);
    }

    const RANDOM_SEED_42_DRAW: u64 = 1;

    #[test]
    fn skip_then_fetch_returns_other_item() {
        let mut p = project_with(2, AssignmentPolicy::default());
        let first = assigned(p.fetch(&w("a"), LogicalTime::ZERO).unwrap());
        p.skip(&w("a"), first.assignment, LogicalTime(10)).unwrap();
        assert_eq!(p.state().queue.iter().last(), Some(first.microtask_id));
        let second = assigned(p.fetch(&w("a"), LogicalTime(11)).unwrap());
        assert_ne!(second.microtask_id, first.microtask_id);
    }

    #[test]
    fn skipping_only_item_blocks_until_cooldown_or_other_worker() {
        let mut p = project_with(1, AssignmentPolicy::default());
        let first = assigned(p.fetch(&w("a"), LogicalTime::ZERO).unwrap());
        p.skip(&w("a"), first.assignment, LogicalTime(1)).unwrap();
        assert_eq!(p.fetch(&w("a"), LogicalTime(2)).unwrap(), FetchOutcome::NoneAvailable);

        let b = assigned(p.fetch(&w("b"), LogicalTime(3)).unwrap());
        assert_eq!(b.microtask_id, first.microtask_id);
        p.skip(&w("b"), b.assignment, LogicalTime(4)).unwrap();
        // b's fetch cleared a's cooldown.
        assert!(matches!(p.fetch(&w("a"), LogicalTime(5)).unwrap(), FetchOutcome::Assigned(_)));
    }

    #[test]
    fn zero_cooldown_allows_immediate_return() {
        let policy = AssignmentPolicy { skip_cooldown: 0, ..Default::default() };
        let mut p = project_with(1, policy);
        let first = assigned(p.fetch(&w("a"), LogicalTime::ZERO).unwrap());
        p.skip(&w("a"), first.assignment, LogicalTime(1)).unwrap();
        assert!(matches!(p.fetch(&w("a"), LogicalTime(2)).unwrap(), FetchOutcome::Assigned(_)));
    }

    #[test]
    fn skip_of_non_held_assignment_is_stale() {
        let mut p = project_with(1, AssignmentPolicy::default());
        let first = assigned(p.fetch(&w("a"), LogicalTime::ZERO).unwrap());
        assert!(matches!(
            p.skip(&w("b"), first.assignment, LogicalTime(1)),
            Err(CommandError::StaleAssignment(_))
        ));
        p.skip(&w("a"), first.assignment, LogicalTime(1)).unwrap();
        assert!(matches!(
            p.skip(&w("a"), first.assignment, LogicalTime(2)),
            Err(CommandError::StaleAssignment(_))
        ));
    }

    #[test]
    fn warning_then_expiry() {
        let mut p = project_with(1, AssignmentPolicy::default());
        let a = assigned(p.fetch(&w("a"), LogicalTime::ZERO).unwrap());

        let events = p.tick(LogicalTime(14 * 60 + 1)).unwrap();
        assert_eq!(events.len(), 1);
        assert!(matches!(
            &events[0].kind,
            EventKind::NotificationEmitted { notification }
                if matches!(notification.kind, NotificationKind::TimeWarning { .. })
        ));
        assert!(p.state().held_assignment(&w("a")).is_some());
        // Warning is emitted once.
        assert!(p.tick(LogicalTime(14 * 60 + 30)).unwrap().is_empty());

        let events = p.tick(LogicalTime(15 * 60 + 1)).unwrap();
        assert_eq!(events.len(), 1);
        assert!(matches!(events[0].kind, EventKind::MicrotaskExpired { assignment, .. } if assignment == a.assignment));
        assert!(p.state().queue.contains(a.microtask_id));
        assert!(p.tick(LogicalTime(15 * 60 + 2)).unwrap().is_empty());
    }

    #[test]
    fn two_expiries_ordered_by_assignment_time() {
        let mut p = project_with(2, AssignmentPolicy::default());
        let first = assigned(p.fetch(&w("b"), LogicalTime(0)).unwrap());
        let second = assigned(p.fetch(&w("a"), LogicalTime(10)).unwrap());
        let events = p.tick(LogicalTime(20 * 60)).unwrap();
        let expired: Vec<_> = events
            .iter()
            .filter_map(|e| match &e.kind {
                EventKind::MicrotaskExpired { worker, .. } => Some(worker.0.clone()),
                _ => None,
            })
            .collect();
        assert_eq!(expired, vec!["b", "a"]);
        assert_eq!(
            p.state().queue.iter().collect::<Vec<_>>(),
            vec![first.microtask_id, second.microtask_id]
        );
    }

    #[test]
    fn policy_validation() {
        assert!(AssignmentPolicy::default().validate().is_ok());
        let bad = AssignmentPolicy { warning_at: 900, ..Default::default() };
        assert!(bad.validate().is_err());
        let big = AssignmentPolicy { mode: AssignmentMode::Random { seed: u64::MAX }, ..Default::default() };
        assert_eq!(big.validate(), Err(PolicyError::SeedTooLarge(u64::MAX)));
    }
}
