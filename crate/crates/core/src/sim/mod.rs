//! Deterministic crowd simulator.
//!
//! Simulated workers arrive for sessions, fetch microtasks, sometimes skip or
//! walk away from them, and submit scripted contributions. A contribution's
//! code is opaque text; whether it is correct is a ground-truth label drawn
//! from the worker's defect probability, which drives both the MockExecutor
//! outcome attached to the submission and the stars a reviewer gives it.
//!
//! Time is simulated seconds. All randomness comes from one ChaCha stream
//! consumed in event order, so a configuration always yields the same log.

pub mod scenario;

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::AssignmentSection;
use crate::event::{EventKind, ProjectEvent};
use crate::fixtures;
use crate::invariants::{check_log, InvariantReport, LogCounts, Violation};
use crate::model::{
    Adt, AssignmentId, ClientId, ClientRequest, Contribution, FunctionId, IssueId, IssueResolution,
    LogicalTime, MicrotaskKind, NewFunction, Param, Signature, Stub, SubmissionId, SubmissionPayload,
    TaskKindLabel, TestCase, TypeRef, WorkerId,
};
use crate::sandbox::{bundle_for, run_tests, Limits, MockExecutor, TestRunReport, TestStatus};
use crate::scheduler::{AssignmentPolicy, FetchOutcome, PolicyError};
use crate::state::{AssignmentStatus, ProjectState};
use crate::value::Value;
use crate::workflow::{CommandError, Project};

pub const CLIENT: &str = "client";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Session {
    pub duration_minutes: u64,
    /// Zero-based worker indices; all workers when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<Vec<u32>>,
}

/// Stars a reviewer gives, drawn uniformly from the list matching the
/// contribution's ground truth.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ReviewStrictness {
    pub correct: Vec<u8>,
    pub defective: Vec<u8>,
}

impl Default for ReviewStrictness {
    /// Accepts every correct contribution and rejects every defective one.
    fn default() -> Self {
        ReviewStrictness { correct: vec![4, 5], defective: vec![1, 2, 3] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default, deny_unknown_fields)]
pub struct WorkerProfile {
    pub skip_probability: f64,
    pub defect_probability: f64,
    /// Chance of fetching a microtask and then never touching it.
    pub abandon_probability: f64,
    /// Accepted behaviors a function needs before this worker claims it is complete.
    pub mark_complete_threshold: u32,
    pub review_strictness: ReviewStrictness,
    pub new_function_probability: f64,
    pub issue_probability: f64,
    /// Inclusive bounds on minutes spent on an IFB.
    pub ifb_minutes: (u64, u64),
    pub review_minutes: (u64, u64),
}

impl Default for WorkerProfile {
    fn default() -> Self {
        WorkerProfile {
            skip_probability: 0.1,
            defect_probability: 0.2,
            abandon_probability: 0.02,
            mark_complete_threshold: 3,
            review_strictness: ReviewStrictness::default(),
            new_function_probability: 0.05,
            issue_probability: 0.02,
            ifb_minutes: (3, 12),
            review_minutes: (1, 6),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub seed: u64,
    pub worker_count: u32,
    pub sessions: Vec<Session>,
    /// Minutes between consecutive sessions.
    pub gap_minutes: u64,
    /// Worker `i` uses `per_worker[i % len]`; the default profile when empty.
    pub per_worker: Vec<WorkerProfile>,
    /// Client request file; the bundled ToDo request when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub client_request_fixture: Option<PathBuf>,
    pub policy: AssignmentSection,
    /// Minutes before the client answers an issue report.
    pub issue_response_minutes: u64,
}

impl Default for SimulationConfig {
    /// Nine workers over two 90-minute sessions on the ToDo request.
    fn default() -> Self {
        SimulationConfig {
            seed: 1,
            worker_count: 9,
            sessions: vec![
                Session { duration_minutes: 90, workers: None },
                Session { duration_minutes: 90, workers: None },
            ],
            gap_minutes: 30,
            per_worker: vec![],
            client_request_fixture: None,
            policy: AssignmentSection::default(),
            issue_response_minutes: 10,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("invalid policy: {0}")]
    Policy(#[from] PolicyError),
    #[error("cannot load client request {path}: {reason}")]
    Fixture { path: String, reason: String },
    #[error("engine rejected a simulated command: {0}")]
    Engine(#[from] CommandError),
}

impl SimulationConfig {
    pub fn from_toml(text: &str) -> Result<SimulationConfig, SimError> {
        toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))
    }

    pub fn profile(&self, worker: usize) -> WorkerProfile {
        if self.per_worker.is_empty() {
            WorkerProfile::default()
        } else {
            self.per_worker[worker % self.per_worker.len()].clone()
        }
    }

    pub fn validate(&self) -> Result<AssignmentPolicy, SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        if self.worker_count == 0 {
            return bad("workerCount must be at least 1".into());
        }
        if self.sessions.is_empty() {
            return bad("at least one session is required".into());
        }
        for (i, s) in self.sessions.iter().enumerate() {
            if let Some(ws) = &s.workers {
                if let Some(w) = ws.iter().find(|w| **w >= self.worker_count) {
                    return bad(format!("session {i} names worker {w} of {}", self.worker_count));
                }
            }
        }
        for (i, p) in self.per_worker.iter().enumerate() {
            let probabilities = [
                ("skipProbability", p.skip_probability),
                ("defectProbability", p.defect_probability),
                ("abandonProbability", p.abandon_probability),
                ("newFunctionProbability", p.new_function_probability),
                ("issueProbability", p.issue_probability),
            ];
            for (name, value) in probabilities {
                if !(0.0..=1.0).contains(&value) {
                    return bad(format!("perWorker[{i}].{name} = {value} is outside [0, 1]"));
                }
            }
            let stars = &p.review_strictness;
            if stars.correct.is_empty() || stars.defective.is_empty() {
                return bad(format!("perWorker[{i}].reviewStrictness needs stars for both outcomes"));
            }
            if stars.correct.iter().chain(&stars.defective).any(|s| !(1..=5).contains(s)) {
                return bad(format!("perWorker[{i}].reviewStrictness stars must be 1 to 5"));
            }
            if p.ifb_minutes.0 > p.ifb_minutes.1 || p.review_minutes.0 > p.review_minutes.1 {
                return bad(format!("perWorker[{i}] minute ranges must be ordered"));
            }
        }
        Ok(self.policy.policy()?)
    }

    fn client_request(&self) -> Result<ClientRequest, SimError> {
        let Some(path) = &self.client_request_fixture else { return Ok(fixtures::todo_request()) };
        let fail = |reason: String| SimError::Fixture { path: path.display().to_string(), reason };
        let text = std::fs::read_to_string(path).map_err(|e| fail(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| fail(e.to_string()))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SimulationMetrics {
    pub fetched_by_kind: BTreeMap<TaskKindLabel, u64>,
    pub completed_by_kind: BTreeMap<TaskKindLabel, u64>,
    /// Manual skips plus expiries.
    pub skipped_by_kind: BTreeMap<TaskKindLabel, u64>,
    pub in_flight_by_kind: BTreeMap<TaskKindLabel, u64>,
    pub median_simulated_minutes_by_kind: BTreeMap<TaskKindLabel, f64>,
    pub functions_implemented: u64,
    pub functions_completed: u64,
    pub tests_written: u64,
    pub reviews_accepted: u64,
    pub max_concurrent_assignments: u64,
    pub counts: LogCounts,
    pub invariant_violations: Vec<Violation>,
}

#[derive(Debug, Clone)]
pub struct SimulationOutcome {
    pub metrics: SimulationMetrics,
    pub events: Vec<ProjectEvent>,
    pub state: ProjectState,
}

fn median_minutes(mut secs: Vec<u64>) -> Option<f64> {
    if secs.is_empty() {
        return None;
    }
    secs.sort_unstable();
    let n = secs.len();
    let mid = if n % 2 == 1 { secs[n / 2] as f64 } else { (secs[n / 2 - 1] + secs[n / 2]) as f64 / 2.0 };
    Some(mid / 60.0)
}

/// Metrics derived purely from a log and its invariant report.
pub fn metrics_from_log(events: &[ProjectEvent], report: &InvariantReport) -> SimulationMetrics {
    let mut m = SimulationMetrics::default();
    let mut kinds = BTreeMap::new();
    let mut started: BTreeMap<AssignmentId, (TaskKindLabel, LogicalTime)> = BTreeMap::new();
    let mut holder = BTreeMap::new();
    let mut durations: BTreeMap<TaskKindLabel, Vec<u64>> = BTreeMap::new();
    let mut live: u64 = 0;
    let bump = |map: &mut BTreeMap<TaskKindLabel, u64>, k: TaskKindLabel| *map.entry(k).or_default() += 1;
    for label in [TaskKindLabel::ImplementFunctionBehavior, TaskKindLabel::Review] {
        for map in [&mut m.fetched_by_kind, &mut m.completed_by_kind, &mut m.skipped_by_kind, &mut m.in_flight_by_kind] {
            map.insert(label, 0);
        }
    }
    for e in events {
        match &e.kind {
            EventKind::MicrotaskGenerated { microtask_id, kind } => {
                kinds.insert(*microtask_id, kind.label());
            }
            EventKind::MicrotaskAssigned { microtask_id, assignment, .. } => {
                let Some(label) = kinds.get(microtask_id).copied() else { continue };
                bump(&mut m.fetched_by_kind, label);
                started.insert(*assignment, (label, e.timestamp));
                holder.insert(*microtask_id, *assignment);
                live += 1;
                m.max_concurrent_assignments = m.max_concurrent_assignments.max(live);
            }
            EventKind::MicrotaskSkipped { assignment, .. } | EventKind::MicrotaskExpired { assignment, .. } => {
                if let Some((label, _)) = started.remove(assignment) {
                    bump(&mut m.skipped_by_kind, label);
                    live = live.saturating_sub(1);
                }
            }
            EventKind::SubmissionReceived { submission } => {
                if let SubmissionPayload::BehaviorContribution(c) = &submission.payload {
                    m.tests_written += c.tests_added.len() as u64;
                }
                if let Some((label, at)) = started.remove(&submission.assignment) {
                    bump(&mut m.completed_by_kind, label);
                    durations.entry(label).or_default().push(e.timestamp.since(at));
                    live = live.saturating_sub(1);
                }
            }
            EventKind::ReviewRecorded { review_microtask_id, decision } => {
                if decision.stars >= 4 {
                    m.reviews_accepted += 1;
                }
                let assignment = holder.get(review_microtask_id);
                if let Some((label, at)) = assignment.and_then(|a| started.remove(a)) {
                    bump(&mut m.completed_by_kind, label);
                    durations.entry(label).or_default().push(e.timestamp.since(at));
                    live = live.saturating_sub(1);
                }
            }
            _ => {}
        }
    }
    for (label, _) in started.values() {
        bump(&mut m.in_flight_by_kind, *label);
    }
    for (label, secs) in durations {
        if let Some(median) = median_minutes(secs) {
            m.median_simulated_minutes_by_kind.insert(label, median);
        }
    }
    m.functions_implemented = report.state.functions.values().filter(|f| f.is_implemented()).count() as u64;
    m.functions_completed = report
        .state
        .functions
        .values()
        .filter(|f| f.state == crate::model::FunctionState::Completed)
        .count() as u64;
    m.counts = report.counts.clone();
    m.invariant_violations = report.violations.clone();
    m
}

/// Checks a log and derives its metrics.
pub fn replay(events: &[ProjectEvent]) -> (InvariantReport, SimulationMetrics) {
    let report = check_log(events);
    let metrics = metrics_from_log(events, &report);
    (report, metrics)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Agent {
    Clock,
    Client(IssueId),
    Worker(usize),
}

#[derive(Debug, Clone)]
enum Plan {
    /// Looking for work.
    Fetch,
    Submit { assignment: AssignmentId, kind: MicrotaskKind },
    Skip { assignment: AssignmentId },
}

struct SimWorker {
    id: WorkerId,
    profile: WorkerProfile,
    plan: Plan,
}

struct Sim<'a> {
    config: &'a SimulationConfig,
    project: Project,
    rng: ChaCha8Rng,
    workers: Vec<SimWorker>,
    agenda: BinaryHeap<Reverse<(u64, u64, Agent)>>,
    order: u64,
    /// `[start, end)` in seconds for each session.
    windows: Vec<(u64, u64)>,
    correct: BTreeMap<SubmissionId, bool>,
    accepted_behaviors: BTreeMap<FunctionId, u32>,
    helpers: u32,
    adts: Vec<Adt>,
}

impl Sim<'_> {
    fn schedule(&mut self, at: u64, agent: Agent) {
        self.order += 1;
        self.agenda.push(Reverse((at, self.order, agent)));
    }

    fn participates(&self, session: usize, worker: usize) -> bool {
        self.config.sessions[session].workers.as_ref().is_none_or(|ws| ws.contains(&(worker as u32)))
    }

    /// Next time `worker` may look for work at or after `now`, or `None`
    /// once their last session is over.
    fn next_slot(&self, worker: usize, now: u64) -> Option<u64> {
        self.windows
            .iter()
            .enumerate()
            .filter(|(i, _)| self.participates(*i, worker))
            .find(|(_, (_, end))| now < *end)
            .map(|(_, (start, _))| now.max(*start))
    }

    fn last_end(&self) -> u64 {
        self.windows.last().map_or(0, |w| w.1)
    }

    fn minutes(&mut self, range: (u64, u64)) -> u64 {
        let (lo, hi) = range;
        self.rng.random_range(lo * 60..=hi * 60)
    }

    fn run(mut self) -> Result<Project, SimError> {
        for w in 0..self.workers.len() {
            if let Some(start) = self.next_slot(w, 0) {
                let jitter = self.rng.random_range(0..=120);
                self.schedule(start + jitter, Agent::Worker(w));
            }
        }
        self.schedule(60, Agent::Clock);
        while let Some(Reverse((at, _, agent))) = self.agenda.pop() {
            let now = LogicalTime(at);
            self.project.tick(now)?;
            match agent {
                Agent::Clock => {
                    if at < self.last_end() || !self.project.state().held.is_empty() {
                        self.schedule(at + 60, Agent::Clock);
                    }
                }
                Agent::Client(issue) => {
                    let resolution = IssueResolution {
                        description: Some(self.issue_description(issue)),
                        signature: None,
                    };
                    self.project.resolve_issue(&ClientId(CLIENT.into()), issue, &resolution, now)?;
                }
                Agent::Worker(w) => self.act(w, now)?,
            }
        }
        Ok(self.project)
    }

    fn issue_description(&self, issue: IssueId) -> String {
        let state = self.project.state();
        let f = &state.functions[&state.issues[&issue].function_id];
        format!("{} Clarified by the client.", f.description)
    }

    fn act(&mut self, w: usize, now: LogicalTime) -> Result<(), SimError> {
        let plan = std::mem::replace(&mut self.workers[w].plan, Plan::Fetch);
        match plan {
            Plan::Fetch => self.fetch(w, now),
            Plan::Skip { assignment } => {
                let worker = self.workers[w].id.clone();
                match self.project.skip(&worker, assignment, now) {
                    Ok(_) | Err(CommandError::StaleAssignment(_)) => {}
                    Err(e) => return Err(e.into()),
                }
                self.after_task(w, now.0);
                Ok(())
            }
            Plan::Submit { assignment, kind } => {
                self.submit(w, assignment, kind, now)?;
                self.after_task(w, now.0);
                Ok(())
            }
        }
    }

    fn after_task(&mut self, w: usize, now: u64) {
        if let Some(at) = self.next_slot(w, now) {
            self.schedule(at, Agent::Worker(w));
        }
    }

    fn fetch(&mut self, w: usize, now: LogicalTime) -> Result<(), SimError> {
        let Some(slot) = self.next_slot(w, now.0) else { return Ok(()) };
        if slot > now.0 {
            self.schedule(slot, Agent::Worker(w));
            return Ok(());
        }
        let worker = self.workers[w].id.clone();
        let assignment = match self.project.fetch(&worker, now)? {
            FetchOutcome::Assigned(a) => a,
            FetchOutcome::NoneAvailable => {
                self.after_task(w, now.0 + 60);
                return Ok(());
            }
        };
        let profile = self.workers[w].profile.clone();
        if self.rng.random_bool(profile.abandon_probability) {
            // Comes back only after the assignment has expired.
            let back = assignment.deadline.0 + 60;
            self.after_task(w, back);
            return Ok(());
        }
        if self.rng.random_bool(profile.skip_probability) {
            let delay = self.rng.random_range(30..=120);
            self.workers[w].plan = Plan::Skip { assignment: assignment.assignment };
            self.schedule(now.0 + delay, Agent::Worker(w));
            return Ok(());
        }
        let range = match assignment.kind {
            MicrotaskKind::ImplementFunctionBehavior { .. } => profile.ifb_minutes,
            MicrotaskKind::Review { .. } => profile.review_minutes,
        };
        let work = self.minutes(range).max(1);
        self.workers[w].plan = Plan::Submit { assignment: assignment.assignment, kind: assignment.kind };
        self.schedule(now.0 + work, Agent::Worker(w));
        Ok(())
    }

    fn submit(&mut self, w: usize, assignment: AssignmentId, kind: MicrotaskKind, now: LogicalTime) -> Result<(), SimError> {
        let worker = self.workers[w].id.clone();
        let profile = self.workers[w].profile.clone();
        let result = match kind {
            MicrotaskKind::Review { submission_id, .. } => {
                let correct = self.correct.get(&submission_id).copied().unwrap_or(true);
                let pool = if correct { &profile.review_strictness.correct } else { &profile.review_strictness.defective };
                let stars = pool[self.rng.random_range(0..pool.len())];
                let feedback = (stars <= 3).then(|| format!("Rated {stars}: the behavior does not match the description."));
                self.project.submit_review(&worker, assignment, stars, feedback, now).map(|outcome| {
                    if stars >= 4 && outcome.submission_id == submission_id && !outcome.duplicate {
                        let function = self.project.state().submissions[&submission_id].function_id;
                        *self.accepted_behaviors.entry(function).or_default() += 1;
                    }
                })
            }
            MicrotaskKind::ImplementFunctionBehavior { function_id, .. } => {
                let (payload, report, correct) = self.author(&worker, &profile, function_id);
                let outcome = self.project.submit_work(&worker, assignment, payload, report, now);
                outcome.map(|o| {
                    self.correct.insert(o.submission_id, correct);
                    let state = self.project.state();
                    let opened = state.issues.values().find(|i| i.submission_id == o.submission_id).map(|i| i.id);
                    if let Some(issue) = opened {
                        let at = now.0 + self.config.issue_response_minutes * 60;
                        self.schedule(at, Agent::Client(issue));
                    }
                })
            }
        };
        match result {
            Ok(()) | Err(CommandError::StaleAssignment(_)) => Ok(()),
            Err(e) => Err(e.into()),
        }
    }

    /// Builds the payload for an IFB on `function_id` and runs its tests.
    fn author(
        &mut self,
        worker: &WorkerId,
        profile: &WorkerProfile,
        function_id: FunctionId,
    ) -> (SubmissionPayload, Option<TestRunReport>, bool) {
        if self.rng.random_bool(profile.issue_probability) {
            let text = "The description does not say what to return when the input is missing.".to_string();
            return (SubmissionPayload::IssueReport { text }, None, true);
        }
        let accepted = self.accepted_behaviors.get(&function_id).copied().unwrap_or(0);
        if accepted >= profile.mark_complete_threshold {
            return (SubmissionPayload::MarkComplete, None, true);
        }
        let correct = !self.rng.random_bool(profile.defect_probability);
        let state = self.project.state();
        let f = &state.functions[&function_id];
        let n = f.tests.len() + 1;
        let test_id = format!("{}-behavior-{n}-v{}", f.name, f.version + 1);
        let inputs: Vec<Value> = f.signature.params.iter().map(|p| self.sample(&p.ty)).collect();
        let expected = f.signature.return_type.as_ref().map_or(Value::Null, |t| self.sample(t));
        let mut contribution = Contribution {
            code: Some(format!(
                "// {} behavior {n} by {worker}{}\nreturn null;\n",
                f.name,
                if correct { "" } else { " (defective)" }
            )),
            tests_added: vec![TestCase::io_pair(test_id, format!("behavior {n}"), worker.clone(), inputs, expected)],
            ..Contribution::default()
        };
        if self.rng.random_bool(profile.new_function_probability) {
            self.helpers += 1;
            let name = format!("helper{}", self.helpers);
            contribution.stubs_added.push(Stub {
                callee_name: name.clone(),
                argument_tuple: vec![Value::str("x")],
                return_value: Value::Bool(true),
                author: worker.clone(),
            });
            contribution.new_functions.push(NewFunction {
                name,
                description: format!("Checks one input of {}.", f.name),
                signature: Signature {
                    params: vec![Param::new("value", TypeRef::String)],
                    return_type: Some(TypeRef::Boolean),
                },
            });
        }
        let report = self.run_contribution(function_id, &contribution, correct);
        (SubmissionPayload::BehaviorContribution(contribution), report, correct)
    }

    /// Runs the function's tests plus the draft ones through a mock scripted
    /// from the ground-truth label.
    fn run_contribution(&self, function_id: FunctionId, draft: &Contribution, correct: bool) -> Option<TestRunReport> {
        let bundle = bundle_for(self.project.state(), function_id, Some(draft), vec![], Limits::default())?;
        let entry = bundle.entry()?;
        let mut mock = MockExecutor::new();
        for t in &bundle.tests {
            let status = if correct { TestStatus::Passed } else { TestStatus::Failed("defect".into()) };
            mock.status(&entry.name, entry.version, &t.id.0, status);
        }
        run_tests(&bundle, &mock).ok()
    }

    /// A value of type `ty`, for test inputs and expectations.
    fn sample(&self, ty: &TypeRef) -> Value {
        match ty {
            TypeRef::String => Value::str("x"),
            TypeRef::Number => Value::Number(1.0),
            TypeRef::Boolean => Value::Bool(true),
            TypeRef::List(inner) => Value::List(vec![self.sample(inner)]),
            TypeRef::Adt(name) => match self.adts.iter().find(|a| &a.name == name) {
                Some(adt) => Value::object(adt.fields.iter().map(|f| (f.name.clone(), self.sample(&f.ty)))),
                None => Value::Null,
            },
        }
    }
}

/// Runs a simulation to completion and checks the resulting log.
pub fn run_simulation(config: &SimulationConfig) -> Result<SimulationOutcome, SimError> {
    let policy = config.validate()?;
    let request = config.client_request()?;
    let adts = request.adts.clone();
    let project = Project::create(ClientId(CLIENT.into()), request, policy, LogicalTime::ZERO)?;
    let mut windows = Vec::new();
    let mut start = 0;
    for s in &config.sessions {
        windows.push((start, start + s.duration_minutes * 60));
        start += (s.duration_minutes + config.gap_minutes) * 60;
    }
    let workers = (0..config.worker_count as usize)
        .map(|i| SimWorker { id: WorkerId::new(format!("w{}", i + 1)), profile: config.profile(i), plan: Plan::Fetch })
        .collect();
    let sim = Sim {
        config,
        project,
        rng: ChaCha8Rng::seed_from_u64(config.seed),
        workers,
        agenda: BinaryHeap::new(),
        order: 0,
        windows,
        correct: BTreeMap::new(),
        accepted_behaviors: BTreeMap::new(),
        helpers: 0,
        adts,
    };
    let project = sim.run()?;
    let events = project.into_events();
    let (report, metrics) = replay(&events);
    Ok(SimulationOutcome { metrics, events, state: report.state })
}

/// `completed + skipped + inFlight = fetched` for every kind.
pub fn fetch_identity_holds(m: &SimulationMetrics) -> bool {
    m.fetched_by_kind.iter().all(|(k, fetched)| {
        let get = |map: &BTreeMap<TaskKindLabel, u64>| map.get(k).copied().unwrap_or(0);
        get(&m.completed_by_kind) + get(&m.skipped_by_kind) + get(&m.in_flight_by_kind) == *fetched
    })
}

/// Live assignments at the end of a state, for cross-checking in-flight counts.
pub fn live_assignments(state: &ProjectState) -> usize {
    state.assignments.values().filter(|a| a.status == AssignmentStatus::Live).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::to_canonical_string;

    fn small(seed: u64) -> SimulationConfig {
        SimulationConfig {
            seed,
            worker_count: 4,
            sessions: vec![Session { duration_minutes: 45, workers: None }],
            ..SimulationConfig::default()
        }
    }

    #[test]
    fn default_run_is_clean_and_conserves_reviews() {
        let out = run_simulation(&SimulationConfig::default()).unwrap();
        let m = &out.metrics;
        assert!(m.invariant_violations.is_empty(), "{:?}", m.invariant_violations);
        assert_eq!(m.counts.reviews_generated, m.counts.ifb_submissions);
        assert!(m.counts.reviews_recorded > 10, "{m:?}");
        assert!(fetch_identity_holds(m), "{m:?}");
        let in_flight: u64 = m.in_flight_by_kind.values().sum();
        assert_eq!(in_flight as usize, live_assignments(&out.state));
    }

    #[test]
    fn identical_configs_give_identical_logs() {
        let a = run_simulation(&small(7)).unwrap();
        let b = run_simulation(&small(7)).unwrap();
        assert_eq!(a.events, b.events);
        assert_eq!(to_canonical_string(&a.metrics).unwrap(), to_canonical_string(&b.metrics).unwrap());
        let c = run_simulation(&small(8)).unwrap();
        assert_ne!(a.events, c.events);
    }

    #[test]
    fn single_worker_holds_one_assignment_at_a_time() {
        let config = SimulationConfig {
            worker_count: 1,
            per_worker: vec![WorkerProfile { skip_probability: 0.0, ..WorkerProfile::default() }],
            ..small(3)
        };
        let out = run_simulation(&config).unwrap();
        assert_eq!(out.metrics.max_concurrent_assignments, 1);
    }

    #[test]
    fn strict_reviewers_accept_everything_without_defects() {
        let config = SimulationConfig {
            per_worker: vec![WorkerProfile { defect_probability: 0.0, ..WorkerProfile::default() }],
            ..small(11)
        };
        let m = run_simulation(&config).unwrap().metrics;
        assert!(m.counts.reviews_recorded > 0);
        assert_eq!(m.reviews_accepted, m.counts.reviews_recorded);
    }

    #[test]
    fn config_validation() {
        let mut c = small(1);
        c.worker_count = 0;
        assert!(matches!(run_simulation(&c), Err(SimError::Config(_))));
        let mut c = small(1);
        c.per_worker = vec![WorkerProfile { skip_probability: 1.5, ..WorkerProfile::default() }];
        assert!(matches!(run_simulation(&c), Err(SimError::Config(_))));
        let mut c = small(1);
        c.sessions[0].workers = Some(vec![9]);
        assert!(matches!(run_simulation(&c), Err(SimError::Config(_))));
        let mut c = small(1);
        c.client_request_fixture = Some("/nonexistent/request.json".into());
        assert!(matches!(run_simulation(&c), Err(SimError::Fixture { .. })));
    }

    #[test]
    fn config_from_toml() {
        let text = r#"
            seed = 5
            workerCount = 2
            gapMinutes = 0
            [[sessions]]
            durationMinutes = 30
            [[sessions]]
            durationMinutes = 30
            workers = [1]
            [[perWorker]]
            skipProbability = 0.0
            reviewStrictness = { correct = [5], defective = [2] }
            [policy]
            mode = "random"
            seed = 9
        "#;
        let c = SimulationConfig::from_toml(text).unwrap();
        assert_eq!(c.seed, 5);
        assert_eq!(c.sessions[1].workers, Some(vec![1]));
        assert_eq!(c.profile(1).review_strictness.correct, vec![5]);
        assert!(run_simulation(&c).unwrap().metrics.invariant_violations.is_empty());
    }

    #[test]
    fn session_boundaries_are_respected() {
        let config = SimulationConfig {
            worker_count: 2,
            sessions: vec![
                Session { duration_minutes: 20, workers: Some(vec![0]) },
                Session { duration_minutes: 20, workers: Some(vec![1]) },
            ],
            gap_minutes: 10,
            ..small(2)
        };
        let out = run_simulation(&config).unwrap();
        for e in &out.events {
            if let EventKind::MicrotaskAssigned { worker, .. } = &e.kind {
                let t = e.timestamp.0;
                match worker.0.as_str() {
                    "w1" => assert!(t < 20 * 60, "{t}"),
                    "w2" => assert!((30 * 60..50 * 60).contains(&t), "{t}"),
                    other => panic!("{other}"),
                }
            }
        }
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median_minutes(vec![]), None);
        assert_eq!(median_minutes(vec![180, 60, 120]), Some(2.0));
        assert_eq!(median_minutes(vec![60, 120]), Some(1.5));
    }
}
