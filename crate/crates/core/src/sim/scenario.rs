//! Scripted crowds: the ToDo end-to-end run and the idle-worker timeout.

use crate::assembler::{assemble_project, AssembleError, AssemblyOptions, ProjectArtifactTree};
use crate::event::{EventKind, ProjectEvent};
use crate::fixtures::todo::{self, BehaviorCheck, BehaviorModel, OracleScore, Variant};
use crate::fixtures::{self, todo::DATE_CHECKER};
use crate::model::{
    AssignmentId, ClientId, Contribution, FunctionState, LogicalTime, MicrotaskKind, NotificationKind,
    SubmissionPayload, WorkerId,
};
use crate::sandbox::{bundle_for, run_tests, Limits, MockExecutor, TestRunReport};
use crate::scheduler::{AssignmentPolicy, FetchOutcome};
use crate::workflow::{CommandError, Project};

use super::CLIENT;

/// The createTodo implementer, who also creates the date checker.
pub const CHECKER_AUTHOR: &str = "p8";

#[derive(Debug)]
pub struct TodoRun {
    pub project: Project,
    pub tree: ProjectArtifactTree,
    pub oracle: OracleScore,
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Command(#[from] CommandError),
    #[error(transparent)]
    Assemble(#[from] AssembleError),
    #[error("scenario did not finish within {0} actions")]
    Stalled(usize),
}

fn checks_for(function: &str) -> Vec<BehaviorCheck> {
    todo::behavior_checks().into_iter().filter(|c| c.function == function).collect()
}

/// The first contribution to `function`: its final body, its oracle checks
/// as tests, and for createTodo the date checker plus the stub standing in
/// for it.
fn contribution(function: &str, variant: Variant, author: &WorkerId) -> Contribution {
    let mut c = Contribution {
        code: todo::body(function, variant).map(String::from),
        tests_added: checks_for(function).iter().map(|c| c.test_case(author)).collect(),
        ..Contribution::default()
    };
    if function == "createTodo" {
        c.new_functions.push(todo::date_checker());
        c.stubs_added.push(todo::date_checker_stub(author));
    }
    c
}

/// What the worker's editor shows before they submit.
fn test_run(project: &Project, function: &str, draft: &Contribution) -> Option<TestRunReport> {
    let state = project.state();
    let f = state.function_by_name(function)?;
    let bundle = bundle_for(state, f.id, Some(draft), todo::seed(), Limits::default())?;
    let mut mock = MockExecutor::new();
    BehaviorModel::script_checks(&mut mock, &bundle, &checks_for(function));
    run_tests(&bundle, &mock).ok()
}

/// Nine workers take turns fetching. Each function gets one contribution
/// with its body and tests, then a completion claim; every review gives
/// five stars, so defects in `variant` reach the finished service.
pub fn todo_end_to_end(variant: Variant) -> Result<TodoRun, ScenarioError> {
    let client = ClientId(CLIENT.into());
    let mut project = Project::create(client, fixtures::todo_request(), AssignmentPolicy::default(), LogicalTime::ZERO)?;
    let mut workers: Vec<WorkerId> = (1..=9).map(|i| WorkerId::new(format!("p{i}"))).collect();
    // createTodo is the first queued IFB; p8 should pick it up.
    workers.rotate_left(7);
    let limit = 2_000;
    let mut now = LogicalTime::ZERO;
    for step in 0..limit {
        if project.status().complete {
            let tree = assemble_project(project.state(), &AssemblyOptions::default())?;
            let oracle = todo::score(project.state(), &todo::behavior_checks());
            return Ok(TodoRun { project, tree, oracle });
        }
        now = now.plus_secs(300);
        let worker = workers[step % workers.len()].clone();
        let FetchOutcome::Assigned(a) = project.fetch(&worker, now)? else { continue };
        match a.kind {
            MicrotaskKind::Review { .. } => {
                project.submit_review(&worker, a.assignment, 5, None, now)?;
            }
            MicrotaskKind::ImplementFunctionBehavior { function_id, .. } => {
                let f = &project.state().functions[&function_id];
                let name = f.name.clone();
                let payload = if f.version == 0 {
                    SubmissionPayload::BehaviorContribution(contribution(&name, variant, &worker))
                } else {
                    SubmissionPayload::MarkComplete
                };
                let report = match &payload {
                    SubmissionPayload::BehaviorContribution(c) => test_run(&project, &name, c),
                    _ => None,
                };
                project.submit_work(&worker, a.assignment, payload, report, now)?;
            }
        }
    }
    Err(ScenarioError::Stalled(limit))
}

/// A one-endpoint project in which `w1` fetches the only IFB at 0:00 and
/// goes idle. The clock ticks at 14:00 and 15:00; `w2` then fetches the
/// re-enqueued IFB and submits a contribution at 20:00, which `w3` accepts
/// at 25:00.
pub fn idle_worker_timeout() -> Result<Project, CommandError> {
    let mut request = fixtures::todo_request();
    request.endpoints.retain(|e| e.function_name == "fetchTodo");
    let client = ClientId(CLIENT.into());
    let mut p = Project::create(client, request, AssignmentPolicy::default(), LogicalTime::ZERO)?;
    let (w1, w2, w3) = (WorkerId::new("w1"), WorkerId::new("w2"), WorkerId::new("w3"));
    let assigned = |o: FetchOutcome| -> Result<AssignmentId, CommandError> {
        match o {
            FetchOutcome::Assigned(a) => Ok(a.assignment),
            FetchOutcome::NoneAvailable => Err(CommandError::Conflict("nothing to fetch".into())),
        }
    };
    assigned(p.fetch(&w1, LogicalTime::ZERO)?)?;
    for minute in 1..=15 {
        p.tick(LogicalTime::from_minutes(minute))?;
    }
    let at = LogicalTime::from_minutes(15);
    let second = assigned(p.fetch(&w2, at)?)?;
    let body = Contribution {
        code: todo::body("fetchTodo", Variant::Corrected).map(String::from),
        ..Contribution::default()
    };
    p.submit_work(&w2, second, SubmissionPayload::BehaviorContribution(body), None, LogicalTime::from_minutes(20))?;
    let review = assigned(p.fetch(&w3, LogicalTime::from_minutes(24))?)?;
    p.submit_review(&w3, review, 5, None, LogicalTime::from_minutes(25))?;
    Ok(p)
}

/// One line per event: `sequence batch m:ss Kind details`.
pub fn describe(event: &ProjectEvent) -> String {
    let detail = match &event.kind {
        EventKind::FunctionCreated { name, .. } => name.clone(),
        EventKind::MicrotaskGenerated { microtask_id, kind } => match kind {
            MicrotaskKind::ImplementFunctionBehavior { function_id, .. } => format!("{microtask_id} IFB {function_id}"),
            MicrotaskKind::Review { submission_id, .. } => format!("{microtask_id} Review {submission_id}"),
        },
        EventKind::MicrotaskAssigned { microtask_id, worker, deadline, .. } => {
            format!("{microtask_id} {worker} until {deadline}")
        }
        EventKind::MicrotaskSkipped { microtask_id, worker, .. }
        | EventKind::MicrotaskExpired { microtask_id, worker, .. } => format!("{microtask_id} {worker}"),
        EventKind::SubmissionReceived { submission } => format!("{} {}", submission.id, submission.worker),
        EventKind::ReviewRecorded { decision, .. } => format!("{} {} stars", decision.submission_id, decision.stars),
        EventKind::ContributionApplied { function_id, version, .. } => format!("{function_id} v{version}"),
        EventKind::NotificationEmitted { notification } => {
            let what = match &notification.kind {
                NotificationKind::TimeWarning { .. } => "TimeWarning",
                NotificationKind::ReviewReceived { .. } => "ReviewReceived",
                NotificationKind::IssueResolved { .. } => "IssueResolved",
            };
            format!("{what} {}", notification.recipient)
        }
        EventKind::ScoreAwarded { worker, points, .. } => format!("{worker} {points}"),
        EventKind::FunctionCompleted { function_id } => function_id.to_string(),
        _ => String::new(),
    };
    let line = format!("{} {} {} {}", event.sequence, event.batch, event.timestamp, event.kind.name());
    if detail.is_empty() {
        line
    } else {
        format!("{line} {detail}")
    }
}

/// Names of functions that finished in `state`, for reporting.
pub fn completed_names(project: &Project) -> Vec<String> {
    project
        .state()
        .functions
        .values()
        .filter(|f| f.state == FunctionState::Completed)
        .map(|f| f.name.clone())
        .collect()
}

/// The crowd-created function of a ToDo run.
pub fn has_date_checker(project: &Project) -> bool {
    project.state().function_by_name(DATE_CHECKER).is_some_and(|f| !f.is_endpoint())
}
