use crowdms_core::event::{AwardReason, EventKind, ProjectEvent};
use crowdms_core::fixtures::{self, todo};
use crowdms_core::model::{
    ClientId, Contribution, FunctionId, FunctionState, IssueId, IssueResolution, LogicalTime, MicrotaskKind, Origin,
    Param, SubmissionPayload, TypeRef, WorkerId,
};
use crowdms_core::sandbox::{TestResult, TestRunReport, TestStatus};
use crowdms_core::scheduler::{Assignment, AssignmentPolicy, FetchOutcome};
use crowdms_core::state::ProjectState;
use crowdms_core::value::to_canonical_string;
use crowdms_core::workflow::init_project;
use crowdms_core::{CommandError, Project};

fn client() -> ClientId {
    ClientId("acme".into())
}

fn w(name: &str) -> WorkerId {
    WorkerId::new(name)
}

fn todo_project() -> Project {
    Project::create(client(), fixtures::todo_request(), AssignmentPolicy::default(), LogicalTime::ZERO).unwrap()
}

fn single_endpoint_project() -> Project {
    let mut request = fixtures::todo_request();
    request.endpoints.truncate(1);
    Project::create(client(), request, AssignmentPolicy::default(), LogicalTime::ZERO).unwrap()
}

fn assign(p: &mut Project, worker: &str, now: u64) -> Assignment {
    match p.fetch(&w(worker), LogicalTime(now)).unwrap() {
        FetchOutcome::Assigned(a) => a,
        FetchOutcome::NoneAvailable => panic!("nothing for {worker}"),
    }
}

fn names(events: &[ProjectEvent]) -> Vec<&'static str> {
    events.iter().map(|e| e.kind.name()).collect()
}

fn code(text: &str) -> SubmissionPayload {
    SubmissionPayload::BehaviorContribution(Contribution { code: Some(text.into()), ..Contribution::default() })
}

/// Runs `f` and returns the events it appended.
fn appended(p: &mut Project, f: impl FnOnce(&mut Project)) -> Vec<ProjectEvent> {
    let before = p.events().len();
    f(p);
    p.events()[before..].to_vec()
}

/// w1 submits `payload` on the only IFB; w2 picks up the review.
fn submitted(payload: SubmissionPayload) -> (Project, Assignment) {
    let mut p = single_endpoint_project();
    let a = assign(&mut p, "w1", 60);
    p.submit_work(&w("w1"), a.assignment, payload, None, LogicalTime(120)).unwrap();
    let r = assign(&mut p, "w2", 180);
    assert!(matches!(r.kind, MicrotaskKind::Review { .. }));
    (p, r)
}

fn generated_ifbs(events: &[ProjectEvent]) -> Vec<(FunctionId, Option<String>)> {
    events
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::MicrotaskGenerated { kind: MicrotaskKind::ImplementFunctionBehavior { function_id, rework_feedback }, .. } => {
                Some((*function_id, rework_feedback.clone()))
            }
            _ => None,
        })
        .collect()
}

fn awards(events: &[ProjectEvent]) -> Vec<(String, u32)> {
    events
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::ScoreAwarded { worker, points, .. } => Some((worker.0.clone(), *points)),
            _ => None,
        })
        .collect()
}

#[test]
fn todo_request_initializes_twelve_functions() {
    let kinds = init_project(client(), fixtures::todo_request(), AssignmentPolicy::default()).unwrap();
    let count = |name: &str| kinds.iter().filter(|k| k.name() == name).count();
    assert_eq!((count("ProjectCreated"), count("FunctionCreated"), count("MicrotaskGenerated")), (1, 12, 12));
    assert_eq!(kinds.len(), 25);
    let p = todo_project();
    let status = p.status();
    assert!(!status.complete);
    assert_eq!(status.live.total(), 12);
    assert_eq!(p.state().queue.len(), 12);
    for f in p.state().functions.values() {
        assert!(f.code.is_empty() && f.tests.is_empty() && f.version == 0);
    }
}

#[test]
fn one_endpoint_and_invalid_requests() {
    let mut one = fixtures::todo_request();
    one.endpoints.truncate(1);
    let kinds = init_project(client(), one, AssignmentPolicy::default()).unwrap();
    assert_eq!(kinds.iter().map(|k| k.name()).collect::<Vec<_>>(), ["ProjectCreated", "FunctionCreated", "MicrotaskGenerated"]);

    let mut bad = fixtures::todo_request();
    bad.endpoints[3].params[0].ty = TypeRef::adt("Missing");
    match init_project(client(), bad, AssignmentPolicy::default()) {
        Err(CommandError::Invalid(v)) => assert!(v.iter().any(|v| v.message.contains("Missing"))),
        other => panic!("{other:?}"),
    }
}

#[test]
fn contribution_generates_one_review_and_is_staged() {
    let mut p = todo_project();
    let a = assign(&mut p, "w1", 0);
    let events = appended(&mut p, |p| {
        p.submit_work(&w("w1"), a.assignment, code("return 1;"), None, LogicalTime(300)).unwrap();
    });
    assert_eq!(names(&events), ["SubmissionReceived", "MicrotaskGenerated"]);
    assert!(matches!(&events[1].kind, EventKind::MicrotaskGenerated { kind: MicrotaskKind::Review { .. }, .. }));
    let f = &p.state().functions[&a.kind.function_id()];
    assert_eq!((f.code.as_str(), f.version), ("", 0));
}

#[test]
fn new_function_is_created_with_its_own_ifb() {
    let mut p = todo_project();
    let a = assign(&mut p, "p8", 0);
    let parent = a.kind.function_id();
    assert_eq!(p.state().functions[&parent].name, "createTodo");
    let contribution = Contribution {
        code: todo::body("createTodo", todo::Variant::Corrected).map(String::from),
        new_functions: vec![todo::date_checker()],
        stubs_added: vec![todo::date_checker_stub(&w("p8"))],
        ..Contribution::default()
    };
    let payload = SubmissionPayload::BehaviorContribution(contribution);
    let events = appended(&mut p, |p| {
        p.submit_work(&w("p8"), a.assignment, payload, None, LogicalTime(300)).unwrap();
    });
    assert_eq!(names(&events), ["SubmissionReceived", "MicrotaskGenerated", "FunctionCreated", "MicrotaskGenerated"]);
    let checker = p.state().function_by_name(todo::DATE_CHECKER).unwrap();
    assert_eq!(checker.origin, Origin::CrowdCreated { creator: w("p8"), parent });
    assert_eq!(generated_ifbs(&events), vec![(checker.id, None)]);
    assert_eq!(p.state().functions.len(), 13);
}

#[test]
fn issue_report_halts_without_review() {
    let mut p = todo_project();
    let a = assign(&mut p, "w1", 0);
    let f = a.kind.function_id();
    let report = SubmissionPayload::IssueReport { text: "signature missing parameter".into() };
    let events = appended(&mut p, |p| {
        p.submit_work(&w("w1"), a.assignment, report, None, LogicalTime(60)).unwrap();
    });
    assert_eq!(names(&events), ["SubmissionReceived", "IssueOpened"]);
    assert_eq!(p.state().functions[&f].state, FunctionState::Halted { issue: IssueId(1) });
    assert_eq!(p.state().live_microtasks_for(f), 0);
    assert!(!p.status().complete);
}

#[test]
fn low_rating_requests_rework_with_feedback() {
    let (mut p, r) = submitted(code("if (!valid(date)) throw 1;"));
    let f = r.kind.function_id();
    let feedback = "only checked date validity";
    let events = appended(&mut p, |p| {
        p.submit_review(&w("w2"), r.assignment, 2, Some(feedback.into()), LogicalTime(240)).unwrap();
    });
    assert_eq!(
        names(&events),
        ["ReviewRecorded", "ContributionApplied", "ScoreAwarded", "ScoreAwarded", "ReworkRequested", "MicrotaskGenerated", "NotificationEmitted"]
    );
    assert_eq!(awards(&events), vec![("w1".into(), 4), ("w2".into(), 5)]);
    assert_eq!(generated_ifbs(&events), vec![(f, Some(feedback.to_string()))]);
    // The rejected code is in place for the rework.
    assert_eq!(p.state().functions[&f].code, "if (!valid(date)) throw 1;");
}

#[test]
fn four_stars_continue_the_chain() {
    let (mut p, r) = submitted(code("return 1;"));
    let f = r.kind.function_id();
    let events = appended(&mut p, |p| {
        p.submit_review(&w("w2"), r.assignment, 4, None, LogicalTime(240)).unwrap();
    });
    assert_eq!(awards(&events), vec![("w1".into(), 8), ("w2".into(), 5)]);
    assert_eq!(generated_ifbs(&events), vec![(f, None)]);
    assert!(matches!(
        events.iter().find(|e| e.kind.name() == "ScoreAwarded").unwrap().kind,
        EventKind::ScoreAwarded { reason: AwardReason::ImplementerAward { stars: 4 }, .. }
    ));
    assert_eq!(p.state().functions[&f].version, 1);
    assert!(events.iter().all(|e| e.batch == events[0].batch));
}

#[test]
fn accepted_completion_claim_ends_the_function() {
    let (mut p, r) = submitted(SubmissionPayload::MarkComplete);
    let f = r.kind.function_id();
    let events = appended(&mut p, |p| {
        p.submit_review(&w("w2"), r.assignment, 5, None, LogicalTime(240)).unwrap();
    });
    assert!(names(&events).contains(&"FunctionCompleted"));
    assert!(generated_ifbs(&events).is_empty());
    assert_eq!(p.state().functions[&f].state, FunctionState::Completed);
    assert_eq!(p.state().live_microtasks_for(f), 0);
}

#[test]
fn invalid_reviews_append_nothing() {
    let (mut p, r) = submitted(code("return 1;"));
    let before = p.events().len();
    for (stars, feedback) in [(3, None), (1, Some("  ".to_string())), (0, Some("x".to_string())), (6, None)] {
        let err = p.submit_review(&w("w2"), r.assignment, stars, feedback, LogicalTime(240)).unwrap_err();
        assert!(matches!(err, CommandError::Invalid(_)), "{stars}: {err:?}");
    }
    assert_eq!(p.events().len(), before);
    // Five stars need no feedback.
    p.submit_review(&w("w2"), r.assignment, 5, None, LogicalTime(240)).unwrap();
}

#[test]
fn failing_tests_may_still_be_submitted() {
    let mut p = single_endpoint_project();
    let a = assign(&mut p, "w1", 0);
    let report = TestRunReport {
        bundle_id: "b".into(),
        per_test: vec![TestResult { status: TestStatus::Failed("red".into()), ..TestResult::errored(crowdms_core::model::TestId("t1".into()), "") }],
        persistence_final_state: vec![],
    };
    p.submit_work(&w("w1"), a.assignment, code("return;"), Some(report), LogicalTime(60)).unwrap();
    assert!(matches!(assign(&mut p, "w2", 90).kind, MicrotaskKind::Review { .. }));
}

fn halted() -> (Project, FunctionId) {
    let mut p = todo_project();
    let a = assign(&mut p, "w1", 0);
    let report = SubmissionPayload::IssueReport { text: "signature missing parameter".into() };
    p.submit_work(&w("w1"), a.assignment, report, None, LogicalTime(60)).unwrap();
    (p, a.kind.function_id())
}

#[test]
fn resolving_with_a_new_parameter_resumes_work() {
    let (mut p, f) = halted();
    let mut signature = p.state().functions[&f].signature.clone();
    signature.params.push(Param::new("userId", TypeRef::String));
    let resolution = IssueResolution { description: None, signature: Some(signature.clone()) };
    let events = p.resolve_issue(&client(), IssueId(1), &resolution, LogicalTime(600)).unwrap();
    assert_eq!(generated_ifbs(&events), vec![(f, None)]);
    let artifact = &p.state().functions[&f];
    assert_eq!(artifact.state, FunctionState::AwaitingWork);
    assert_eq!(artifact.signature, signature);
    assert_eq!(p.state().live_microtasks_for(f), 1);

    let again = p.resolve_issue(&client(), IssueId(1), &resolution, LogicalTime(700));
    assert!(again.is_err());
}

#[test]
fn resolving_unchanged_or_by_someone_else() {
    let (mut p, f) = halted();
    let err = p.resolve_issue(&ClientId("other".into()), IssueId(1), &IssueResolution::default(), LogicalTime(600));
    assert!(matches!(err, Err(CommandError::Unauthorized(_))));
    let events = p.resolve_issue(&client(), IssueId(1), &IssueResolution::default(), LogicalTime(600)).unwrap();
    assert_eq!(generated_ifbs(&events).len(), 1);
    assert_eq!(p.state().functions[&f].state, FunctionState::AwaitingWork);
    assert!(p.resolve_issue(&client(), IssueId(9), &IssueResolution::default(), LogicalTime(600)).is_err());
}

#[test]
fn expired_assignment_cannot_submit() {
    let mut p = todo_project();
    let a = assign(&mut p, "w1", 0);
    p.tick(LogicalTime::from_minutes(15)).unwrap();
    let err = p.submit_work(&w("w1"), a.assignment, code("x"), None, LogicalTime::from_minutes(15)).unwrap_err();
    assert_eq!(err, CommandError::StaleAssignment(a.assignment));
}

#[test]
fn duplicate_submission_returns_first_result() {
    let mut p = todo_project();
    let a = assign(&mut p, "w1", 0);
    let first = p.submit_work(&w("w1"), a.assignment, code("x"), None, LogicalTime(10)).unwrap();
    let n = p.events().len();
    let second = p.submit_work(&w("w1"), a.assignment, code("y"), None, LogicalTime(20)).unwrap();
    assert_eq!(second.submission_id, first.submission_id);
    assert!(second.duplicate && !first.duplicate);
    assert_eq!(p.events().len(), n);
}

#[test]
fn replay_reproduces_state_exactly() {
    let (mut p, r) = submitted(code("return 1;"));
    p.submit_review(&w("w2"), r.assignment, 3, Some("more tests".into()), LogicalTime(240)).unwrap();
    let replayed = ProjectState::replay(p.events()).unwrap();
    assert_eq!(&replayed, p.state());
    assert_eq!(to_canonical_string(&replayed).unwrap(), to_canonical_string(p.state()).unwrap());
}

#[test]
fn status_is_incomplete_while_a_function_is_halted() {
    let (p, _) = halted();
    let status = p.status();
    assert!(!status.complete);
    assert_eq!(status.functions.iter().filter(|f| matches!(f.state, FunctionState::Halted { .. })).count(), 1);
}
