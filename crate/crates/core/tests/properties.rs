use std::collections::{BTreeSet, HashSet};

use crowdms_core::config::{AssignmentSection, ModeName};
use crowdms_core::fixtures;
use crowdms_core::invariants::check_log;
use crowdms_core::model::{
    ClientId, ClientRequest, LogicalTime, MicrotaskId, Param, Stub, TestCase, TestId, TestKind, TypeRef, WorkerId,
};
use crowdms_core::sandbox::{
    report_violations, resolve_call, run_tests, BundleFunction, CallResolution, ExecutionBundle, Limits,
    MockExecutor, SeedDocument, Step, TestStatus,
};
use crowdms_core::scheduler::{AssignmentPolicy, FetchOutcome};
use crowdms_core::sim::{fetch_identity_holds, run_simulation, Session, SimulationConfig};
use crowdms_core::validate::validate_client_request;
use crowdms_core::value::Value;
use crowdms_core::workflow::init_project;
use crowdms_core::{CommandError, EventKind, Project};
use proptest::prelude::*;

fn arb_value() -> impl Strategy<Value = Value> {
    let leaf = prop_oneof![
        Just(Value::Null),
        any::<bool>().prop_map(Value::Bool),
        (-20i32..20).prop_map(|n| Value::Number(f64::from(n))),
        (-4i32..4).prop_map(|n| Value::Number(f64::from(n) / 2.0)),
        "[ab]{0,2}".prop_map(Value::String),
    ];
    leaf.prop_recursive(3, 16, 3, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..3).prop_map(Value::List),
            prop::collection::btree_map("[ab]{1}", inner, 0..3).prop_map(Value::Object),
        ]
    })
}

/// One change to the ToDo request that breaks a single validation rule.
#[derive(Debug, Clone)]
enum Mutation {
    EmptyProjectName,
    NoEndpoints,
    EmptyFunctionName(usize),
    NonIdentifierFunctionName(usize),
    ReservedFunctionName(usize, usize),
    DuplicateFunctionName(usize, usize),
    EmptyDescription(usize),
    UnresolvedParamType(usize),
    UnresolvedReturnType(usize),
    DuplicateParam(usize),
    EmptyParamName(usize),
    AdtShadowsPrimitive(usize, usize),
    DuplicateAdt,
    UnresolvedFieldType(usize),
    DuplicateField(usize),
    AdtCycle,
}

const RESERVED: [&str; 5] = ["save", "get", "update", "remove", "list"];
const PRIMITIVES: [&str; 4] = ["String", "Number", "Boolean", "number"];

fn arb_mutation() -> impl Strategy<Value = Mutation> {
    let e = 0..12usize;
    prop_oneof![
        Just(Mutation::EmptyProjectName),
        Just(Mutation::NoEndpoints),
        e.clone().prop_map(Mutation::EmptyFunctionName),
        e.clone().prop_map(Mutation::NonIdentifierFunctionName),
        (e.clone(), 0..RESERVED.len()).prop_map(|(i, r)| Mutation::ReservedFunctionName(i, r)),
        (e.clone(), e.clone()).prop_filter("distinct", |(a, b)| a != b).prop_map(|(a, b)| Mutation::DuplicateFunctionName(a, b)),
        e.clone().prop_map(Mutation::EmptyDescription),
        e.clone().prop_map(Mutation::UnresolvedParamType),
        e.clone().prop_map(Mutation::UnresolvedReturnType),
        e.clone().prop_map(Mutation::DuplicateParam),
        e.clone().prop_map(Mutation::EmptyParamName),
        (0..8usize, 0..PRIMITIVES.len()).prop_map(|(a, p)| Mutation::AdtShadowsPrimitive(a, p)),
        Just(Mutation::DuplicateAdt),
        (0..8usize).prop_map(Mutation::UnresolvedFieldType),
        (0..8usize).prop_map(Mutation::DuplicateField),
        Just(Mutation::AdtCycle),
    ]
}

fn apply(request: &mut ClientRequest, m: &Mutation) {
    let n = request.endpoints.len();
    let adts = request.adts.len();
    match *m {
        Mutation::EmptyProjectName => request.project_name = " ".into(),
        Mutation::NoEndpoints => request.endpoints.clear(),
        Mutation::EmptyFunctionName(i) => request.endpoints[i % n].function_name.clear(),
        Mutation::NonIdentifierFunctionName(i) => request.endpoints[i % n].function_name = "get todo".into(),
        Mutation::ReservedFunctionName(i, r) => request.endpoints[i % n].function_name = RESERVED[r].into(),
        Mutation::DuplicateFunctionName(a, b) => {
            request.endpoints[a % n].function_name = request.endpoints[b % n].function_name.clone()
        }
        Mutation::EmptyDescription(i) => request.endpoints[i % n].description = "\t".into(),
        Mutation::UnresolvedParamType(i) => request.endpoints[i % n].params.push(Param::new("extra", TypeRef::adt("Nope"))),
        Mutation::UnresolvedReturnType(i) => request.endpoints[i % n].return_type = Some(TypeRef::list_of(TypeRef::adt("Nope"))),
        Mutation::DuplicateParam(i) => {
            let params = &mut request.endpoints[i % n].params;
            params.push(Param::new("twice", TypeRef::String));
            params.push(Param::new("twice", TypeRef::Number));
        }
        Mutation::EmptyParamName(i) => request.endpoints[i % n].params.push(Param::new("", TypeRef::String)),
        Mutation::AdtShadowsPrimitive(a, p) => request.adts[a % adts].name = PRIMITIVES[p].into(),
        Mutation::DuplicateAdt => {
            let copy = request.adts[0].clone();
            request.adts.push(copy);
        }
        Mutation::UnresolvedFieldType(a) => {
            request.adts[a % adts].fields[0].ty = TypeRef::adt("Nope");
        }
        Mutation::DuplicateField(a) => {
            let field = request.adts[a % adts].fields[0].clone();
            request.adts[a % adts].fields.push(field);
        }
        Mutation::AdtCycle => {
            let a = request.adts[0].name.clone();
            let b = request.adts[1 % adts].name.clone();
            request.adts[0].fields[0].ty = TypeRef::adt(b);
            request.adts[1 % adts].fields[0].ty = TypeRef::adt(a);
        }
    }
}

#[test]
fn fixture_is_valid() {
    assert_eq!(validate_client_request(&fixtures::todo_request()), vec![]);
}

fn policies() -> impl Strategy<Value = AssignmentSection> {
    (any::<bool>(), 0u64..1000, 5u64..30, any::<bool>(), 0u32..3).prop_flat_map(
        |(random, seed, limit, self_review, cooldown)| {
            (1..limit).prop_map(move |warn| AssignmentSection {
                mode: if random { ModeName::Random } else { ModeName::Fifo },
                seed,
                time_limit_minutes: limit,
                warning_at_minutes: warn,
                self_review_allowed: self_review,
                skip_cooldown: cooldown,
            })
        },
    )
}

fn fresh(request: ClientRequest, policy: AssignmentPolicy) -> Project {
    Project::create(ClientId("acme".into()), request, policy, LogicalTime::ZERO).unwrap()
}

fn generated(p: &Project) -> Vec<MicrotaskId> {
    p.events()
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::MicrotaskGenerated { microtask_id, .. } => Some(*microtask_id),
            _ => None,
        })
        .collect()
}

fn bundle(tests: Vec<TestCase>, functions: Vec<BundleFunction>, stubs: Vec<Stub>, seed: Vec<SeedDocument>) -> ExecutionBundle {
    ExecutionBundle {
        bundle_id: "b".into(),
        entry_function: functions[0].name.clone(),
        functions,
        tests,
        stubs,
        persistence_seed: seed,
        limits: Limits::default(),
    }
}

fn function(name: &str, implemented: bool) -> BundleFunction {
    let source = if implemented { "return 1;" } else { "" };
    BundleFunction { name: name.into(), params: vec![], source: source.into(), version: 0 }
}

fn code_test(id: &str) -> TestCase {
    TestCase {
        id: TestId(id.into()),
        kind: TestKind::CodeTest { source: String::new() },
        description: String::new(),
        author: WorkerId::new("w"),
    }
}

const CALLEES: [&str; 3] = ["alpha", "beta", "gamma"];

fn arb_stubs() -> impl Strategy<Value = Vec<Stub>> {
    prop::collection::btree_map((0..CALLEES.len(), 0i32..3), any::<bool>(), 0..6).prop_map(|m| {
        m.into_iter()
            .map(|((c, arg), ret)| Stub {
                callee_name: CALLEES[c].into(),
                argument_tuple: vec![Value::Number(f64::from(arg))],
                return_value: Value::Bool(ret),
                author: WorkerId::new("w"),
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn single_mutations_are_rejected(m in arb_mutation()) {
        let mut request = fixtures::todo_request();
        apply(&mut request, &m);
        prop_assert!(!validate_client_request(&request).is_empty(), "{:?} accepted", m);
        let rejected = matches!(
            init_project(ClientId("acme".into()), request, AssignmentPolicy::default()),
            Err(CommandError::Invalid(_))
        );
        prop_assert!(rejected);
    }

    #[test]
    fn fifo_fetch_follows_enqueue_order(endpoints in 1usize..=12, workers in 1usize..=12) {
        let mut request = fixtures::todo_request();
        request.endpoints.truncate(endpoints);
        let mut p = fresh(request, AssignmentPolicy::default());
        let queued = generated(&p);
        let mut fetched = Vec::new();
        for i in 0..workers {
            if let FetchOutcome::Assigned(a) = p.fetch(&WorkerId::new(format!("w{i}")), LogicalTime(i as u64)).unwrap() {
                fetched.push(a.microtask_id);
            }
        }
        prop_assert_eq!(fetched.len(), workers.min(endpoints));
        prop_assert_eq!(&fetched[..], &queued[..fetched.len()]);
    }

    #[test]
    fn expiry_is_idempotent(fetch_times in prop::collection::vec(0u64..3600, 1..8), at in 0u64..7200, repeats in 1usize..4) {
        let mut p = fresh(fixtures::todo_request(), AssignmentPolicy::default());
        let mut times = fetch_times;
        times.sort_unstable();
        for (i, t) in times.iter().enumerate() {
            p.fetch(&WorkerId::new(format!("w{i}")), LogicalTime(*t)).unwrap();
        }
        let now = LogicalTime(at.max(times[times.len() - 1]));
        p.tick(now).unwrap();
        let settled = p.state().clone();
        for _ in 0..repeats {
            prop_assert!(p.tick(now).unwrap().is_empty());
        }
        prop_assert_eq!(p.state(), &settled);
        prop_assert!(check_log(p.events()).is_clean());
    }

    #[test]
    fn io_pairs_pass_exactly_on_canonical_equality(expected in arb_value(), actual in arb_value()) {
        let test = TestCase::io_pair("t", "", WorkerId::new("w"), vec![], expected.clone());
        let mut mock = MockExecutor::new();
        mock.steps("f", 0, "t", vec![Step::Return { value: actual.clone() }]);
        let report = run_tests(&bundle(vec![test], vec![function("f", true)], vec![], vec![]), &mock).unwrap();
        let equal = expected.canonicalize().unwrap() == actual.canonicalize().unwrap();
        prop_assert_eq!(report.per_test[0].status == TestStatus::Passed, equal);
    }

    #[test]
    fn tests_never_see_each_others_writes(
        seed_ids in prop::collection::btree_set("[a-f]{1,2}", 0..5),
        writes in prop::collection::vec(prop::collection::vec(("[a-f]{1,2}", arb_value()), 0..4), 1..4),
    ) {
        let seed: Vec<SeedDocument> = seed_ids
            .iter()
            .map(|id| SeedDocument { collection: "todos".into(), id: id.clone(), value: Value::str(id.clone()) })
            .collect();
        let seeded = Value::List(seed.iter().map(|d| d.value.clone()).collect());
        let mut mock = MockExecutor::new();
        let mut tests = Vec::new();
        for (i, docs) in writes.iter().enumerate() {
            let id = format!("writer{i}");
            let mut steps = vec![Step::List { collection: "todos".into() }, Step::Expect { expected: seeded.clone() }];
            steps.extend(docs.iter().map(|(doc, value)| Step::Save {
                collection: "todos".into(),
                id: doc.clone(),
                value: value.clone(),
            }));
            mock.steps("f", 0, &id, steps);
            tests.push(code_test(&id));
        }
        mock.steps("f", 0, "observer", vec![Step::List { collection: "todos".into() }, Step::Expect { expected: seeded }]);
        tests.push(code_test("observer"));
        let report = run_tests(&bundle(tests, vec![function("f", true)], vec![], seed.clone()), &mock).unwrap();
        for r in &report.per_test {
            prop_assert_eq!(&r.status, &TestStatus::Passed, "{}", r.test_id);
        }
        prop_assert_eq!(report.persistence_final_state, seed);
    }

    #[test]
    fn stub_traffic_is_well_formed(
        stubs in arb_stubs(),
        implemented in prop::collection::vec(any::<bool>(), CALLEES.len()),
        calls in prop::collection::vec((0..CALLEES.len(), 0i32..3), 0..8),
    ) {
        let mut functions = vec![function("entry", true)];
        functions.extend(CALLEES.iter().zip(&implemented).map(|(c, i)| function(c, *i)));
        let implemented_names: HashSet<String> =
            CALLEES.iter().zip(&implemented).filter(|(_, i)| **i).map(|(c, _)| c.to_string()).collect();
        let steps: Vec<Step> = calls
            .iter()
            .map(|(c, a)| Step::Call { callee: CALLEES[*c].into(), args: vec![Value::Number(f64::from(*a))] })
            .collect();
        let mut mock = MockExecutor::new();
        mock.steps("entry", 0, "t", steps);
        for name in &implemented_names {
            for a in 0..3 {
                mock.real_call(name, &[Value::Number(f64::from(a))], Value::Null);
            }
        }
        let b = bundle(vec![code_test("t")], functions, stubs.clone(), vec![]);
        let report = run_tests(&b, &mock).unwrap();
        prop_assert!(report_violations(&b, &report).is_empty());

        // Calls up to and including the first miss happen; hits and misses
        // match the resolution rules.
        let mut hits = 0;
        let mut misses = 0;
        for (c, a) in &calls {
            match resolve_call(CALLEES[*c], &[Value::Number(f64::from(*a))], &stubs, &implemented_names) {
                CallResolution::UseStub { .. } => hits += 1,
                CallResolution::CallReal => {}
                CallResolution::MissError => {
                    misses += 1;
                    break;
                }
            }
        }
        let r = &report.per_test[0];
        prop_assert_eq!((r.stub_hits.len(), r.stub_misses.len()), (hits, misses));
        prop_assert_eq!(matches!(r.status, TestStatus::Errored(_)), misses == 1);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn simulated_logs_satisfy_every_invariant(
        seed in 0u64..1_000_000,
        workers in 1u32..8,
        minutes in prop::collection::vec(10u64..60, 1..3),
        policy in policies(),
    ) {
        let config = SimulationConfig {
            seed,
            worker_count: workers,
            sessions: minutes.iter().map(|m| Session { duration_minutes: *m, workers: None }).collect(),
            policy,
            ..SimulationConfig::default()
        };
        let outcome = run_simulation(&config).unwrap();
        let report = check_log(&outcome.events);
        prop_assert!(report.is_clean(), "{:?}", report.violations);
        prop_assert!(fetch_identity_holds(&outcome.metrics));
        let workers_seen: BTreeSet<_> = outcome
            .events
            .iter()
            .filter_map(|e| match &e.kind {
                EventKind::MicrotaskAssigned { worker, .. } => Some(worker.clone()),
                _ => None,
            })
            .collect();
        prop_assert!(workers_seen.len() <= workers as usize);
    }
}
