use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::time::Duration;

use crowdms_core::model::{TestCase, WorkerId};
use crowdms_core::sandbox::{
    run_tests, BundleFunction, ExecutionBundle, ExecutorPort, Limits, Script, SeedDocument, Step,
    SubprocessExecutor, TestStatus,
};
use crowdms_core::value::Value;
use serde_json::json;

const BIN: &str = env!("CARGO_BIN_EXE_crowdms");

fn crowdms(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn simulate(dir: &Path, seed: &str) -> Output {
    crowdms(&["simulate", "--seed", seed, "--out", dir.to_str().unwrap()])
}

#[test]
fn simulate_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let out = simulate(&a, "7");
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).ends_with(" 0 violations\n"), "{}", stdout(&out));
    assert!(simulate(&b, "7").status.success());
    for file in ["events.ndjson", "metrics.json", "state.json"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file}");
    }
}

#[test]
fn simulate_reads_a_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("sim.toml");
    fs::write(&config, "seed = 3\nworkerCount = 2\n[policy]\nmode = \"random\"\nseed = 42\n").unwrap();
    let out = crowdms(&["simulate", "--config", config.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    fs::write(&config, "workerCount = 0\n").unwrap();
    let out = crowdms(&["simulate", "--config", config.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn replay_flags_a_deleted_review() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(simulate(tmp.path(), "1").status.success());
    let log = tmp.path().join("events.ndjson");
    let clean = crowdms(&["replay", "--log", log.to_str().unwrap()]);
    assert!(clean.status.success(), "{}", stdout(&clean));
    let metrics: serde_json::Value = serde_json::from_str(stdout(&clean).trim()).unwrap();
    assert_eq!(metrics["counts"]["reviewsGenerated"], metrics["counts"]["ifbSubmissions"]);

    let text = fs::read_to_string(&log).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let victim = lines.iter().position(|l| l.contains(r#""type":"reviewRecorded""#)).unwrap();
    let kept: Vec<&str> = lines.iter().enumerate().filter(|(i, _)| *i != victim).map(|(_, l)| *l).collect();
    let tampered = tmp.path().join("tampered.ndjson");
    fs::write(&tampered, kept.join("\n") + "\n").unwrap();
    let out = crowdms(&["replay", "--log", tampered.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let report = stdout(&out);
    assert!(report.contains("conservation"), "{report}");
    assert!(report.contains(&format!("#{} denseSequence", victim + 2)), "{report}");
}

#[test]
fn corrupt_log_names_the_sequence() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(simulate(tmp.path(), "1").status.success());
    let log = tmp.path().join("events.ndjson");
    let text = fs::read_to_string(&log).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[4] = "{not json".into();
    fs::write(&log, lines.join("\n")).unwrap();
    let out = crowdms(&["replay", "--log", log.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("sequence 5"), "{}", stderr(&out));
}

#[test]
fn dump_events_prints_one_line_per_event() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(simulate(tmp.path(), "1").status.success());
    let log = tmp.path().join("events.ndjson");
    let out = crowdms(&["dump-events", "--log", log.to_str().unwrap()]);
    let n = fs::read_to_string(&log).unwrap().lines().count();
    assert_eq!(stdout(&out).lines().count(), n);
    assert_eq!(stdout(&out).lines().next(), Some("1 1 0:00 ProjectCreated"));

    let project = tmp.path().join("data/projects/proj-7");
    fs::create_dir_all(&project).unwrap();
    fs::copy(&log, project.join("events.ndjson")).unwrap();
    let data_dir = tmp.path().join("data");
    let by_id = crowdms(&["dump-events", "--project", "proj-7", "--data-dir", data_dir.to_str().unwrap()]);
    assert!(by_id.status.success(), "{}", stderr(&by_id));
    assert_eq!(stdout(&by_id), stdout(&out));
    assert!(!crowdms(&["dump-events"]).status.success());
}

#[test]
fn todo_scenario_reports_the_oracle() {
    let tmp = tempfile::tempdir().unwrap();
    let out = crowdms(&["todo", "--variant", "defective", "--out", tmp.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.starts_with("13 functions, 12 routes, 13 files; oracle 27/34\n"), "{text}");
    assert_eq!(text.lines().filter(|l| l.starts_with("failing ")).count(), 7);
    assert!(tmp.path().join("functions/checkTodoDateFormat.js").exists());
    assert!(tmp.path().join("manifest.json").exists());
}

fn bundle(tests: Vec<TestCase>, limits: Limits) -> ExecutionBundle {
    ExecutionBundle {
        bundle_id: "ping-v0".into(),
        functions: vec![BundleFunction { name: "ping".into(), params: vec![], source: "return 'pong';".into(), version: 0 }],
        entry_function: "ping".into(),
        tests,
        stubs: vec![],
        persistence_seed: vec![SeedDocument { collection: "todos".into(), id: "t1".into(), value: json_value(json!({"id": "t1"})) }],
        limits,
    }
}

fn json_value(j: serde_json::Value) -> Value {
    Value::parse(&j.to_string()).unwrap()
}

fn io(id: &str, expected: Value) -> TestCase {
    TestCase::io_pair(id, "", WorkerId::new("w1"), vec![], expected)
}

fn scripts_file(dir: &Path) -> String {
    let entries = json!([
        {"entry": "ping", "version": 0, "test": "returns", "script": Script::Steps { steps: vec![Step::Return { value: Value::str("pong") }] }},
        {"entry": "ping", "version": 0, "test": "fails", "script": Script::Status { status: TestStatus::Failed("boom".into()) }},
        {"entry": "ping", "version": 0, "test": "writes", "script": Script::Steps { steps: vec![
            Step::Save { collection: "todos".into(), id: "t2".into(), value: json_value(json!({"id": "t2"})) },
            Step::List { collection: "todos".into() },
            Step::ReturnCurrent,
        ]}},
        {"entry": "ping", "version": 0, "test": "reads", "script": Script::Steps { steps: vec![
            Step::List { collection: "todos".into() },
            Step::ReturnCurrent,
        ]}},
    ]);
    let path = dir.join("scripts.json");
    fs::write(&path, entries.to_string()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn mock_harness_speaks_the_wire_protocol() {
    let tmp = tempfile::tempdir().unwrap();
    let scripts = scripts_file(tmp.path());
    let executor = SubprocessExecutor::new(BIN, ["mock-harness", "--scripts", scripts.as_str()]);
    let one = json_value(json!([{"id": "t1"}]));
    let two = json_value(json!([{"id": "t1"}, {"id": "t2"}]));
    let tests = vec![io("returns", Value::str("pong")), io("fails", Value::Null), io("writes", two), io("reads", one)];
    let report = run_tests(&bundle(tests, Limits::default()), &executor).unwrap();
    let statuses: Vec<_> = report.per_test.iter().map(|r| r.status.clone()).collect();
    assert_eq!(
        statuses,
        vec![TestStatus::Passed, TestStatus::Failed("boom".into()), TestStatus::Passed, TestStatus::Passed]
    );
}

#[test]
fn slow_harness_times_out() {
    let tmp = tempfile::tempdir().unwrap();
    let scripts = scripts_file(tmp.path());
    let executor = SubprocessExecutor::new(BIN, ["mock-harness", "--scripts", scripts.as_str(), "--delay-ms", "3000"])
        .with_grace(Duration::from_millis(200));
    let limits = Limits { wall_time_ms: 100, ..Limits::default() };
    let b = bundle(vec![io("returns", Value::str("pong"))], limits);
    assert!(executor.execute(&b).is_err());
    let report = run_tests(&b, &executor).unwrap();
    assert!(matches!(&report.per_test[0].status, TestStatus::Errored(m) if m.contains("timed out")), "{report:?}");
}

#[test]
fn harness_exits_nonzero_on_a_protocol_violation() {
    let mut child = Command::new(BIN)
        .arg("mock-harness")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stdin = child.stdin.take().unwrap();
    stdin.write_all(&[0, 0, 0, 5]).unwrap();
    stdin.write_all(b"hello").unwrap();
    drop(stdin);
    let out = child.wait_with_output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    // A clean end of input is not a violation.
    let out = Command::new(BIN).arg("mock-harness").stdin(Stdio::null()).output().unwrap();
    assert!(out.status.success());
}

fn http(addr: &str, request: &str) -> String {
    let mut stream = TcpStream::connect(addr).unwrap();
    stream.write_all(request.as_bytes()).unwrap();
    let mut response = String::new();
    stream.read_to_string(&mut response).unwrap();
    response
}

#[test]
fn serve_answers_http() {
    let tmp = tempfile::tempdir().unwrap();
    let tokens = tmp.path().join("tokens.toml");
    fs::write(&tokens, "[tokens]\nacme = { client = \"acme\" }\n").unwrap();
    let mut child = Command::new(BIN)
        .args(["serve", "--addr", "127.0.0.1:0", "--tokens", tokens.to_str().unwrap()])
        .arg("--data-dir")
        .arg(tmp.path().join("data"))
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stderr.take().unwrap()).lines();
    let first = lines.next().unwrap().unwrap();
    let addr = first.strip_prefix("listening on ").unwrap().to_string();

    let response = http(&addr, "GET /tutorials HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n");
    assert!(response.starts_with("HTTP/1.1 200"), "{response}");
    let body = serde_json::to_string(&crowdms_core::fixtures::todo_request()).unwrap();
    let request = format!(
        "POST /projects HTTP/1.1\r\nHost: x\r\nAuthorization: Bearer acme\r\nContent-Type: application/json\r\n\
         Content-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    let response = http(&addr, &request);
    assert!(response.starts_with("HTTP/1.1 201"), "{response}");
    assert!(response.ends_with(r#"{"projectId":"proj-1"}"#), "{response}");
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(tmp.path().join("data/projects/proj-1/events.ndjson").exists());
}

#[test]
fn assembled_todo_service_runs_under_node() {
    if Command::new("node").arg("--version").output().is_err() {
        eprintln!("node not found; skipping");
        return;
    }
    let tmp = tempfile::tempdir().unwrap();
    let out = crowdms(&["todo", "--out", tmp.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let script = r#"
const { handle } = require("./handlers/routes.js");
const todo = { id: "t1", userId: "u1", title: "a", description: "d", dueDate: "01/02/20,10:00",
  status: "open", archived: false, reminderDate: "" };
const calls = [
  ["/createTodo", { todo }],
  ["/fetchTodo", { userId: "u1", todoId: "t1" }],
  ["/createTodo", { todo: { ...todo, id: "t2", dueDate: "tomorrow" } }],
  ["/fetchTodo", { userId: "u1" }],
  ["/fetchAllTodos", { userId: "u1" }],
];
for (const [path, body] of calls) {
  const r = handle("GET", path, body);
  console.log(r.status + " " + r.body);
}
"#;
    let run = Command::new("node").arg("-e").arg(script).current_dir(tmp.path()).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let stored = r#"{"archived":false,"description":"d","dueDate":"01/02/20,10:00","id":"t1","reminderDate":"","status":"open","title":"a","userId":"u1"}"#;
    let lines: Vec<String> = stdout(&run).lines().map(String::from).collect();
    assert_eq!(
        lines,
        [
            format!("200 {stored}"),
            format!("200 {stored}"),
            r#"500 {"code":"functionError","message":"Illegal Argument Exception","violations":[]}"#.to_string(),
            r#"400 {"code":"invalid","message":"invalid parameters","violations":[{"message":"missing parameter","path":"todoId"}]}"#.to_string(),
            format!("200 [{stored}]"),
        ]
    );
}
