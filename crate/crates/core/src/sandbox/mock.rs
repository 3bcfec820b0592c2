//! Scripted executor for hermetic runs.
//!
//! Outcomes are looked up by `(entry function, entry version, test id)`. A
//! script is either a fixed status or a list of steps standing in for what
//! the authored code would do: calls (subject to stub interception),
//! persistence operations, assertions and a return value. Unscripted io-pair
//! tests behave like an empty body and return `null`.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{
    compare_io, resolve_call, CallResolution, DocumentStore, ExecutionBundle, ExecutorError,
    ExecutorPort, StubCall, TestResult, TestRunReport, TestStatus, Trace,
};
use crate::model::{TestCase, TestId, TestKind};
use crate::value::{canonical_tuple, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "camelCase")]
pub enum Step {
    /// Calls another function; the result becomes the current value.
    Call { callee: String, args: Vec<Value> },
    Save { collection: String, id: String, value: Value },
    Get { collection: String, id: String },
    Update { collection: String, id: String, value: Value },
    Remove { collection: String, id: String },
    List { collection: String },
    /// Fails the test unless the current value equals `expected`.
    Expect { expected: Value },
    /// Raises an exception with this message.
    Throw { message: String },
    /// Runs `steps` and requires them to raise an exception whose message
    /// contains `message`.
    ExpectThrow { steps: Vec<Step>, message: String },
    /// Returns the current value from the entry function.
    ReturnCurrent,
    Return { value: Value },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase")]
pub enum Script {
    Status { status: TestStatus },
    Steps { steps: Vec<Step> },
}

#[derive(Debug, Clone, Default)]
pub struct MockExecutor {
    scripts: BTreeMap<(String, u64, TestId), Script>,
    real_calls: BTreeMap<(String, String), Value>,
}

impl MockExecutor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn script(&mut self, entry: &str, version: u64, test: &str, script: Script) -> &mut Self {
        self.scripts.insert((entry.to_string(), version, TestId(test.to_string())), script);
        self
    }

    pub fn status(&mut self, entry: &str, version: u64, test: &str, status: TestStatus) -> &mut Self {
        self.script(entry, version, test, Script::Status { status })
    }

    pub fn steps(&mut self, entry: &str, version: u64, test: &str, steps: Vec<Step>) -> &mut Self {
        self.script(entry, version, test, Script::Steps { steps })
    }

    /// Result returned when an implemented `callee` runs for real with `args`.
    pub fn real_call(&mut self, callee: &str, args: &[Value], result: Value) -> &mut Self {
        let key = canonical_tuple(args).unwrap_or_default();
        self.real_calls.insert((callee.to_string(), key), result);
        self
    }

    fn run_one(
        &self,
        bundle: &ExecutionBundle,
        version: u64,
        test: &TestCase,
        implemented: &HashSet<String>,
        store: &mut DocumentStore,
    ) -> TestResult {
        let mut result = TestResult {
            test_id: test.id.clone(),
            status: TestStatus::Passed,
            actual: None,
            traces: vec![],
            stub_hits: vec![],
            stub_misses: vec![],
        };
        let key = (bundle.entry_function.clone(), version, test.id.clone());
        let steps = match self.scripts.get(&key) {
            Some(Script::Status { status }) => {
                result.status = status.clone();
                return result;
            }
            Some(Script::Steps { steps }) => steps.as_slice(),
            None => &[],
        };

        let mut run = Run { executor: self, bundle, implemented, store, result: &mut result };
        let outcome = run.exec(steps);
        result.status = match (outcome, &test.kind) {
            (Err(s), _) => s,
            (Ok(Flow::Returned(actual)), TestKind::IoPair { expected_output, .. }) => {
                let s = compare_io(expected_output, &actual);
                result.actual = Some(actual);
                s
            }
            (Ok(Flow::Finished), TestKind::IoPair { expected_output, .. }) => {
                let s = compare_io(expected_output, &Value::Null);
                result.actual = Some(Value::Null);
                s
            }
            (Ok(_), TestKind::CodeTest { .. }) if steps.is_empty() => {
                TestStatus::Failed("test made no assertions".into())
            }
            (Ok(_), TestKind::CodeTest { .. }) => TestStatus::Passed,
        };
        result
    }
}

enum Flow {
    Returned(Value),
    Finished,
}

struct Run<'a> {
    executor: &'a MockExecutor,
    bundle: &'a ExecutionBundle,
    implemented: &'a HashSet<String>,
    store: &'a mut DocumentStore,
    result: &'a mut TestResult,
}

impl Run<'_> {
    fn exec(&mut self, steps: &[Step]) -> Result<Flow, TestStatus> {
        let mut current = Value::Null;
        for step in steps {
            current = match step {
                Step::Call { callee, args } => self.call(callee, args)?,
                Step::Save { collection, id, value } => {
                    self.store.save(collection, id, value.clone()).map_err(errored)?
                }
                Step::Get { collection, id } => {
                    self.store.get(collection, id).map_err(errored)?.unwrap_or(Value::Null)
                }
                Step::Update { collection, id, value } => {
                    self.store.update(collection, id, value.clone()).map_err(errored)?
                }
                Step::Remove { collection, id } => {
                    Value::Bool(self.store.remove(collection, id).map_err(errored)?)
                }
                Step::List { collection } => Value::List(self.store.list(collection)),
                Step::Expect { expected } => match compare_io(expected, &current) {
                    TestStatus::Passed => current,
                    TestStatus::Failed(m) => return Err(TestStatus::Failed(format!("assertion failed: {m}"))),
                    other => return Err(other),
                },
                Step::ExpectThrow { steps, message } => match self.exec(steps) {
                    Err(TestStatus::Errored(m)) if m.contains(message.as_str()) => Value::Null,
                    Err(TestStatus::Errored(m)) => {
                        return Err(TestStatus::Failed(format!("expected exception `{message}`, got `{m}`")))
                    }
                    Err(other) => return Err(other),
                    Ok(_) => return Err(TestStatus::Failed(format!("expected exception `{message}`"))),
                },
                Step::Throw { message } => return Err(TestStatus::Errored(message.clone())),
                Step::ReturnCurrent => return Ok(Flow::Returned(current)),
                Step::Return { value } => return Ok(Flow::Returned(value.clone())),
            };
        }
        Ok(Flow::Finished)
    }

    fn call(&mut self, callee: &str, args: &[Value]) -> Result<Value, TestStatus> {
        let tuple = canonical_tuple(args).unwrap_or_else(|_| "[]".into());
        let expression = format!("{callee}({})", &tuple[1..tuple.len() - 1]);
        let record = || StubCall { callee_name: callee.to_string(), argument_tuple: args.to_vec() };
        let value = match resolve_call(callee, args, &self.bundle.stubs, self.implemented) {
            CallResolution::UseStub { return_value } => {
                self.result.stub_hits.push(record());
                return_value
            }
            CallResolution::CallReal => {
                let key = (callee.to_string(), tuple.clone());
                self.executor
                    .real_calls
                    .get(&key)
                    .cloned()
                    .ok_or_else(|| TestStatus::Errored(format!("no scripted result for {expression}")))?
            }
            CallResolution::MissError => {
                self.result.stub_misses.push(record());
                return Err(TestStatus::Errored(format!("{callee} is not implemented and no stub matches")));
            }
        };
        self.result.traces.push(Trace { expression, values: vec![value.clone()] });
        Ok(value)
    }
}

fn errored(e: super::StoreError) -> TestStatus {
    TestStatus::Errored(e.to_string())
}

impl ExecutorPort for MockExecutor {
    fn execute(&self, bundle: &ExecutionBundle) -> Result<TestRunReport, ExecutorError> {
        let entry = bundle
            .entry()
            .ok_or_else(|| ExecutorError::Protocol(format!("missing entry {}", bundle.entry_function)))?;
        let implemented = bundle.implemented();
        let mut per_test = Vec::with_capacity(bundle.tests.len());
        let mut last_store = DocumentStore::seeded(&bundle.persistence_seed);
        for test in &bundle.tests {
            // Every test starts from the seed.
            let mut store = DocumentStore::seeded(&bundle.persistence_seed);
            per_test.push(self.run_one(bundle, entry.version, test, &implemented, &mut store));
            last_store = store;
        }
        Ok(TestRunReport {
            bundle_id: bundle.bundle_id.clone(),
            per_test,
            persistence_final_state: last_store.dump(),
        })
    }
}
