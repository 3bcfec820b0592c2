//! ToDo function bodies, the 34-check behavior oracle, and a behavior model
//! that turns function bodies into MockExecutor scripts.
//!
//! The bodies are ECMAScript text, as a crowd would write them. The mock
//! executor cannot run them, so [`BehaviorModel`] stands in for a runtime: it
//! recognises each known body, performs the same persistence operations and
//! calls against a seeded store, and records them as [`Step`]s. The checks'
//! expected values are written out by hand and never computed by the model.

use std::collections::HashSet;

use crate::model::{NewFunction, Param, Signature, Stub, TestCase, TestId, TestKind, TypeRef, WorkerId};
use crate::sandbox::{
    resolve_call, run_tests, CallResolution, DocumentStore, ExecutionBundle, Limits, MockExecutor,
    SeedDocument, Step, TestRunReport,
};
use crate::state::ProjectState;
use crate::value::Value;

use super::todo_value;

pub const COLLECTION: &str = "todos";
pub const DATE_CHECKER: &str = "checkTodoDateFormat";
pub const ILLEGAL_ARGUMENT: &str = "Illegal Argument Exception";
pub const NOT_FOUND: &str = "Todo not found";
pub const INVALID_STATUS: &str = "Invalid status";

/// Which set of bodies the crowd ends up with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// All 34 behaviors implemented.
    Corrected,
    /// Four defects: a missing range conditional in the date checker (four
    /// failing behaviors), archived todos leaking into `fetchAllTodos`, no
    /// status validation in `fetchTodosBasedOnStatus`, and no ownership
    /// check in `deleteTodo`.
    Defective,
}

/// The function the crowd creates while implementing `createTodo`.
pub fn date_checker() -> NewFunction {
    NewFunction {
        name: DATE_CHECKER.into(),
        description: "Returns true if the date is in the format 'MM/DD/YY,HH:MM' with a valid month, day, hour and minute, and false otherwise.".into(),
        signature: Signature {
            params: vec![Param::new("date", TypeRef::String)],
            return_type: Some(TypeRef::Boolean),
        },
    }
}

const CREATE_TODO: &str = "\
if (!checkTodoDateFormat(todo.dueDate)) {
  throw new TypeError('Illegal Argument Exception');
}
return save('todos', todo.id, todo);
";

const UPDATE_TODO: &str = "\
if (get('todos', todo.id) === null) {
  throw new Error('Todo not found');
}
return update('todos', todo.id, todo);
";

const DELETE_TODO: &str = "\
var todo = get('todos', todoId);
if (todo === null || todo.userId !== userId) {
  return false;
}
return remove('todos', todoId);
";

const DELETE_TODO_DEFECT: &str = "\
return remove('todos', todoId);
";

const FETCH_TODO: &str = "\
var todo = get('todos', todoId);
if (todo === null || todo.userId !== userId) {
  throw new Error('Todo not found');
}
return todo;
";

const FETCH_ALL_TODOS: &str = "\
return list('todos').filter(function (t) {
  return t.userId === userId && !t.archived;
});
";

const FETCH_ALL_TODOS_DEFECT: &str = "\
return list('todos').filter(function (t) {
  return t.userId === userId;
});
";

const FETCH_BY_STATUS: &str = "\
if (status !== 'open' && status !== 'done') {
  throw new Error('Invalid status');
}
return list('todos').filter(function (t) {
  return t.userId === userId && t.status === status;
});
";

const FETCH_BY_STATUS_DEFECT: &str = "\
return list('todos').filter(function (t) {
  return t.userId === userId && t.status === status;
});
";

const MARK_TODO_DONE: &str = "\
var todo = get('todos', todoId);
if (todo === null || todo.userId !== userId) {
  throw new Error('Todo not found');
}
todo.status = 'done';
return update('todos', todoId, todo);
";

const ARCHIVE_TODO: &str = "\
var todo = get('todos', todoId);
if (todo === null || todo.userId !== userId) {
  throw new Error('Todo not found');
}
todo.archived = true;
return update('todos', todoId, todo);
";

const UNARCHIVE_TODO: &str = "\
var todo = get('todos', todoId);
if (todo === null || todo.userId !== userId) {
  throw new Error('Todo not found');
}
todo.archived = false;
return update('todos', todoId, todo);
";

const FETCH_ARCHIVED: &str = "\
return list('todos').filter(function (t) {
  return t.userId === userId && t.archived;
});
";

const SET_REMINDER: &str = "\
if (!checkTodoDateFormat(reminderDate)) {
  throw new TypeError('Illegal Argument Exception');
}
var todo = get('todos', todoId);
if (todo === null || todo.userId !== userId) {
  throw new Error('Todo not found');
}
todo.reminderDate = reminderDate;
return update('todos', todoId, todo);
";

const FETCH_REMINDERS: &str = "\
return list('todos').filter(function (t) {
  return t.userId === userId && t.reminderDate.split(',')[0] === date;
});
";

const CHECK_DATE: &str = "\
var m = /^(\\d\\d)\\/(\\d\\d)\\/(\\d\\d),(\\d\\d):(\\d\\d)$/.exec(date);
if (m === null) {
  return false;
}
var month = Number(m[1]);
var day = Number(m[2]);
var hour = Number(m[4]);
var minute = Number(m[5]);
return month >= 1 && month <= 12 && day >= 1 && day <= 31 && hour <= 23 && minute <= 59;
";

const CHECK_DATE_DEFECT: &str = "\
return /^\\d\\d\\/\\d\\d\\/\\d\\d,\\d\\d:\\d\\d$/.test(date);
";

/// Final body of `function` in `variant`, for the 12 endpoints and the
/// crowd-created date checker.
pub fn body(function: &str, variant: Variant) -> Option<&'static str> {
    let defective = variant == Variant::Defective;
    Some(match function {
        "createTodo" => CREATE_TODO,
        "updateTodo" => UPDATE_TODO,
        "deleteTodo" if defective => DELETE_TODO_DEFECT,
        "deleteTodo" => DELETE_TODO,
        "fetchTodo" => FETCH_TODO,
        "fetchAllTodos" if defective => FETCH_ALL_TODOS_DEFECT,
        "fetchAllTodos" => FETCH_ALL_TODOS,
        "fetchTodosBasedOnStatus" if defective => FETCH_BY_STATUS_DEFECT,
        "fetchTodosBasedOnStatus" => FETCH_BY_STATUS,
        "markTodoDone" => MARK_TODO_DONE,
        "archiveTodo" => ARCHIVE_TODO,
        "unarchiveTodo" => UNARCHIVE_TODO,
        "fetchArchivedTodos" => FETCH_ARCHIVED,
        "setReminder" => SET_REMINDER,
        "fetchReminders" => FETCH_REMINDERS,
        DATE_CHECKER if defective => CHECK_DATE_DEFECT,
        DATE_CHECKER => CHECK_DATE,
        _ => return None,
    })
}

/// Store contents every oracle check starts from.
pub fn seed() -> Vec<SeedDocument> {
    [t1(), t2(), t3(), t4()]
        .into_iter()
        .map(|value| SeedDocument {
            collection: COLLECTION.into(),
            id: value.as_object().unwrap()["id"].as_str().unwrap().to_string(),
            value,
        })
        .collect()
}

fn t1() -> Value {
    todo_value("t1", "u1", "Buy milk", "01/02/20,10:00", "open", false, "01/02/20,09:00")
}

fn t2() -> Value {
    todo_value("t2", "u1", "Pay rent", "01/05/20,12:00", "done", false, "")
}

fn t3() -> Value {
    todo_value("t3", "u1", "File taxes", "12/30/19,08:00", "done", true, "01/02/20,18:30")
}

fn t4() -> Value {
    todo_value("t4", "u2", "Walk dog", "01/03/20,07:00", "open", false, "01/02/20,07:00")
}

fn with(todo: Value, field: &str, value: Value) -> Value {
    let mut todo = todo;
    if let Value::Object(m) = &mut todo {
        m.insert(field.into(), value);
    }
    todo
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expect {
    Returns(Value),
    /// The call throws with a message containing this text.
    Throws(&'static str),
}

/// One behavior from the client request, checked by one unit test.
#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorCheck {
    pub id: String,
    pub function: String,
    pub description: String,
    pub inputs: Vec<Value>,
    pub expect: Expect,
}

impl BehaviorCheck {
    fn new(id: &str, function: &str, description: &str, inputs: Vec<Value>, expect: Expect) -> Self {
        BehaviorCheck {
            id: id.into(),
            function: function.into(),
            description: description.into(),
            inputs,
            expect,
        }
    }

    /// The check as a test case: an io pair, or a code test asserting a throw.
    pub fn test_case(&self, author: &WorkerId) -> TestCase {
        match &self.expect {
            Expect::Returns(v) => TestCase::io_pair(
                self.id.clone(),
                self.description.clone(),
                author.clone(),
                self.inputs.clone(),
                v.clone(),
            ),
            Expect::Throws(message) => {
                let args: Vec<String> =
                    self.inputs.iter().map(|v| v.canonicalize().unwrap_or_default()).collect();
                TestCase {
                    id: TestId(self.id.clone()),
                    kind: TestKind::CodeTest {
                        source: format!(
                            "assert.throws(function () {{ {}({}); }}, /{}/);",
                            self.function,
                            args.join(", "),
                            message
                        ),
                    },
                    description: self.description.clone(),
                    author: author.clone(),
                }
            }
        }
    }

    /// Reads an io-pair test back as a check.
    pub fn from_test(function: &str, test: &TestCase) -> Option<BehaviorCheck> {
        match &test.kind {
            TestKind::IoPair { inputs, expected_output } => Some(BehaviorCheck {
                id: test.id.0.clone(),
                function: function.into(),
                description: test.description.clone(),
                inputs: inputs.clone(),
                expect: Expect::Returns(expected_output.clone()),
            }),
            TestKind::CodeTest { .. } => None,
        }
    }
}

fn s(text: &str) -> Value {
    Value::str(text)
}

fn list(items: Vec<Value>) -> Value {
    Value::List(items)
}

/// The 34 behavior checks over the 13 functions.
pub fn behavior_checks() -> Vec<BehaviorCheck> {
    use Expect::{Returns, Throws};
    let t5 = todo_value("t5", "u1", "Call mom", "01/02/20,10:00", "open", false, "");
    vec![
        BehaviorCheck::new("createTodo-stores", "createTodo", "stores a well-formed todo and returns it", vec![t5.clone()], Returns(t5.clone())),
        BehaviorCheck::new("createTodo-bad-format", "createTodo", "rejects a dueDate not in MM/DD/YY,HH:MM", vec![with(t5.clone(), "dueDate", s("2020-01-02"))], Throws(ILLEGAL_ARGUMENT)),
        BehaviorCheck::new("createTodo-bad-day", "createTodo", "rejects a dueDate with day 32", vec![with(t5, "dueDate", s("01/32/20,10:00"))], Throws(ILLEGAL_ARGUMENT)),
        BehaviorCheck::new("updateTodo-replaces", "updateTodo", "replaces an existing todo", vec![with(t1(), "title", s("Buy oat milk"))], Returns(with(t1(), "title", s("Buy oat milk")))),
        BehaviorCheck::new("updateTodo-missing", "updateTodo", "throws for an unknown todo", vec![todo_value("t9", "u1", "Ghost", "01/02/20,10:00", "open", false, "")], Throws(NOT_FOUND)),
        BehaviorCheck::new("deleteTodo-owned", "deleteTodo", "deletes the user's todo", vec![s("u1"), s("t1")], Returns(Value::Bool(true))),
        BehaviorCheck::new("deleteTodo-missing", "deleteTodo", "returns false for an unknown todo", vec![s("u1"), s("t9")], Returns(Value::Bool(false))),
        BehaviorCheck::new("deleteTodo-foreign", "deleteTodo", "does not delete another user's todo", vec![s("u2"), s("t1")], Returns(Value::Bool(false))),
        BehaviorCheck::new("fetchTodo-owned", "fetchTodo", "returns the user's todo", vec![s("u1"), s("t2")], Returns(t2())),
        BehaviorCheck::new("fetchTodo-missing", "fetchTodo", "throws for an unknown todo", vec![s("u1"), s("t9")], Throws(NOT_FOUND)),
        BehaviorCheck::new("fetchTodo-foreign", "fetchTodo", "throws for another user's todo", vec![s("u2"), s("t1")], Throws(NOT_FOUND)),
        BehaviorCheck::new("fetchAllTodos-unarchived", "fetchAllTodos", "returns the user's unarchived todos in order", vec![s("u1")], Returns(list(vec![t1(), t2()]))),
        BehaviorCheck::new("fetchAllTodos-unknown-user", "fetchAllTodos", "returns nothing for a user without todos", vec![s("u3")], Returns(list(vec![]))),
        BehaviorCheck::new("fetchTodosBasedOnStatus-open", "fetchTodosBasedOnStatus", "returns open todos", vec![s("u1"), s("open")], Returns(list(vec![t1()]))),
        BehaviorCheck::new("fetchTodosBasedOnStatus-done", "fetchTodosBasedOnStatus", "returns done todos, archived included", vec![s("u1"), s("done")], Returns(list(vec![t2(), t3()]))),
        BehaviorCheck::new("fetchTodosBasedOnStatus-invalid", "fetchTodosBasedOnStatus", "throws on an unknown status", vec![s("u1"), s("pending")], Throws(INVALID_STATUS)),
        BehaviorCheck::new("markTodoDone-open", "markTodoDone", "marks an open todo done", vec![s("u1"), s("t1")], Returns(with(t1(), "status", s("done")))),
        BehaviorCheck::new("markTodoDone-missing", "markTodoDone", "throws for an unknown todo", vec![s("u1"), s("t9")], Throws(NOT_FOUND)),
        BehaviorCheck::new("archiveTodo-owned", "archiveTodo", "archives the user's todo", vec![s("u1"), s("t2")], Returns(with(t2(), "archived", Value::Bool(true)))),
        BehaviorCheck::new("archiveTodo-foreign", "archiveTodo", "throws for another user's todo", vec![s("u2"), s("t2")], Throws(NOT_FOUND)),
        BehaviorCheck::new("unarchiveTodo-archived", "unarchiveTodo", "clears the archived flag", vec![s("u1"), s("t3")], Returns(with(t3(), "archived", Value::Bool(false)))),
        BehaviorCheck::new("unarchiveTodo-idempotent", "unarchiveTodo", "leaves an unarchived todo unchanged", vec![s("u1"), s("t1")], Returns(t1())),
        BehaviorCheck::new("fetchArchivedTodos-owned", "fetchArchivedTodos", "returns the user's archived todos", vec![s("u1")], Returns(list(vec![t3()]))),
        BehaviorCheck::new("fetchArchivedTodos-none", "fetchArchivedTodos", "returns nothing when none are archived", vec![s("u2")], Returns(list(vec![]))),
        BehaviorCheck::new("setReminder-sets", "setReminder", "sets the reminder date", vec![s("u1"), s("t2"), s("01/06/20,08:00")], Returns(with(t2(), "reminderDate", s("01/06/20,08:00")))),
        BehaviorCheck::new("setReminder-bad-hour", "setReminder", "rejects a reminder at hour 25", vec![s("u1"), s("t2"), s("02/10/20,25:00")], Throws(ILLEGAL_ARGUMENT)),
        BehaviorCheck::new("setReminder-missing", "setReminder", "throws for an unknown todo", vec![s("u1"), s("t9"), s("01/06/20,08:00")], Throws(NOT_FOUND)),
        BehaviorCheck::new("fetchReminders-day", "fetchReminders", "returns todos with a reminder on the day", vec![s("u1"), s("01/02/20")], Returns(list(vec![t1(), t3()]))),
        BehaviorCheck::new("fetchReminders-empty-day", "fetchReminders", "returns nothing for a day without reminders", vec![s("u1"), s("01/09/20")], Returns(list(vec![]))),
        BehaviorCheck::new("fetchReminders-other-user", "fetchReminders", "returns only the caller's reminders", vec![s("u2"), s("01/02/20")], Returns(list(vec![t4()]))),
        BehaviorCheck::new("checkTodoDateFormat-valid", DATE_CHECKER, "accepts MM/DD/YY,HH:MM", vec![s("01/02/20,10:00")], Returns(Value::Bool(true))),
        BehaviorCheck::new("checkTodoDateFormat-iso", DATE_CHECKER, "rejects an ISO date", vec![s("2020-01-02")], Returns(Value::Bool(false))),
        BehaviorCheck::new("checkTodoDateFormat-month", DATE_CHECKER, "rejects month 13", vec![s("13/02/20,10:00")], Returns(Value::Bool(false))),
        BehaviorCheck::new("checkTodoDateFormat-hour", DATE_CHECKER, "rejects hour 24", vec![s("01/02/20,24:00")], Returns(Value::Bool(false))),
    ]
}

/// Which known body a source text is, if any.
fn identify(function: &str, source: &str) -> Option<Variant> {
    [Variant::Corrected, Variant::Defective]
        .into_iter()
        .find(|v| body(function, *v).is_some_and(|b| b.trim() == source.trim()))
}

enum Stop {
    Throw(String),
    /// A call the mock will fail on by itself (a stub miss).
    Abort,
    /// Source text the model does not recognise.
    Unknown,
}

/// Interprets the known ToDo bodies against a store, recording the
/// persistence operations and calls as mock steps.
pub struct BehaviorModel<'a> {
    bundle: &'a ExecutionBundle,
    implemented: HashSet<String>,
    store: DocumentStore,
    steps: Vec<Step>,
    mock: &'a mut MockExecutor,
}

impl<'a> BehaviorModel<'a> {
    /// Registers scripts on `mock` for every check whose function is the
    /// bundle's entry. Checks against unrecognised bodies stay unscripted and
    /// so behave like an empty body.
    pub fn script_checks(mock: &'a mut MockExecutor, bundle: &'a ExecutionBundle, checks: &[BehaviorCheck]) {
        let Some(entry) = bundle.entry() else { return };
        let implemented = bundle.implemented();
        let mut model = BehaviorModel {
            bundle,
            implemented,
            store: DocumentStore::new(),
            steps: vec![],
            mock,
        };
        for check in checks.iter().filter(|c| c.function == bundle.entry_function) {
            model.store = DocumentStore::seeded(&bundle.persistence_seed);
            model.steps.clear();
            let outcome = model.run(&entry.source, &check.function, &check.inputs);
            let mut steps = std::mem::take(&mut model.steps);
            match outcome {
                Ok(v) => steps.push(Step::Return { value: v }),
                Err(Stop::Throw(message)) => steps.push(Step::Throw { message }),
                Err(Stop::Abort) => {}
                Err(Stop::Unknown) => continue,
            }
            if let Expect::Throws(message) = &check.expect {
                steps = vec![Step::ExpectThrow { steps, message: message.to_string() }];
            }
            model.mock.steps(&check.function, entry.version, &check.id, steps);
        }
    }

    fn source_of(&self, function: &str) -> Option<&'a str> {
        self.bundle.functions.iter().find(|f| f.name == function).map(|f| f.source.as_str())
    }

    fn run(&mut self, source: &str, function: &str, args: &[Value]) -> Result<Value, Stop> {
        let variant = identify(function, source).ok_or(Stop::Unknown)?;
        let defective = variant == Variant::Defective;
        let arg = |i: usize| args.get(i).cloned().unwrap_or(Value::Null);
        let text = |i: usize| arg(i).as_str().map(str::to_string).unwrap_or_default();
        let not_found = || Stop::Throw(format!("Error: {NOT_FOUND}"));
        match function {
            "createTodo" => {
                let todo = arg(0);
                if !truthy(&self.call(DATE_CHECKER, vec![field(&todo, "dueDate")])?) {
                    return Err(Stop::Throw(format!("TypeError: {ILLEGAL_ARGUMENT}")));
                }
                let id = field_str(&todo, "id");
                Ok(self.save(&id, todo))
            }
            "updateTodo" => {
                let todo = arg(0);
                let id = field_str(&todo, "id");
                if self.get(&id).is_none() {
                    return Err(not_found());
                }
                self.update(&id, todo)
            }
            "deleteTodo" => {
                let (user, id) = (text(0), text(1));
                if !defective {
                    match self.get(&id) {
                        Some(todo) if field_str(&todo, "userId") == user => {}
                        _ => return Ok(Value::Bool(false)),
                    }
                }
                Ok(self.remove(&id))
            }
            "fetchTodo" => self.owned(&text(0), &text(1)).ok_or_else(not_found),
            "fetchAllTodos" => {
                let user = text(0);
                Ok(self.filter(|t| field_str(t, "userId") == user && (defective || !truthy(&field(t, "archived")))))
            }
            "fetchTodosBasedOnStatus" => {
                let (user, status) = (text(0), text(1));
                if !defective && status != "open" && status != "done" {
                    return Err(Stop::Throw(format!("Error: {INVALID_STATUS}")));
                }
                Ok(self.filter(|t| field_str(t, "userId") == user && field_str(t, "status") == status))
            }
            "markTodoDone" | "archiveTodo" | "unarchiveTodo" => {
                let id = text(1);
                let todo = self.owned(&text(0), &id).ok_or_else(not_found)?;
                let todo = match function {
                    "markTodoDone" => with(todo, "status", s("done")),
                    "archiveTodo" => with(todo, "archived", Value::Bool(true)),
                    _ => with(todo, "archived", Value::Bool(false)),
                };
                self.update(&id, todo)
            }
            "fetchArchivedTodos" => {
                let user = text(0);
                Ok(self.filter(|t| field_str(t, "userId") == user && truthy(&field(t, "archived"))))
            }
            "setReminder" => {
                let (user, id, date) = (text(0), text(1), arg(2));
                if !truthy(&self.call(DATE_CHECKER, vec![date.clone()])?) {
                    return Err(Stop::Throw(format!("TypeError: {ILLEGAL_ARGUMENT}")));
                }
                let todo = self.owned(&user, &id).ok_or_else(not_found)?;
                self.update(&id, with(todo, "reminderDate", date))
            }
            "fetchReminders" => {
                let (user, day) = (text(0), text(1));
                Ok(self.filter(|t| {
                    field_str(t, "userId") == user
                        && field_str(t, "reminderDate").split(',').next() == Some(day.as_str())
                }))
            }
            DATE_CHECKER => Ok(Value::Bool(date_ok(&text(0), !defective))),
            _ => Err(Stop::Unknown),
        }
    }

    /// A call from authored code, resolved exactly as the executor would.
    fn call(&mut self, callee: &str, args: Vec<Value>) -> Result<Value, Stop> {
        let step = Step::Call { callee: callee.into(), args: args.clone() };
        match resolve_call(callee, &args, &self.bundle.stubs, &self.implemented) {
            CallResolution::UseStub { return_value } => {
                self.steps.push(step);
                Ok(return_value)
            }
            CallResolution::CallReal => {
                let source = self.source_of(callee).ok_or(Stop::Unknown)?;
                // Callees here are pure, so they run without touching the
                // recorded steps or the store.
                let saved = std::mem::take(&mut self.steps);
                let result = self.run(source, callee, &args);
                self.steps = saved;
                let value = result?;
                self.mock.real_call(callee, &args, value.clone());
                self.steps.push(step);
                Ok(value)
            }
            CallResolution::MissError => {
                self.steps.push(step);
                Err(Stop::Abort)
            }
        }
    }

    fn get(&mut self, id: &str) -> Option<Value> {
        self.steps.push(Step::Get { collection: COLLECTION.into(), id: id.into() });
        self.store.get(COLLECTION, id).ok().flatten()
    }

    fn owned(&mut self, user: &str, id: &str) -> Option<Value> {
        self.get(id).filter(|t| field_str(t, "userId") == user)
    }

    fn save(&mut self, id: &str, value: Value) -> Value {
        self.steps.push(Step::Save { collection: COLLECTION.into(), id: id.into(), value: value.clone() });
        let _ = self.store.save(COLLECTION, id, value.clone());
        value
    }

    fn update(&mut self, id: &str, value: Value) -> Result<Value, Stop> {
        self.steps.push(Step::Update { collection: COLLECTION.into(), id: id.into(), value: value.clone() });
        self.store.update(COLLECTION, id, value).map_err(|e| Stop::Throw(e.to_string()))
    }

    fn remove(&mut self, id: &str) -> Value {
        self.steps.push(Step::Remove { collection: COLLECTION.into(), id: id.into() });
        Value::Bool(self.store.remove(COLLECTION, id).unwrap_or(false))
    }

    fn filter(&mut self, keep: impl Fn(&Value) -> bool) -> Value {
        self.steps.push(Step::List { collection: COLLECTION.into() });
        Value::List(self.store.list(COLLECTION).into_iter().filter(|t| keep(t)).collect())
    }
}

fn field(v: &Value, name: &str) -> Value {
    v.as_object().and_then(|m| m.get(name)).cloned().unwrap_or(Value::Null)
}

fn field_str(v: &Value, name: &str) -> String {
    field(v, name).as_str().unwrap_or_default().to_string()
}

fn truthy(v: &Value) -> bool {
    match v {
        Value::Null => false,
        Value::Bool(b) => *b,
        Value::Number(n) => *n != 0.0 && !n.is_nan(),
        Value::String(s) => !s.is_empty(),
        Value::List(_) | Value::Object(_) => true,
    }
}

/// `MM/DD/YY,HH:MM`; with `ranges`, also month 1-12, day 1-31, hour 0-23 and
/// minute 0-59.
fn date_ok(text: &str, ranges: bool) -> bool {
    let b = text.as_bytes();
    let digits = [0, 1, 3, 4, 6, 7, 9, 10, 12, 13];
    let shape = b.len() == 14
        && b[2] == b'/'
        && b[5] == b'/'
        && b[8] == b','
        && b[11] == b':'
        && digits.iter().all(|&i| b[i].is_ascii_digit());
    if !shape {
        return false;
    }
    if !ranges {
        return true;
    }
    let num = |i: usize| u32::from(b[i] - b'0') * 10 + u32::from(b[i + 1] - b'0');
    let (month, day, hour, minute) = (num(0), num(3), num(9), num(12));
    (1..=12).contains(&month) && (1..=31).contains(&day) && hour <= 23 && minute <= 59
}

/// Outcome of running the oracle suite against a project's functions.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleScore {
    pub passed: usize,
    pub total: usize,
    /// Ids of failing checks, in catalog order.
    pub failing: Vec<String>,
    pub reports: Vec<TestRunReport>,
}

/// Runs every check against the current artifacts of `state`, one bundle per
/// function, through the mock executor. Each function's own stubs stay in
/// force, as they would for the crowd.
pub fn score(state: &ProjectState, checks: &[BehaviorCheck]) -> OracleScore {
    let author = WorkerId::new("oracle");
    let mut passed = 0;
    let mut failing = Vec::new();
    let mut reports = Vec::new();
    let mut names: Vec<&str> = Vec::new();
    for c in checks {
        if !names.contains(&c.function.as_str()) {
            names.push(&c.function);
        }
    }
    for name in names {
        let mine: Vec<&BehaviorCheck> = checks.iter().filter(|c| c.function == name).collect();
        let Some(function) = state.function_by_name(name) else {
            failing.extend(mine.iter().map(|c| c.id.clone()));
            continue;
        };
        let Some(mut bundle) = crate::sandbox::bundle_for(state, function.id, None, seed(), Limits::default())
        else {
            continue;
        };
        bundle.bundle_id = format!("oracle-{name}");
        bundle.tests = mine.iter().map(|c| c.test_case(&author)).collect();
        let mut mock = MockExecutor::new();
        let owned: Vec<BehaviorCheck> = mine.iter().map(|c| (*c).clone()).collect();
        BehaviorModel::script_checks(&mut mock, &bundle, &owned);
        let report = run_tests(&bundle, &mock).expect("oracle bundle is well formed");
        for c in &mine {
            match report.result(&TestId(c.id.clone())) {
                Some(r) if r.status.is_passed() => passed += 1,
                _ => failing.push(c.id.clone()),
            }
        }
        reports.push(report);
    }
    let order: Vec<&str> = checks.iter().map(|c| c.id.as_str()).collect();
    failing.sort_by_key(|id| order.iter().position(|o| o == id));
    OracleScore { passed, total: checks.len(), failing, reports }
}

/// The stub a worker writes while `checkTodoDateFormat` is still empty.
pub fn date_checker_stub(author: &WorkerId) -> Stub {
    Stub {
        callee_name: DATE_CHECKER.into(),
        argument_tuple: vec![s("01/02/20,10:00")],
        return_value: Value::Bool(true),
        author: author.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sandbox::{BundleFunction, TestStatus};

    #[test]
    fn catalog_shape() {
        let checks = behavior_checks();
        assert_eq!(checks.len(), 34);
        let functions: HashSet<_> = checks.iter().map(|c| c.function.as_str()).collect();
        assert_eq!(functions.len(), 13);
        let ids: HashSet<_> = checks.iter().map(|c| c.id.as_str()).collect();
        assert_eq!(ids.len(), 34);
        let request = super::super::todo_request();
        for ep in &request.endpoints {
            assert!(functions.contains(ep.function_name.as_str()), "{}", ep.function_name);
            assert!(body(&ep.function_name, Variant::Corrected).is_some());
        }
        assert!(functions.contains(DATE_CHECKER));
    }

    #[test]
    fn check_inputs_match_arity() {
        let request = super::super::todo_request();
        for c in behavior_checks() {
            let arity = request
                .endpoints
                .iter()
                .find(|e| e.function_name == c.function)
                .map(|e| e.params.len())
                .unwrap_or_else(|| date_checker().signature.arity());
            assert_eq!(c.inputs.len(), arity, "{}", c.id);
        }
    }

    #[test]
    fn date_rule() {
        assert!(date_ok("01/02/20,10:00", true));
        assert!(!date_ok("13/02/20,10:00", true));
        assert!(date_ok("13/02/20,10:00", false));
        assert!(!date_ok("2020-01-02", false));
        assert!(!date_ok("01/02/20,10:0", false));
        assert!(!date_ok("00/02/20,10:00", true));
        assert!(date_ok("12/31/99,23:59", true));
    }

    fn single(function: &str, source: &str, stubs: Vec<Stub>) -> ExecutionBundle {
        let mut functions = vec![BundleFunction {
            name: function.into(),
            params: vec![],
            source: source.into(),
            version: 1,
        }];
        if function != DATE_CHECKER {
            functions.push(BundleFunction { name: DATE_CHECKER.into(), params: vec![], source: String::new(), version: 0 });
        }
        ExecutionBundle {
            bundle_id: "b".into(),
            functions,
            entry_function: function.into(),
            tests: vec![],
            stubs,
            persistence_seed: seed(),
            limits: Limits::default(),
        }
    }

    #[test]
    fn create_todo_uses_stub_while_checker_is_empty() {
        let w = WorkerId::new("p8");
        let checks: Vec<_> = behavior_checks().into_iter().filter(|c| c.function == "createTodo").collect();
        let mut bundle = single("createTodo", CREATE_TODO, vec![date_checker_stub(&w)]);
        bundle.tests = checks.iter().map(|c| c.test_case(&w)).collect();
        let mut mock = MockExecutor::new();
        BehaviorModel::script_checks(&mut mock, &bundle, &checks);
        let report = run_tests(&bundle, &mock).unwrap();
        assert_eq!(report.per_test[0].status, TestStatus::Passed);
        assert_eq!(report.per_test[0].stub_hits.len(), 1);
        // The other two dates have no stub and the checker is empty.
        for r in &report.per_test[1..] {
            assert_eq!(r.stub_misses.len(), 1, "{r:?}");
            assert!(!r.status.is_passed());
        }
    }

    #[test]
    fn unknown_body_is_unscripted() {
        let checks: Vec<_> = behavior_checks().into_iter().filter(|c| c.function == "fetchTodo").collect();
        let mut bundle = single("fetchTodo", "return 42;", vec![]);
        bundle.tests = checks.iter().map(|c| c.test_case(&WorkerId::new("w"))).collect();
        let mut mock = MockExecutor::new();
        BehaviorModel::script_checks(&mut mock, &bundle, &checks);
        let report = run_tests(&bundle, &mock).unwrap();
        assert_eq!(report.passed(), 0);
    }
}
