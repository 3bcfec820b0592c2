//! The ToDo microservice used throughout the tests, the simulator and the
//! acceptance suite.

pub mod todo;

use crate::model::ClientRequest;
use crate::value::Value;

const TODO_REQUEST: &str = include_str!("../../fixtures/todo_request.json");

/// The 12-endpoint ToDo client request with its `Todo` ADT.
pub fn todo_request() -> ClientRequest {
    serde_json::from_str(TODO_REQUEST).expect("bundled ToDo request parses")
}

/// A `Todo` value with every declared field.
#[allow(clippy::too_many_arguments)]
pub fn todo_value(
    id: &str,
    user_id: &str,
    title: &str,
    due_date: &str,
    status: &str,
    archived: bool,
    reminder_date: &str,
) -> Value {
    Value::object([
        ("id", Value::str(id)),
        ("userId", Value::str(user_id)),
        ("title", Value::str(title)),
        ("description", Value::str("")),
        ("dueDate", Value::str(due_date)),
        ("status", Value::str(status)),
        ("archived", Value::Bool(archived)),
        ("reminderDate", Value::str(reminder_date)),
    ])
}

/// An open, unarchived todo for user `u1`.
pub fn sample_todo(id: &str, title: &str) -> Value {
    todo_value(id, "u1", title, "01/02/20,10:00", "open", false, "")
}
