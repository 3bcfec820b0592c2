//! Behavior-driven microtask workflow: domain model, event-sourced engine,
//! scheduler, scoring, sandboxed test orchestration, microservice assembly
//! and a deterministic crowd simulator.

pub mod assembler;
pub mod config;
pub mod event;
pub mod eventlog;
pub mod fixtures;
pub mod invariants;
pub mod model;
pub mod sandbox;
pub mod scheduler;
pub mod scoring;
pub mod sim;
pub mod state;
pub mod validate;
pub mod value;
pub mod workflow;

pub use event::{EventKind, ProjectEvent};
pub use state::ProjectState;
pub use value::Value;
pub use workflow::{CommandError, Project};
