//! REST service for crowd microservice projects.
//!
//! Every route body is JSON; responses are written in canonical form. Ids
//! that are only unique within a project (assignments, questions) appear on
//! the wire as `<projectId>.<localId>`, e.g. `proj-1.as-3`.

pub mod auth;
pub mod error;
pub mod routes;
pub mod store;

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use crowdms_core::config::ProjectConfig;
use crowdms_core::model::LogicalTime;
use crowdms_core::sandbox::{ExecutorPort, SeedDocument};
use crowdms_core::value::to_canonical_string;
use serde::Serialize;

pub use auth::{Authenticator, Principal, StaticTokens};
pub use error::{ApiError, ErrorEnvelope};
pub use routes::router;
pub use store::ProjectStore;

pub trait Clock: Send + Sync {
    fn now(&self) -> LogicalTime;
}

/// Whole seconds since the Unix epoch.
#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> LogicalTime {
        LogicalTime(SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()))
    }
}

/// A clock that only moves when told to.
#[derive(Debug, Default)]
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn new(start: LogicalTime) -> Self {
        ManualClock(AtomicU64::new(start.0))
    }

    pub fn set(&self, t: LogicalTime) {
        self.0.store(t.0, Ordering::SeqCst);
    }

    pub fn advance(&self, secs: u64) {
        self.0.fetch_add(secs, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> LogicalTime {
        LogicalTime(self.0.load(Ordering::SeqCst))
    }
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Policy, assembly and executor settings applied to new projects.
    pub project: ProjectConfig,
    /// Where published trees go, one subdirectory per project.
    pub deploy_dir: PathBuf,
    /// Documents every test run starts from.
    pub persistence_seed: Vec<SeedDocument>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            project: ProjectConfig::default(),
            deploy_dir: PathBuf::from("published"),
            persistence_seed: vec![],
        }
    }
}

pub struct Inner {
    pub config: ServiceConfig,
    pub store: ProjectStore,
    pub auth: Arc<dyn Authenticator>,
    pub executor: Arc<dyn ExecutorPort>,
    pub clock: Arc<dyn Clock>,
}

#[derive(Clone)]
pub struct AppState(pub Arc<Inner>);

impl AppState {
    pub fn new(
        config: ServiceConfig,
        store: ProjectStore,
        auth: Arc<dyn Authenticator>,
        executor: Arc<dyn ExecutorPort>,
        clock: Arc<dyn Clock>,
    ) -> Self {
        AppState(Arc::new(Inner { config, store, auth, executor, clock }))
    }

    /// Runs the clock over every project so that warnings and expiries are
    /// recorded even when no request arrives.
    pub fn tick_all(&self) {
        let now = self.0.clock.now();
        for id in self.0.store.ids() {
            let Some(handle) = self.0.store.get(&id) else { continue };
            let mut entry = store::lock(&handle);
            if let Err(e) = entry.project.tick(now) {
                tracing::error!(project = %id, "tick failed: {e}");
            }
            if let Err(e) = self.0.store.persist(&id, &mut entry) {
                tracing::error!(project = %id, "persist failed: {e}");
            }
        }
    }
}

pub fn spawn_ticker(app: AppState, every: Duration) -> tokio::task::JoinHandle<()> {
    tokio::spawn(async move {
        let mut interval = tokio::time::interval(every);
        loop {
            interval.tick().await;
            app.tick_all();
        }
    })
}

/// A canonical-form JSON response.
pub fn reply<T: Serialize>(status: StatusCode, body: &T) -> Response {
    match to_canonical_string(body) {
        Ok(text) => (status, [(header::CONTENT_TYPE, "application/json")], text).into_response(),
        Err(e) => {
            tracing::error!("cannot encode response: {e}");
            (StatusCode::INTERNAL_SERVER_ERROR, [(header::CONTENT_TYPE, "application/json")],
             r#"{"code":"internal","message":"cannot encode response","violations":[]}"#)
                .into_response()
        }
    }
}

pub async fn serve(listener: tokio::net::TcpListener, app: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(app)).await
}
