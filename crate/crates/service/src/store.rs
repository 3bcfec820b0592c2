//! Projects in memory, each backed by an append-only event log on disk.
//!
//! Layout under the data directory:
//!
//! ```text
//! projects/<projectId>/events.ndjson
//! projects/<projectId>/snapshot.json
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use crowdms_core::eventlog::{self, LogError, SNAPSHOT_INTERVAL};
use crowdms_core::Project;

const EVENTS_FILE: &str = "events.ndjson";
const SNAPSHOT_FILE: &str = "snapshot.json";
const PROJECT_PREFIX: &str = "proj-";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{project}: {source}")]
    Log { project: String, source: LogError },
    #[error("{project}: {reason}")]
    Replay { project: String, reason: String },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug)]
pub struct Entry {
    pub project: Project,
    /// Events already written to disk.
    persisted: usize,
}

impl Entry {
    fn new(project: Project, persisted: usize) -> Self {
        Entry { project, persisted }
    }
}

pub type Handle = Arc<Mutex<Entry>>;

#[derive(Debug, Default)]
pub struct ProjectStore {
    dir: Option<PathBuf>,
    projects: RwLock<BTreeMap<String, Handle>>,
    next: Mutex<u64>,
}

impl ProjectStore {
    /// A store that keeps nothing on disk.
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Loads every project found under `dir`, creating it if needed.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        let root = dir.join("projects");
        fs::create_dir_all(&root)?;
        let mut projects = BTreeMap::new();
        let mut highest = 0;
        for item in fs::read_dir(&root)? {
            let path = item?.path();
            let Some(id) = path.file_name().and_then(|n| n.to_str()).map(String::from) else { continue };
            let Some(n) = id.strip_prefix(PROJECT_PREFIX).and_then(|n| n.parse::<u64>().ok()) else { continue };
            if !path.join(EVENTS_FILE).exists() {
                continue;
            }
            let project = load(&path).map_err(|e| match e {
                LoadError::Log(source) => StoreError::Log { project: id.clone(), source },
                LoadError::Replay(reason) => StoreError::Replay { project: id.clone(), reason },
            })?;
            let persisted = project.events().len();
            projects.insert(id, Arc::new(Mutex::new(Entry::new(project, persisted))));
            highest = highest.max(n);
        }
        Ok(ProjectStore { dir: Some(dir), projects: RwLock::new(projects), next: Mutex::new(highest) })
    }

    pub fn insert(&self, project: Project) -> Result<String, StoreError> {
        let id = {
            let mut next = self.next.lock().unwrap_or_else(|e| e.into_inner());
            *next += 1;
            format!("{PROJECT_PREFIX}{next}")
        };
        let mut entry = Entry::new(project, 0);
        self.persist(&id, &mut entry)?;
        self.projects
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(id.clone(), Arc::new(Mutex::new(entry)));
        Ok(id)
    }

    pub fn get(&self, id: &str) -> Option<Handle> {
        self.projects.read().unwrap_or_else(|e| e.into_inner()).get(id).cloned()
    }

    pub fn ids(&self) -> Vec<String> {
        self.projects.read().unwrap_or_else(|e| e.into_inner()).keys().cloned().collect()
    }

    /// Writes any events not yet on disk, and a snapshot whenever the log
    /// crosses a multiple of the snapshot interval.
    pub fn persist(&self, id: &str, entry: &mut Entry) -> Result<(), StoreError> {
        let Some(dir) = &self.dir else {
            entry.persisted = entry.project.events().len();
            return Ok(());
        };
        let events = entry.project.events();
        if entry.persisted >= events.len() {
            return Ok(());
        }
        let path = dir.join("projects").join(id);
        fs::create_dir_all(&path)?;
        let log_err = |source| StoreError::Log { project: id.to_string(), source };
        eventlog::append_events(&path.join(EVENTS_FILE), &events[entry.persisted..]).map_err(log_err)?;
        let before = entry.persisted as u64 / SNAPSHOT_INTERVAL;
        let after = events.len() as u64 / SNAPSHOT_INTERVAL;
        if after > before {
            eventlog::write_snapshot(&path.join(SNAPSHOT_FILE), entry.project.state()).map_err(log_err)?;
        }
        entry.persisted = events.len();
        Ok(())
    }
}

enum LoadError {
    Log(LogError),
    Replay(String),
}

fn load(path: &Path) -> Result<Project, LoadError> {
    let events = eventlog::read_log(&path.join(EVENTS_FILE)).map_err(LoadError::Log)?;
    let snapshot = path.join(SNAPSHOT_FILE);
    if snapshot.exists() {
        let snap = eventlog::read_snapshot(&snapshot).map_err(LoadError::Log)?;
        if snap.state.last_sequence <= events.len() as u64 {
            return Project::from_snapshot(snap.state, events).map_err(|e| LoadError::Replay(e.to_string()));
        }
    }
    Project::from_events(events).map_err(|e| LoadError::Replay(e.to_string()))
}

/// Locks a project, recovering from a panic in another request.
pub fn lock(handle: &Handle) -> MutexGuard<'_, Entry> {
    handle.lock().unwrap_or_else(|e| e.into_inner())
}
