//! Bearer tokens mapped to principals.
//!
//! The dev-mode token file is TOML:
//!
//! ```toml
//! [tokens]
//! "tok-alice" = { worker = "alice" }
//! "tok-acme" = { client = "acme" }
//! ```

use std::collections::HashMap;
use std::path::Path;

use crowdms_core::model::{ClientId, WorkerId};
use serde::Deserialize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Principal {
    Worker(WorkerId),
    Client(ClientId),
}

pub trait Authenticator: Send + Sync {
    fn authenticate(&self, token: &str) -> Option<Principal>;
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
enum TokenEntry {
    #[serde(rename = "worker")]
    Worker(String),
    #[serde(rename = "client")]
    Client(String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TokenFile {
    #[serde(default)]
    tokens: HashMap<String, TokenEntry>,
}

#[derive(Debug, thiserror::Error)]
pub enum TokenFileError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
}

/// A fixed token table.
#[derive(Debug, Clone, Default)]
pub struct StaticTokens {
    tokens: HashMap<String, Principal>,
}

impl StaticTokens {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn worker(mut self, token: impl Into<String>, worker: impl Into<String>) -> Self {
        self.tokens.insert(token.into(), Principal::Worker(WorkerId::new(worker)));
        self
    }

    pub fn client(mut self, token: impl Into<String>, client: impl Into<String>) -> Self {
        self.tokens.insert(token.into(), Principal::Client(ClientId(client.into())));
        self
    }

    pub fn parse(text: &str) -> Result<Self, TokenFileError> {
        let file: TokenFile = toml::from_str(text)?;
        let tokens = file
            .tokens
            .into_iter()
            .map(|(token, entry)| {
                let principal = match entry {
                    TokenEntry::Worker(w) => Principal::Worker(WorkerId::new(w)),
                    TokenEntry::Client(c) => Principal::Client(ClientId(c)),
                };
                (token, principal)
            })
            .collect();
        Ok(StaticTokens { tokens })
    }

    pub fn load(path: &Path) -> Result<Self, TokenFileError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

impl Authenticator for StaticTokens {
    fn authenticate(&self, token: &str) -> Option<Principal> {
        self.tokens.get(token).cloned()
    }
}
