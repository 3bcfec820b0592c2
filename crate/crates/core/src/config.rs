//! Project configuration file (TOML).
//!
//! ```toml
//! [assignment]
//! mode = "random"
//! seed = 42
//! timeLimitMinutes = 15
//! warningAtMinutes = 14
//! selfReviewAllowed = false
//! skipCooldown = 1
//!
//! [assembly]
//! method = "POST"
//!
//! [executor]
//! wallTimeMs = 5000
//! ```
//!
//! Every key is optional and falls back to the defaults.

use serde::{Deserialize, Serialize};

use crate::assembler::AssemblyOptions;
use crate::sandbox::Limits;
use crate::scheduler::{AssignmentMode, AssignmentPolicy, PolicyError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeName {
    #[default]
    Fifo,
    Random,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default, deny_unknown_fields)]
pub struct AssignmentSection {
    pub mode: ModeName,
    pub seed: u64,
    pub time_limit_minutes: u64,
    pub warning_at_minutes: u64,
    pub self_review_allowed: bool,
    pub skip_cooldown: u32,
}

impl Default for AssignmentSection {
    fn default() -> Self {
        let p = AssignmentPolicy::default();
        AssignmentSection {
            mode: ModeName::Fifo,
            seed: 0,
            time_limit_minutes: p.time_limit / 60,
            warning_at_minutes: p.warning_at / 60,
            self_review_allowed: p.self_review_allowed,
            skip_cooldown: p.skip_cooldown,
        }
    }
}

impl AssignmentSection {
    pub fn policy(&self) -> Result<AssignmentPolicy, PolicyError> {
        let policy = AssignmentPolicy {
            mode: match self.mode {
                ModeName::Fifo => AssignmentMode::Fifo,
                ModeName::Random => AssignmentMode::Random { seed: self.seed },
            },
            self_review_allowed: self.self_review_allowed,
            skip_cooldown: self.skip_cooldown,
            time_limit: self.time_limit_minutes * 60,
            warning_at: self.warning_at_minutes * 60,
        };
        policy.validate()?;
        Ok(policy)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default, deny_unknown_fields)]
pub struct ExecutorSection {
    pub wall_time_ms: u64,
    pub max_output_bytes: u64,
}

impl Default for ExecutorSection {
    fn default() -> Self {
        let l = Limits::default();
        ExecutorSection { wall_time_ms: l.wall_time_ms, max_output_bytes: l.max_output_bytes }
    }
}

impl ExecutorSection {
    pub fn limits(&self) -> Limits {
        Limits { wall_time_ms: self.wall_time_ms, max_output_bytes: self.max_output_bytes }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default, deny_unknown_fields)]
pub struct ProjectConfig {
    pub assignment: AssignmentSection,
    pub assembly: AssemblyOptions,
    pub executor: ExecutorSection,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config: {0}")]
    Policy(#[from] PolicyError),
}

impl ProjectConfig {
    /// Parses and validates the assignment policy.
    pub fn parse(text: &str) -> Result<ProjectConfig, ConfigError> {
        let config: ProjectConfig = toml::from_str(text)?;
        config.assignment.policy()?;
        Ok(config)
    }

    pub fn policy(&self) -> AssignmentPolicy {
        self.assignment.policy().expect("validated when parsed")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembler::HttpMethod;

    #[test]
    fn empty_file_is_the_default_policy() {
        let config = ProjectConfig::parse("").unwrap();
        assert_eq!(config.policy(), AssignmentPolicy::default());
        assert_eq!(config.assembly, AssemblyOptions::default());
        assert_eq!(config.executor.limits(), Limits::default());
    }

    #[test]
    fn full_file() {
        let text = r#"
            [assignment]
            mode = "random"
            seed = 42
            timeLimitMinutes = 20
            warningAtMinutes = 18
            selfReviewAllowed = true
            skipCooldown = 0

            [assembly]
            method = "POST"
            force = true

            [executor]
            wallTimeMs = 250
        "#;
        let config = ProjectConfig::parse(text).unwrap();
        let policy = config.policy();
        assert_eq!(policy.mode, AssignmentMode::Random { seed: 42 });
        assert_eq!((policy.time_limit, policy.warning_at), (1200, 1080));
        assert!(policy.self_review_allowed);
        assert_eq!(policy.skip_cooldown, 0);
        assert_eq!(config.assembly.method, HttpMethod::Post);
        assert!(config.assembly.force);
        assert_eq!(config.executor.wall_time_ms, 250);
    }

    #[test]
    fn warning_after_limit_is_rejected() {
        let text = "[assignment]\ntimeLimitMinutes = 10\nwarningAtMinutes = 10\n";
        assert!(matches!(ProjectConfig::parse(text), Err(ConfigError::Policy(_))));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(ProjectConfig::parse("[assignment]\nmood = 1\n"), Err(ConfigError::Parse(_))));
    }
}
