//! Workbench configuration: exploration bounds, fairness window, seed.

use crate::syntax::Name;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

/// Exploration bounds shared by transition-system construction, unfolding
/// and equivalence checking.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bounds {
    pub max_depth: usize,
    pub max_states: usize,
    /// Extra names added to the free-input universe.
    pub universe_extra: Vec<Name>,
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds {
            max_depth: 6,
            max_states: 20_000,
            universe_extra: Vec::new(),
        }
    }
}

impl Bounds {
    pub fn with_depth(depth: usize) -> Bounds {
        Bounds {
            max_depth: depth,
            ..Bounds::default()
        }
    }

    pub fn extra_names(&self) -> BTreeSet<Name> {
        self.universe_extra.iter().cloned().collect()
    }
}

/// Full workbench configuration; flag > config file > default.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkbenchConfig {
    pub bounds: Bounds,
    pub fair_window: usize,
    pub seed: u64,
}

impl Default for WorkbenchConfig {
    fn default() -> Self {
        WorkbenchConfig {
            bounds: Bounds::default(),
            fair_window: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {0}: expected `key=value`")]
    BadLine(usize),
    #[error("line {line}: bad value for `{key}`")]
    BadValue { line: usize, key: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("{0} must be positive")]
    NonPositive(&'static str),
}

impl WorkbenchConfig {
    /// Parse `key=value` lines: `max_depth`, `max_states`, `universe_extra`
    /// (comma-separated names), `fair_window`, `seed`. Blank lines and
    /// `#` comments are skipped.
    pub fn parse(text: &str) -> Result<WorkbenchConfig, ConfigError> {
        let mut cfg = WorkbenchConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::BadLine(i + 1))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |_| ConfigError::BadValue {
                line: i + 1,
                key: key.to_string(),
            };
            match key {
                "max_depth" => cfg.bounds.max_depth = value.parse().map_err(bad)?,
                "max_states" => cfg.bounds.max_states = value.parse().map_err(bad)?,
                "fair_window" => cfg.fair_window = value.parse().map_err(bad)?,
                "seed" => cfg.seed = value.parse().map_err(bad)?,
                "universe_extra" => {
                    cfg.bounds.universe_extra = value
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(Name::src)
                        .collect();
                }
                _ => {
                    return Err(ConfigError::UnknownKey {
                        line: i + 1,
                        key: key.to_string(),
                    })
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.bounds.max_depth == 0 {
            return Err(ConfigError::NonPositive("max_depth"));
        }
        if self.bounds.max_states == 0 {
            return Err(ConfigError::NonPositive("max_states"));
        }
        if self.fair_window == 0 {
            return Err(ConfigError::NonPositive("fair_window"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let cfg = WorkbenchConfig::default();
        assert_eq!(cfg.bounds.max_depth, 6);
        assert_eq!(cfg.bounds.max_states, 20_000);
        assert_eq!(cfg.fair_window, 64);
        assert_eq!(cfg.seed, 0);
    }

    #[test]
    fn parse_overrides() {
        let cfg = WorkbenchConfig::parse(
            "max_depth = 3\nfair_window=8 # window\nuniverse_extra = a, b\n",
        )
        .unwrap();
        assert_eq!(cfg.bounds.max_depth, 3);
        assert_eq!(cfg.fair_window, 8);
        assert_eq!(cfg.bounds.universe_extra, vec![Name::src("a"), Name::src("b")]);
    }

    #[test]
    fn zero_depth_rejected() {
        assert!(WorkbenchConfig::parse("max_depth=0").is_err());
    }
}
