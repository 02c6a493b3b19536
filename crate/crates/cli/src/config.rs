//! Run configuration: named profiles, the flat key=value config file, and
//! the precedence rule (command-line flags > config file > profile).

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};

/// Hyperparameter profile. `desk` is sized for commodity CPUs; `paper`
/// mirrors the reference large-scale setup and is kept for documentation
/// rather than desk-scale runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Desk,
    Paper,
}

impl Profile {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => bail!("unknown profile {other:?} (expected desk or paper)"),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Profile::Desk => "desk",
            Profile::Paper => "paper",
        }
    }
}

/// Fully resolved defaults for one profile.
#[derive(Debug, Clone)]
pub struct ProfileValues {
    pub threshold: u32,
    pub layers: usize,
    pub hidden: usize,
    pub embed: usize,
    pub batch: usize,
    pub epochs: usize,
    pub beam: usize,
    pub epsilon: f64,
    pub eos_discount: f64,
    pub dropout: f64,
    pub learning_rate: f64,
    pub max_len: usize,
    pub em_iterations: usize,
    pub rare_threshold: u64,
    pub bootstrap_iterations: usize,
    pub seed: u64,
}

impl Profile {
    pub fn values(self) -> ProfileValues {
        match self {
            Profile::Desk => ProfileValues {
                threshold: 1,
                layers: 2,
                hidden: 64,
                embed: 64,
                batch: 32,
                epochs: 14,
                beam: 5,
                epsilon: 1e-3,
                eos_discount: 0.9,
                dropout: 0.2,
                learning_rate: 1e-3,
                max_len: 50,
                em_iterations: 10,
                rare_threshold: 8,
                bootstrap_iterations: 10_000,
                seed: 1,
            },
            Profile::Paper => ProfileValues {
                threshold: 1,
                layers: 4,
                hidden: 800,
                embed: 800,
                batch: 64,
                epochs: 14,
                beam: 5,
                epsilon: 1e-3,
                eos_discount: 0.9,
                dropout: 0.2,
                learning_rate: 1e-3,
                max_len: 50,
                em_iterations: 10,
                rare_threshold: 8,
                bootstrap_iterations: 10_000,
                seed: 1,
            },
        }
    }
}

/// A parsed flat `key=value` config file. Lines starting with `#` and blank
/// lines are ignored.
#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    values: HashMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let mut values = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!(
                    "{}:{}: expected key=value, got {line:?}",
                    path.display(),
                    i + 1
                );
            };
            values.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(ConfigFile { values })
    }

    pub fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|e| anyhow::anyhow!("config key {key}={raw:?}: {e}")),
        }
    }
}

/// Resolves one knob: explicit flag wins, then the config file, then the
/// profile default.
pub fn resolve<T: std::str::FromStr + Copy>(
    flag: Option<T>,
    config: &ConfigFile,
    key: &str,
    default: T,
) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    if let Some(v) = flag {
        return Ok(v);
    }
    if let Some(v) = config.get::<T>(key)? {
        return Ok(v);
    }
    Ok(default)
}
