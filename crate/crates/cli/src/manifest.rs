//! Per-run manifests: a JSON record of the command, resolved configuration,
//! seed, toolkit version and wallclock, written beside each primary output.
//!
//! Manifests carry timing and are the one run artifact that is *not*
//! byte-reproducible across runs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Result;
use serde_json::json;

pub struct Manifest {
    command: &'static str,
    config: BTreeMap<String, String>,
    outputs: Vec<String>,
    seed: Option<u64>,
    started: Instant,
}

impl Manifest {
    pub fn new(command: &'static str) -> Self {
        Manifest {
            command,
            config: BTreeMap::new(),
            outputs: Vec::new(),
            seed: None,
            started: Instant::now(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.config.insert(key.to_string(), value.to_string());
    }

    pub fn seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.set("seed", seed);
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    /// Writes `<primary>.manifest.json` next to the primary output.
    pub fn write(&self, primary: &Path) -> Result<()> {
        let value = json!({
            "command": self.command,
            "config": self.config,
            "outputs": self.outputs,
            "seed": self.seed,
            "version": env!("CARGO_PKG_VERSION"),
            "wallclock_seconds": self.started.elapsed().as_secs_f64(),
        });
        let mut path = PathBuf::from(primary);
        let file_name = path
            .file_name()
            .map(|n| n.to_string_lossy().to_string())
            .unwrap_or_else(|| "output".to_string());
        path.set_file_name(format!("{file_name}.manifest.json"));
        let text = serde_json::to_string_pretty(&value)?;
        lexnmt::write_file_atomic(&path, text.as_bytes())?;
        Ok(())
    }
}
