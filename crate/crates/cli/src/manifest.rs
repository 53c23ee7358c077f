use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use anyhow::Result;
use serde::Serialize;

/// Written next to every output so the run can be repeated.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    /// Scenario with every default filled in.
    pub resolved_config: serde_json::Value,
    pub threads: usize,
    pub inputs: BTreeMap<String, String>,
    /// Seconds per phase.
    pub timings: BTreeMap<String, f64>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        Self {
            tool: "advsim",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            resolved_config: serde_json::Value::Null,
            threads: rayon::current_num_threads(),
            inputs: BTreeMap::new(),
            timings: BTreeMap::new(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Measures named phases.
pub struct Timer {
    start: Instant,
}

impl Timer {
    pub fn start() -> Self {
        Self { start: Instant::now() }
    }

    pub fn lap(&mut self, manifest: &mut Manifest, phase: &str) {
        let now = Instant::now();
        manifest
            .timings
            .insert(phase.to_string(), now.duration_since(self.start).as_secs_f64());
        self.start = now;
    }
}
