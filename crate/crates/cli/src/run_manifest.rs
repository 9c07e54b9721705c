//! `run_manifest.txt`: what produced an artifact directory.

use std::path::{Path, PathBuf};
use std::time::SystemTime;

use chrono::{DateTime, SecondsFormat, Utc};
use geomeld_core::kv::KvWriter;

use crate::error::CliError;

pub const RUN_MANIFEST: &str = "run_manifest.txt";

pub fn version() -> String {
    format!("{} ({})", env!("CARGO_PKG_VERSION"), env!("GEOMELD_DESCRIBE"))
}

fn timestamp(t: SystemTime) -> String {
    DateTime::<Utc>::from(t).to_rfc3339_opts(SecondsFormat::Millis, true)
}

pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    started: SystemTime,
    /// Effective configuration with defaults filled in, as `key=value` lines.
    pub config: String,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn start(command: &str, seed: u64) -> Self {
        Self { command: command.into(), seed, started: SystemTime::now(), config: String::new(), outputs: Vec::new() }
    }

    pub fn to_text(&self, finished: SystemTime) -> String {
        let mut w = KvWriter::default();
        w.put("command", &self.command);
        w.put("version", version());
        w.put("seed", self.seed);
        w.put("started", timestamp(self.started));
        w.put("finished", timestamp(finished));
        for (i, p) in self.outputs.iter().enumerate() {
            w.put(&format!("output.{i}"), p.display());
        }
        for line in self.config.lines().filter(|l| !l.trim().is_empty()) {
            if let Some((k, v)) = line.split_once('=') {
                w.put(&format!("config.{k}"), v);
            }
        }
        w.finish()
    }

    /// Writes the manifest into `dir`, replacing any earlier one.
    pub fn finish(&self, dir: &Path) -> Result<PathBuf, CliError> {
        let path = dir.join(RUN_MANIFEST);
        std::fs::write(&path, self.to_text(SystemTime::now())).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}
