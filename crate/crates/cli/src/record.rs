use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::args::Command;
use crate::error::{CliError, CliResult};

pub const RUN_FILE: &str = "run.json";
pub const LOG_FILE: &str = "run.log";

/// Contents of `run.json`: enough to repeat the invocation and check that
/// it reproduced.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub tool: String,
    pub version: String,
    pub command: Command,
    /// Every parameter after defaults and presets were applied.
    pub parameters: serde_json::Value,
    /// Input path to sha256.
    pub inputs: BTreeMap<String, String>,
    /// Output name (relative to the output directory) to sha256.
    pub outputs: BTreeMap<String, String>,
}

impl RunRecord {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Runtime(anyhow::anyhow!("{}: {e}", path.display())))
    }
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Fails with every path in `paths` that does not exist.
pub fn require_files(paths: &[PathBuf]) -> CliResult<()> {
    let missing: Vec<String> = paths
        .iter()
        .filter(|p| !p.is_file())
        .map(|p| p.display().to_string())
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(anyhow::anyhow!(
            "missing input file{}: {}",
            if missing.len() > 1 { "s" } else { "" },
            missing.join(", ")
        )))
    }
}

/// Bookkeeping for one invocation: log lines, hashed inputs, and outputs
/// that go into the run record.
pub struct Session {
    out: PathBuf,
    log: Vec<String>,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
    quiet: bool,
}

impl Session {
    pub fn new(out: &Path) -> CliResult<Self> {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Self {
            out: out.to_path_buf(),
            log: Vec::new(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            quiet: false,
        })
    }

    pub fn quiet(mut self, quiet: bool) -> Self {
        self.quiet = quiet;
        self
    }

    pub fn log(&mut self, line: impl Into<String>) {
        let line = line.into();
        if !self.quiet {
            println!("{line}");
        }
        self.log.push(line);
    }

    pub fn input(&mut self, path: &Path) -> CliResult<PathBuf> {
        let hash = sha256_file(path)?;
        self.inputs.insert(path.display().to_string(), hash);
        Ok(path.to_path_buf())
    }

    /// Path of an output file, registered for hashing.
    pub fn output(&mut self, name: &str) -> CliResult<PathBuf> {
        let path = self.out.join(name);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        self.outputs.push(name.to_string());
        Ok(path)
    }

    /// Path of an output left out of the record, for wall-clock timings.
    pub fn volatile_output(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn dir(&self) -> &Path {
        &self.out
    }

    /// Writes `run.log` and `run.json`.
    pub fn finish(self, command: &Command, parameters: serde_json::Value) -> CliResult<RunRecord> {
        let mut log = fs::File::create(self.out.join(LOG_FILE))?;
        for line in &self.log {
            writeln!(log, "{line}")?;
        }
        let mut outputs = BTreeMap::new();
        for name in self.outputs.iter().chain(std::iter::once(&LOG_FILE.to_string())) {
            outputs.insert(name.clone(), sha256_file(&self.out.join(name))?);
        }
        let record = RunRecord {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.clone(),
            parameters,
            inputs: self.inputs,
            outputs,
        };
        let mut text = serde_json::to_string_pretty(&record)?;
        text.push('\n');
        fs::write(self.out.join(RUN_FILE), text)?;
        Ok(record)
    }
}
