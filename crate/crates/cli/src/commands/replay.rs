use std::path::Path;

use anyhow::anyhow;

use crate::args::{Command, ReplayArgs};
use crate::error::{CliError, CliResult};
use crate::record::{sha256_file, RunRecord};

/// Checks the recorded inputs are unchanged, re-runs the command into
/// `--out`, and compares every recorded output byte for byte.
pub fn run(a: &ReplayArgs, quiet: bool) -> CliResult<()> {
    let record = RunRecord::load(&a.run)?;
    if matches!(record.command, Command::Replay(_)) {
        return Err(CliError::usage("a replay record cannot be replayed"));
    }
    let mut changed = Vec::new();
    for (path, hash) in &record.inputs {
        match sha256_file(Path::new(path)) {
            Ok(h) if &h == hash => {}
            _ => changed.push(path.clone()),
        }
    }
    if !changed.is_empty() {
        return Err(CliError::Runtime(anyhow!(
            "inputs changed or missing since the recorded run: {}",
            changed.join(", ")
        )));
    }
    let command = record.command.clone().with_out(a.out.clone());
    super::execute(&command, quiet)?;

    let mut differing = Vec::new();
    for (name, hash) in &record.outputs {
        match sha256_file(&a.out.join(name)) {
            Ok(h) if &h == hash => {}
            _ => differing.push(name.clone()),
        }
    }
    if !differing.is_empty() {
        return Err(CliError::Runtime(anyhow!(
            "replay differs from the record in: {}",
            differing.join(", ")
        )));
    }
    if !quiet {
        println!("replayed {}: {} outputs identical", command.name(), record.outputs.len());
    }
    Ok(())
}
