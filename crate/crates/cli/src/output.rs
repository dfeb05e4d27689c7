//! Output directory handling and the per-directory manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use prefixlab::experiment::ExperimentPlan;
use prefixlab::io::sha256_hex;
use serde::Serialize;

use crate::CliError;

#[derive(Serialize)]
struct InputRecord {
    role: String,
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'static str,
    seed: Option<u64>,
    config: &'a ExperimentPlan,
    inputs: &'a [InputRecord],
    outputs: &'a BTreeMap<String, String>,
}

/// Collects the files a subcommand writes and records them in `manifest.json`.
pub struct OutDir {
    dir: PathBuf,
    command: String,
    inputs: Vec<InputRecord>,
    input_paths: Vec<PathBuf>,
    outputs: BTreeMap<String, String>,
}

impl OutDir {
    pub fn create(dir: &Path, command: &str) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::config(format!("cannot create {}: {e}", dir.display())))?;
        Ok(OutDir {
            dir: dir.to_path_buf(),
            command: command.to_string(),
            inputs: Vec::new(),
            input_paths: Vec::new(),
            outputs: BTreeMap::new(),
        })
    }

    /// Reads an input file, recording its hash; a missing file is a config error.
    pub fn read_input(&mut self, role: &str, path: &Path) -> Result<String, CliError> {
        let bytes = fs::read(path).map_err(|e| CliError::config(format!("cannot read {role} {}: {e}", path.display())))?;
        self.inputs.push(InputRecord { role: role.into(), path: path.display().to_string(), sha256: sha256_hex(&bytes) });
        if let Ok(c) = path.canonicalize() {
            self.input_paths.push(c);
        }
        String::from_utf8(bytes).map_err(|_| CliError::contract(format!("{role} {} is not UTF-8", path.display())))
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        if let Ok(c) = path.canonicalize() {
            if self.input_paths.contains(&c) {
                return Err(CliError::contract(format!("refusing to overwrite input file {}", path.display())));
            }
        }
        fs::write(&path, contents).map_err(|e| CliError::config(format!("cannot write {}: {e}", path.display())))?;
        self.outputs.insert(name.to_string(), sha256_hex(contents.as_bytes()));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::contract(e.to_string()))?;
        s.push('\n');
        self.write(name, &s)
    }

    pub fn finish(mut self, plan: &ExperimentPlan, seed: Option<u64>) -> Result<(), CliError> {
        self.outputs.remove("manifest.json");
        let manifest = Manifest {
            command: &self.command,
            version: env!("CARGO_PKG_VERSION"),
            seed,
            config: plan,
            inputs: &self.inputs,
            outputs: &self.outputs,
        };
        let mut s = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::contract(e.to_string()))?;
        s.push('\n');
        fs::write(self.dir.join("manifest.json"), s).map_err(|e| CliError::config(e.to_string()))?;
        Ok(())
    }
}
