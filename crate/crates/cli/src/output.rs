use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::Failure;

#[derive(Debug, Serialize)]
struct InputDigest {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    config: &'a serde_json::Value,
    inputs: &'a [InputDigest],
    version: &'a str,
    duration_secs: f64,
    outputs: Vec<&'a str>,
}

/// Inputs read and outputs produced by one command. Nothing touches the
/// filesystem until [`Run::finish`].
pub struct Run {
    command: &'static str,
    started: Instant,
    inputs: Vec<InputDigest>,
    outputs: Vec<(String, Vec<u8>)>,
}

impl Run {
    pub fn new(command: &'static str) -> Self {
        Self {
            command,
            started: Instant::now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    /// Reads a file and records its digest.
    pub fn read(&mut self, path: &Path) -> Result<String, Failure> {
        let bytes =
            fs::read(path).map_err(|e| Failure::usage(format!("read {}: {e}", path.display())))?;
        self.inputs.push(InputDigest {
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
        String::from_utf8(bytes)
            .map_err(|_| Failure::usage(format!("{} is not UTF-8", path.display())))
    }

    pub fn add(&mut self, name: &str, contents: impl Into<Vec<u8>>) {
        self.outputs.push((name.to_string(), contents.into()));
    }

    /// Writes every output and the manifest into `dir`.
    pub fn finish(self, dir: &Path, config: &serde_json::Value) -> Result<(), Failure> {
        let io =
            |p: &PathBuf, e: std::io::Error| Failure::usage(format!("write {}: {e}", p.display()));
        fs::create_dir_all(dir).map_err(|e| io(&dir.to_path_buf(), e))?;
        for (name, bytes) in &self.outputs {
            let p = dir.join(name);
            fs::write(&p, bytes).map_err(|e| io(&p, e))?;
        }
        let manifest = RunManifest {
            command: self.command,
            config,
            inputs: &self.inputs,
            version: env!("CARGO_PKG_VERSION"),
            duration_secs: self.started.elapsed().as_secs_f64(),
            outputs: self.outputs.iter().map(|(n, _)| n.as_str()).collect(),
        };
        let p = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&p, text).map_err(|e| io(&p, e))
    }
}
