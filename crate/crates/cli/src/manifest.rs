use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};
use tagforest::io::manifest_path;

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut reader = BufReader::new(File::open(path).with_context(|| format!("reading {}", path.display()))?);
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = reader.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(format!("{:x}", hasher.finalize()))
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'static str,
    seed: u64,
    params: &'a BTreeMap<String, Value>,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    started_unix: u64,
    wall_clock_seconds: f64,
}

/// Collects what a command was run with; written next to each output once
/// the command finishes.
pub struct RunRecord {
    command: &'static str,
    seed: u64,
    params: BTreeMap<String, Value>,
    inputs: Vec<PathBuf>,
    started: Instant,
    started_unix: u64,
}

impl RunRecord {
    pub fn start(command: &'static str, seed: u64) -> Self {
        Self {
            command,
            seed,
            params: BTreeMap::new(),
            inputs: Vec::new(),
            started: Instant::now(),
            started_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        }
    }

    pub fn param(&mut self, key: &str, value: impl Serialize) -> &mut Self {
        let v = serde_json::to_value(value).expect("parameter serializes");
        self.params.insert(key.to_string(), v);
        self
    }

    pub fn input(&mut self, path: &Path) -> &mut Self {
        self.inputs.push(path.to_path_buf());
        self
    }

    pub fn finish(&self, outputs: &[&Path]) -> Result<()> {
        let digest_all = |paths: &mut dyn Iterator<Item = &Path>| -> Result<BTreeMap<String, String>> {
            paths.map(|p| Ok((p.display().to_string(), sha256_file(p)?))).collect()
        };
        let manifest = Manifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            seed: self.seed,
            params: &self.params,
            inputs: digest_all(&mut self.inputs.iter().map(PathBuf::as_path))?,
            outputs: digest_all(&mut outputs.iter().copied())?,
            started_unix: self.started_unix,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        for out in outputs {
            let path = manifest_path(out);
            std::fs::write(&path, &text).with_context(|| format!("writing {}", path.display()))?;
        }
        Ok(())
    }
}
