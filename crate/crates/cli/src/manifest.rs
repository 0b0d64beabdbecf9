use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FORMAT: &str = "stvg-manifest/1";

/// Record written by every command next to its primary output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub command: String,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    /// Input path → SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Output path → SHA-256.
    pub outputs: BTreeMap<String, String>,
    pub wall_clock_secs: f64,
    pub version: String,
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

pub struct ManifestBuilder {
    started: Instant,
    command: String,
    config: serde_json::Value,
    seed: Option<u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl ManifestBuilder {
    pub fn new(command: &str) -> Self {
        ManifestBuilder {
            started: Instant::now(),
            command: command.to_string(),
            config: serde_json::Value::Null,
            seed: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn config(&mut self, config: impl Serialize) -> anyhow::Result<()> {
        self.config = serde_json::to_value(config)?;
        Ok(())
    }

    pub fn seed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    /// Registers the output the manifest is named after.
    pub fn primary_output(&mut self, path: &Path) {
        self.outputs.insert(0, path.to_path_buf());
    }

    /// Writes the manifest to `target`, or next to the first output, or to
    /// `<command>.manifest.json` in the working directory.
    pub fn finish(self, target: Option<&Path>) -> anyhow::Result<PathBuf> {
        let path = match (target, self.outputs.first()) {
            (Some(t), _) => t.to_path_buf(),
            (None, Some(out)) => {
                let mut name = out.file_name().unwrap_or_default().to_os_string();
                name.push(".manifest.json");
                out.with_file_name(name)
            }
            (None, None) => PathBuf::from(format!("{}.manifest.json", self.command)),
        };
        let hash_all = |paths: &[PathBuf]| -> anyhow::Result<BTreeMap<String, String>> {
            paths
                .iter()
                .map(|p| {
                    let shown = std::fs::canonicalize(p).unwrap_or_else(|_| p.clone());
                    Ok((shown.display().to_string(), sha256_file(p)?))
                })
                .collect()
        };
        let manifest = RunManifest {
            format: MANIFEST_FORMAT.to_string(),
            command: self.command,
            argv: std::env::args().collect(),
            config: self.config,
            seed: self.seed,
            inputs: hash_all(&self.inputs)?,
            outputs: hash_all(&self.outputs)?,
            wall_clock_secs: self.started.elapsed().as_secs_f64(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        };
        write_json(&path, &manifest)?;
        Ok(path)
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_manifest(path: &Path) -> anyhow::Result<RunManifest> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let m: RunManifest = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    anyhow::ensure!(m.format == MANIFEST_FORMAT, "{}: unsupported manifest format `{}`", path.display(), m.format);
    Ok(m)
}
