use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::GlobalArgs;

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub stage: String,
    pub seconds: f64,
}

/// Provenance record written as `manifest.json` next to every command's outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub args: Vec<String>,
    pub inputs: Vec<String>,
    /// SHA-256 of the effective settings serialized as compact JSON.
    pub config_hash: String,
    pub seed: u64,
    pub jobs: usize,
    pub deterministic: bool,
    pub started_unix: u64,
    pub timings: Vec<Timing>,
}

pub struct Run {
    manifest: RunManifest,
    out: PathBuf,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

impl Run {
    /// Create the output directory and start a manifest. `settings` is
    /// whatever determines the command's results besides its inputs.
    pub fn start(
        command: &str,
        g: &GlobalArgs,
        argv: &[String],
        inputs: &[PathBuf],
        settings: &impl Serialize,
        seed: u64,
        out: &Path,
    ) -> Result<Self> {
        std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let settings = curvebind::output::to_json(settings, false)?;
        Ok(Self {
            manifest: RunManifest {
                command: command.to_string(),
                version: format!("curvebind {}", env!("CARGO_PKG_VERSION")),
                args: argv.to_vec(),
                inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
                config_hash: sha256_hex(&settings),
                seed,
                jobs: g.effective_jobs(),
                deterministic: g.deterministic,
                started_unix: SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map_or(0, |d| d.as_secs()),
                timings: Vec::new(),
            },
            out: out.to_path_buf(),
        })
    }

    pub fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let r = f();
        self.manifest.timings.push(Timing {
            stage: name.to_string(),
            seconds: t.elapsed().as_secs_f64(),
        });
        r
    }

    pub fn out(&self) -> &Path {
        &self.out
    }

    pub fn finish(self) -> Result<()> {
        write_json(&self.out.join("manifest.json"), &self.manifest)
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let bytes = curvebind::output::to_json(value, true)?;
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
