//! Output directory handling and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::{DateTime, SecondsFormat, Utc};
use serde::Serialize;
use sha2::{Digest, Sha256};
use vqsense::conformal::StepSchedule;
use vqsense::engine::{BasisChoice, RunConfig, TargetProcess};

/// Environment variable naming the root for output directories.
pub const OUT_ROOT_ENV: &str = "VQSENSE_OUT";
const DEFAULT_OUT_ROOT: &str = "vqsense-out";

/// `--out-dir` if given, otherwise `<root>/<command>` where the root comes
/// from [`OUT_ROOT_ENV`] or defaults to `vqsense-out`.
pub fn resolve_out_dir(flag: Option<&Path>, command: &str) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    let root = std::env::var_os(OUT_ROOT_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_ROOT));
    root.join(command)
}

/// Current time, or `SOURCE_DATE_EPOCH` when set so repeated runs can be
/// byte-identical.
pub fn timestamp() -> String {
    let fixed = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.trim().parse::<i64>().ok())
        .and_then(|s| DateTime::<Utc>::from_timestamp(s, 0));
    fixed
        .unwrap_or_else(Utc::now)
        .to_rfc3339_opts(SecondsFormat::Secs, true)
}

#[derive(Debug, Clone, Serialize)]
pub struct Design {
    pub basis: &'static str,
    pub cell: &'static str,
    pub encoding: &'static str,
    pub threshold_schedule: String,
    pub probe_gradient: &'static str,
    pub feedback_order: &'static str,
    pub set_membership: &'static str,
    pub target_process: String,
}

impl Design {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            basis: match cfg.basis {
                BasisChoice::Hadamard => "hadamard",
                BasisChoice::Computational => "computational",
            },
            cell: "gru-2-layer",
            encoding: "one-hot",
            threshold_schedule: match cfg.threshold_schedule {
                StepSchedule::Constant { eta } => format!("constant eta={eta}"),
                StepSchedule::Decaying { eta1 } => format!("decaying eta1={eta1}/sqrt(t)"),
            },
            probe_gradient: "score-function with running-mean baseline",
            feedback_order: "threshold, estimator, probe",
            set_membership: "score <= lambda",
            target_process: match cfg.target {
                TargetProcess::Uniform => "uniform iid".to_string(),
                TargetProcess::Drift { period } => format!("drift period={period}"),
            },
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputFile {
    /// Relative to the output directory.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub passes_per_forward: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_file: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<RunConfig>,
    pub seed: u64,
    pub trial_seeds: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub design: Option<Design>,
    pub started_at: String,
    pub finished_at: Option<String>,
    pub partial: bool,
    pub failure: Option<String>,
    pub outputs: Vec<OutputFile>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64) -> Self {
        Self {
            tool: "vqsense",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            variant: None,
            passes_per_forward: None,
            config_file: None,
            config: None,
            seed,
            trial_seeds: Vec::new(),
            design: None,
            started_at: timestamp(),
            finished_at: None,
            partial: true,
            failure: None,
            outputs: Vec::new(),
        }
    }

    pub fn with_config(mut self, cfg: &RunConfig, file: Option<&Path>) -> Self {
        self.trial_seeds = (0..cfg.trials).map(|i| cfg.trial_seed(i)).collect();
        self.design = Some(Design::from_config(cfg));
        self.config = Some(cfg.clone());
        self.config_file = file.map(|p| p.display().to_string());
        self
    }
}

pub const MANIFEST_NAME: &str = "manifest.json";

/// Writes artifacts into one directory and keeps the manifest in step.
#[derive(Debug)]
pub struct ArtifactWriter {
    dir: PathBuf,
    manifest: RunManifest,
    files: Vec<String>,
}

impl ArtifactWriter {
    /// Creates the directory and writes the manifest before anything else.
    pub fn create(dir: &Path, manifest: RunManifest) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        let w = Self {
            dir: dir.to_path_buf(),
            manifest,
            files: Vec::new(),
        };
        w.write_manifest()?;
        Ok(w)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, contents: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))?;
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        Ok(())
    }

    /// Records checksums of every written file and rewrites the manifest.
    pub fn finish(mut self, failure: Option<String>) -> Result<RunManifest> {
        let mut outputs = Vec::with_capacity(self.files.len());
        for name in &self.files {
            let bytes = fs::read(self.dir.join(name))?;
            outputs.push(OutputFile {
                path: name.clone(),
                bytes: bytes.len() as u64,
                sha256: sha256_hex(&bytes),
            });
        }
        self.manifest.outputs = outputs;
        self.manifest.partial = failure.is_some();
        self.manifest.failure = failure;
        self.manifest.finished_at = Some(timestamp());
        self.write_manifest()?;
        Ok(self.manifest)
    }

    fn write_manifest(&self) -> Result<()> {
        let mut text = serde_json::to_string_pretty(&self.manifest)?;
        text.push('\n');
        let path = self.dir.join(MANIFEST_NAME);
        fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_value() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_lists_checksums_after_finish() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = ArtifactWriter::create(dir.path(), RunManifest::new("run", 1)).unwrap();
        let first: serde_json::Value =
            serde_json::from_slice(&fs::read(dir.path().join(MANIFEST_NAME)).unwrap()).unwrap();
        assert_eq!(first["partial"], true);
        w.write("a.txt", b"abc").unwrap();
        let m = w.finish(None).unwrap();
        assert!(!m.partial);
        assert_eq!(m.outputs.len(), 1);
        assert_eq!(m.outputs[0].sha256, sha256_hex(b"abc"));
    }
}
