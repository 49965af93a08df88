//! Subcommand bodies. Each returns the finished manifest; failures that
//! leave partial artifacts behind are reported through [`RunFailed`].

use std::fmt::Write as _;
use std::path::Path;

use anyhow::Result;
use serde::Serialize;
use vqsense::engine::{
    aggregate, pretrain_run, run_experiment, BenchmarkMode, RunConfig, TrialResult,
};
use vqsense::gradcheck::{self, GradcheckOptions, GradcheckReport};

use crate::artifacts::{ArtifactWriter, RunManifest};
use crate::checkpoint;

/// The command ran but did not succeed; artifacts and manifest were written.
#[derive(Debug)]
pub struct RunFailed(pub String);

impl std::fmt::Display for RunFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for RunFailed {}

pub const AGGREGATE_HEADER: &str = "t,mode,mean_coverage,mean_set_size,mean_lambda";

pub fn records_name(mode: BenchmarkMode, trial: usize) -> String {
    format!("{}_trial{trial}.jsonl", mode.name())
}

pub fn render_records(trial: &TrialResult) -> Result<String> {
    let mut out = String::new();
    for r in &trial.records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

fn aggregate_rows(out: &mut String, mode: BenchmarkMode, trials: &[TrialResult]) {
    for row in aggregate(trials) {
        let _ = writeln!(
            out,
            "{},{},{:?},{:?},{:?}",
            row.t,
            mode.name(),
            row.mean_coverage,
            row.mean_set_size,
            row.mean_lambda
        );
    }
}

/// Final cross-trial means for one mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mode: BenchmarkMode,
    pub trials: usize,
    pub coverage: f64,
    pub set_size: f64,
    pub mean_loss: f64,
}

fn summarize(mode: BenchmarkMode, trials: &[TrialResult]) -> Summary {
    let k = trials.len().max(1) as f64;
    let mean = |f: &dyn Fn(&TrialResult) -> f64| trials.iter().map(f).sum::<f64>() / k;
    Summary {
        mode,
        trials: trials.len(),
        coverage: mean(&|t| t.final_coverage()),
        set_size: mean(&|t| t.final_set_size()),
        mean_loss: mean(&|t| t.mean_loss()),
    }
}

fn print_summary(s: &Summary) {
    println!(
        "{:<24} trials {}  coverage {:.4}  set size {:.4}  mean loss {:.4}",
        s.mode.name(),
        s.trials,
        s.coverage,
        s.set_size,
        s.mean_loss
    );
}

/// Runs every mode in `modes` and writes records plus one joined CSV.
fn run_modes(
    cfg: &RunConfig,
    modes: &[BenchmarkMode],
    out_dir: &Path,
    manifest: RunManifest,
    csv_name: &str,
) -> Result<(RunManifest, Vec<Summary>)> {
    let mut writer = ArtifactWriter::create(out_dir, manifest)?;
    let mut csv = String::from(AGGREGATE_HEADER);
    csv.push('\n');
    let mut summaries = Vec::new();
    let mut failure = None;
    for &mode in modes {
        let mode_cfg = RunConfig {
            mode,
            ..cfg.clone()
        };
        let outcome = run_experiment(&mode_cfg);
        for t in &outcome.trials {
            writer.write(&records_name(mode, t.trial), render_records(t)?.as_bytes())?;
        }
        if let Some(f) = &outcome.failure {
            failure = Some(format!("{} trial {}: {}", mode.name(), f.trial, f.error));
            break;
        }
        aggregate_rows(&mut csv, mode, &outcome.trials);
        let s = summarize(mode, &outcome.trials);
        print_summary(&s);
        summaries.push(s);
    }
    if failure.is_none() {
        writer.write(csv_name, csv.as_bytes())?;
    }
    let manifest = writer.finish(failure.clone())?;
    match failure {
        Some(f) => Err(RunFailed(format!("run aborted, partial results kept: {f}")).into()),
        None => Ok((manifest, summaries)),
    }
}

pub fn run(cfg: &RunConfig, config_file: Option<&Path>, out_dir: &Path) -> Result<Vec<Summary>> {
    let manifest = RunManifest::new("run", cfg.seed).with_config(cfg, config_file);
    Ok(run_modes(cfg, &[cfg.mode], out_dir, manifest, "aggregate.csv")?.1)
}

pub fn bench(cfg: &RunConfig, config_file: Option<&Path>, out_dir: &Path) -> Result<Vec<Summary>> {
    let manifest = RunManifest::new("bench", cfg.seed).with_config(cfg, config_file);
    Ok(run_modes(cfg, &BenchmarkMode::ALL, out_dir, manifest, "bench.csv")?.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Ensemble,
    Dropout,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Ensemble => "ensemble",
            Variant::Dropout => "dropout",
        }
    }
}

pub fn bayesian(
    cfg: &RunConfig,
    variant: Variant,
    config_file: Option<&Path>,
    out_dir: &Path,
) -> Result<Vec<Summary>> {
    let mut manifest = RunManifest::new("bayesian", cfg.seed).with_config(cfg, config_file);
    manifest.variant = Some(variant.name().to_string());
    if variant == Variant::Dropout {
        manifest.passes_per_forward = Some(cfg.train.passes);
    }
    Ok(run_modes(cfg, &[cfg.mode], out_dir, manifest, "aggregate.csv")?.1)
}

#[derive(Debug, Serialize)]
struct PretrainRow {
    trial: usize,
    seed: u64,
    model: &'static str,
    cross_entropy_before: f64,
    cross_entropy_after: f64,
    mean_soft_size_first: Option<f64>,
    mean_soft_size_last: Option<f64>,
    theta_checkpoint: String,
    estimator_checkpoints: Vec<String>,
}

/// Pretrains every trial and writes the resulting probe angles and
/// estimator weights as checkpoints.
pub fn pretrain(cfg: &RunConfig, config_file: Option<&Path>, out_dir: &Path) -> Result<()> {
    let manifest = RunManifest::new("pretrain", cfg.seed).with_config(cfg, config_file);
    let mut writer = ArtifactWriter::create(out_dir, manifest)?;
    let mut summary = String::new();
    let mut failure = None;
    for trial in 0..cfg.trials {
        let seed = cfg.trial_seed(trial);
        let pre = match pretrain_run(cfg, seed) {
            Ok(p) => p,
            Err(e) => {
                failure = Some(format!("trial {trial}: {e}"));
                break;
            }
        };
        let theta_name = format!("trial{trial}_theta.txt");
        writer.write(&theta_name, checkpoint::render_probe(&pre.theta).as_bytes())?;
        let mut names = Vec::new();
        for (m, w) in pre.model.members().into_iter().enumerate() {
            let name = format!("trial{trial}_estimator{m}.txt");
            writer.write(&name, checkpoint::render_estimator(w).as_bytes())?;
            names.push(name);
        }
        let row = PretrainRow {
            trial,
            seed,
            model: pre.model.label(),
            cross_entropy_before: pre.cross_entropy_before,
            cross_entropy_after: pre.cross_entropy_after,
            mean_soft_size_first: pre.mean_soft_size_first,
            mean_soft_size_last: pre.mean_soft_size_last,
            theta_checkpoint: theta_name,
            estimator_checkpoints: names,
        };
        println!(
            "trial {trial}: cross-entropy {:.4} -> {:.4}",
            row.cross_entropy_before, row.cross_entropy_after
        );
        summary.push_str(&serde_json::to_string(&row)?);
        summary.push('\n');
    }
    writer.write("pretrain.jsonl", summary.as_bytes())?;
    writer.finish(failure.clone())?;
    match failure {
        Some(f) => Err(RunFailed(format!("pretraining aborted: {f}")).into()),
        None => Ok(()),
    }
}

pub fn gradcheck(opts: &GradcheckOptions, out_dir: &Path) -> Result<GradcheckReport> {
    let mut manifest = RunManifest::new("gradcheck", opts.seed);
    if opts.corrupt {
        manifest.variant = Some("corrupted".into());
    }
    let mut writer = ArtifactWriter::create(out_dir, manifest)?;
    let report = gradcheck::run(opts)?;
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    writer.write("gradcheck.json", text.as_bytes())?;
    for c in &report.checks {
        println!(
            "{:<26} {}  max error {:.3e} ({:?}, tolerance {:.0e})  max rel error {:.3e}",
            c.name,
            if c.pass { "PASS" } else { "FAIL" },
            c.max_error,
            c.unit,
            c.tolerance,
            c.max_rel_error
        );
    }
    let failed: Vec<&str> = report
        .checks
        .iter()
        .filter(|c| !c.pass)
        .map(|c| c.name)
        .collect();
    writer.finish(None)?;
    if failed.is_empty() {
        Ok(report)
    } else {
        Err(RunFailed(format!("gradient check failed: {}", failed.join(", "))).into())
    }
}
