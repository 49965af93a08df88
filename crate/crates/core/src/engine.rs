//! The online sensing loop.
//!
//! Each step measures the probe under the true phase, scores every grid phase
//! with the estimator, emits the threshold set, charges the loss, and then
//! applies feedback in a fixed order: threshold, estimator weights, probe
//! angles. Benchmark modes switch individual feedback paths off.
//!
//! The probe gradient of the soft set size flows only through the shot
//! distribution, so it is estimated with the likelihood-ratio trick:
//! `(G - b) * sum_l grad log p_theta(s_l | x)` with `b` the running mean of `G`.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conformal::{
    build_set, coverage_loss, min_distance_loss, soft_set_size, LossKind, ScoreVector,
    StepSchedule, ThresholdState,
};
use crate::error::{Error, Result};
use crate::estimator::{pretrain, EstimatorDims, EstimatorModel, TrainConfig};
use crate::probe::{
    measurement_distribution, sample_shots, LogProbJacobian, MeasurementBasis, PhaseGrid,
    ProbeParams, ShotBatch, GRAD_STEP,
};

/// Seed offset between consecutive trials.
pub const TRIAL_SEED_STRIDE: u64 = 9973;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchmarkMode {
    Dynamic,
    Static,
    StaticThreshold,
    StaticProbeEstimator,
}

impl BenchmarkMode {
    pub const ALL: [BenchmarkMode; 4] = [
        BenchmarkMode::Dynamic,
        BenchmarkMode::Static,
        BenchmarkMode::StaticThreshold,
        BenchmarkMode::StaticProbeEstimator,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BenchmarkMode::Dynamic => "dynamic",
            BenchmarkMode::Static => "static",
            BenchmarkMode::StaticThreshold => "static-threshold",
            BenchmarkMode::StaticProbeEstimator => "static-probe-estimator",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode '{s}'")))
    }

    pub fn adapts_threshold(self) -> bool {
        matches!(
            self,
            BenchmarkMode::Dynamic | BenchmarkMode::StaticProbeEstimator
        )
    }

    pub fn adapts_parameters(self) -> bool {
        matches!(
            self,
            BenchmarkMode::Dynamic | BenchmarkMode::StaticThreshold
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisChoice {
    Hadamard,
    Computational,
}

impl BasisChoice {
    pub fn basis(self) -> MeasurementBasis {
        match self {
            BasisChoice::Hadamard => MeasurementBasis::hadamard(),
            BasisChoice::Computational => MeasurementBasis::computational(),
        }
    }
}

/// How the true phase index evolves over time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TargetProcess {
    /// I.i.d. uniform over the grid.
    Uniform,
    /// Sweeps up and down the grid one level every `period` steps from a
    /// random start.
    Drift { period: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub qubits: usize,
    pub layers: usize,
    pub levels: usize,
    pub shots: usize,
    pub horizon: usize,
    pub alpha: f64,
    pub tau: f64,
    pub eta_theta: f64,
    pub threshold_schedule: StepSchedule,
    /// Initial threshold; `None` means `ln(levels)`.
    pub lambda_init: Option<f64>,
    pub hidden: usize,
    pub train: TrainConfig,
    pub mode: BenchmarkMode,
    pub seed: u64,
    pub trials: usize,
    pub loss: LossKind,
    pub basis: BasisChoice,
    pub target: TargetProcess,
    pub pretrain_samples: usize,
    pub pretrain_epochs: usize,
    pub probe_pretrain_steps: usize,
    /// Uniform jitter around the Ramsey starting angles.
    pub probe_init_jitter: f64,
    /// Upper end of the fixed-threshold draw `U[0, static_lambda_max]`.
    pub static_lambda_max: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            qubits: 4,
            layers: 4,
            levels: 10,
            shots: 10,
            horizon: 200,
            alpha: 0.3,
            tau: 0.5,
            eta_theta: 1e-3,
            threshold_schedule: StepSchedule::Constant { eta: 0.5 },
            lambda_init: None,
            hidden: 64,
            train: TrainConfig::default(),
            mode: BenchmarkMode::Dynamic,
            seed: 0,
            trials: 5,
            loss: LossKind::Coverage,
            basis: BasisChoice::Hadamard,
            target: TargetProcess::Uniform,
            pretrain_samples: 20,
            pretrain_epochs: 200,
            probe_pretrain_steps: 100,
            probe_init_jitter: 0.1,
            static_lambda_max: 2.0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.qubits < 2 || self.qubits > crate::qsim::MAX_QUBITS {
            return fail(format!("qubits must lie in 2..=12, got {}", self.qubits));
        }
        if self.layers == 0 {
            return fail("layers must be >= 1".into());
        }
        if self.levels < 2 {
            return fail(format!("levels must be >= 2, got {}", self.levels));
        }
        if self.shots == 0 || self.horizon == 0 || self.trials == 0 || self.hidden == 0 {
            return fail("shots, horizon, trials and hidden size must be >= 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return fail(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return fail(format!("tau must be > 0, got {}", self.tau));
        }
        if !(self.eta_theta >= 0.0 && self.eta_theta.is_finite()) {
            return fail(format!(
                "probe learning rate must be >= 0, got {}",
                self.eta_theta
            ));
        }
        if self.pretrain_samples == 0 {
            return fail("pretraining needs at least one sample".into());
        }
        if let TargetProcess::Drift { period: 0 } = self.target {
            return fail("drift period must be >= 1".into());
        }
        if self.static_lambda_max.is_nan() || self.static_lambda_max <= 0.0 {
            return fail("static threshold range must be positive".into());
        }
        if let Some(l) = self.lambda_init {
            if !l.is_finite() {
                return fail("initial threshold must be finite".into());
            }
        }
        self.threshold_schedule.validate()?;
        self.train.validate()
    }

    pub fn initial_lambda(&self) -> f64 {
        self.lambda_init.unwrap_or((self.levels as f64).ln())
    }

    pub fn trial_seed(&self, trial: usize) -> u64 {
        self.seed.wrapping_add(trial as u64 * TRIAL_SEED_STRIDE)
    }

    pub fn estimator_dims(&self) -> EstimatorDims {
        EstimatorDims {
            input: 1 << self.qubits,
            hidden: self.hidden,
            output: self.levels,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StepFlags {
    /// Shots left out of the probe gradient for vanishing probability.
    pub skipped_shots: usize,
    pub probe_step_skipped: bool,
    pub estimator_step_skipped: bool,
    pub empty_set: bool,
}

/// Full trace of one time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    /// 1-based step index.
    pub t: usize,
    pub x_index: usize,
    pub shots: ShotBatch,
    /// Threshold used for this step's set (before the update).
    pub lambda: f64,
    pub scores: ScoreVector,
    pub set: Vec<bool>,
    pub set_size: usize,
    pub covered: bool,
    pub loss: f64,
    pub soft_size: f64,
    pub running_avg_loss: f64,
    pub running_coverage: f64,
    pub running_set_size: f64,
    pub flags: StepFlags,
}

/// Running arithmetic mean.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RunningMean {
    count: usize,
    sum: f64,
}

impl RunningMean {
    pub fn push(&mut self, v: f64) {
        self.count += 1;
        self.sum += v;
    }

    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }

    pub fn count(&self) -> usize {
        self.count
    }
}

/// Static inputs of the probe update.
#[derive(Debug, Clone)]
pub struct ProbeContext {
    pub qubits: usize,
    pub basis: MeasurementBasis,
    pub tau: f64,
    pub eta_theta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeStep {
    pub theta: ProbeParams,
    pub gradient: Vec<f64>,
    pub skipped_shots: usize,
    /// No shot contributed, so the angles were left alone.
    pub skipped: bool,
}

/// `(G - b) * sum_l grad log p_theta(s_l | x)` over the non-degenerate shots.
pub fn score_function_gradient(
    theta: &ProbeParams,
    ctx: &ProbeContext,
    x: f64,
    shots: &ShotBatch,
    advantage: f64,
) -> Result<(Vec<f64>, usize)> {
    let jac = LogProbJacobian::compute(theta, ctx.qubits, x, &ctx.basis, GRAD_STEP)?;
    let mut sum = vec![0.0; theta.len()];
    let mut skipped = 0;
    for &s in shots.outcomes() {
        match jac.grad(s) {
            Ok(g) => {
                for (a, b) in sum.iter_mut().zip(&g) {
                    *a += b;
                }
            }
            Err(Error::DegenerateGradient { .. }) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    let grad = if skipped == shots.len() {
        sum
    } else {
        sum.into_iter().map(|v| advantage * v).collect()
    };
    Ok((grad, skipped))
}

/// One online descent step of the probe angles on the soft set size.
pub fn probe_grad_step(
    theta: &ProbeParams,
    shots: &ShotBatch,
    scores: &ScoreVector,
    lambda: f64,
    x: f64,
    baseline: f64,
    ctx: &ProbeContext,
) -> Result<ProbeStep> {
    let g = soft_set_size(scores, lambda, ctx.tau)?;
    let advantage = g - baseline;
    let (gradient, skipped_shots) = score_function_gradient(theta, ctx, x, shots, advantage)?;
    let all_skipped = skipped_shots == shots.len();
    let mut next = theta.clone();
    if !all_skipped && ctx.eta_theta != 0.0 && advantage != 0.0 {
        next.descend(ctx.eta_theta, &gradient)?;
    }
    Ok(ProbeStep {
        theta: next,
        gradient,
        skipped_shots,
        skipped: all_skipped,
    })
}

/// Independent random streams of one trial.
#[derive(Debug, Clone)]
struct TrialRngs {
    init: ChaCha8Rng,
    pretrain: ChaCha8Rng,
    targets: ChaCha8Rng,
    shots: ChaCha8Rng,
    model: ChaCha8Rng,
    fixed_lambda: ChaCha8Rng,
}

impl TrialRngs {
    fn new(seed: u64) -> Self {
        let stream = |k: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(k);
            r
        };
        Self {
            init: stream(0),
            pretrain: stream(1),
            targets: stream(2),
            shots: stream(3),
            model: stream(4),
            fixed_lambda: stream(5),
        }
    }
}

/// Result of the offline initialization phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pretrained {
    pub theta_init: ProbeParams,
    pub theta: ProbeParams,
    pub model: EstimatorModel,
    pub dataset: Vec<(ShotBatch, usize)>,
    pub cross_entropy_before: f64,
    pub cross_entropy_after: f64,
    pub mean_soft_size_first: Option<f64>,
    pub mean_soft_size_last: Option<f64>,
}

fn pretrain_with(cfg: &RunConfig, rngs: &mut TrialRngs) -> Result<Pretrained> {
    cfg.validate()?;
    let grid = PhaseGrid::new(cfg.levels)?;
    let basis = cfg.basis.basis();
    let theta_init = ProbeParams::ramsey_init(cfg.layers, cfg.probe_init_jitter, &mut rngs.init);
    let mut model = EstimatorModel::init(cfg.estimator_dims(), &cfg.train, &mut rngs.init)?;

    let mut dataset = Vec::with_capacity(cfg.pretrain_samples);
    for _ in 0..cfg.pretrain_samples {
        let xi = rngs.init.gen_range(0..cfg.levels);
        let dist = measurement_distribution(&theta_init, cfg.qubits, grid.value(xi)?, &basis)?;
        dataset.push((sample_shots(&dist, cfg.shots, &mut rngs.init)?, xi));
    }

    let cross_entropy_before = model.mean_cross_entropy(&dataset)?;
    pretrain(
        &mut model,
        &dataset,
        &cfg.train,
        cfg.pretrain_epochs,
        &mut rngs.pretrain,
    )?;
    let cross_entropy_after = model.mean_cross_entropy(&dataset)?;

    let ctx = ProbeContext {
        qubits: cfg.qubits,
        basis: basis.clone(),
        tau: cfg.tau,
        eta_theta: cfg.eta_theta,
    };
    let lambda = cfg.initial_lambda();
    let mut theta = theta_init.clone();
    let mut baseline = RunningMean::default();
    let mut first = RunningMean::default();
    let mut last = RunningMean::default();
    let window = cfg.pretrain_samples.min(cfg.probe_pretrain_steps);
    for k in 0..cfg.probe_pretrain_steps {
        let xi = dataset[k % dataset.len()].1;
        let x = grid.value(xi)?;
        let dist = measurement_distribution(&theta, cfg.qubits, x, &basis)?;
        let shots = sample_shots(&dist, cfg.shots, &mut rngs.pretrain)?;
        let scores = model.posterior(&shots, &mut rngs.pretrain)?.scores();
        let g = soft_set_size(&scores, lambda, cfg.tau)?;
        let b = baseline.mean().unwrap_or(g);
        theta = probe_grad_step(&theta, &shots, &scores, lambda, x, b, &ctx)?.theta;
        baseline.push(g);
        if k < window {
            first.push(g);
        }
        if k + window >= cfg.probe_pretrain_steps {
            last.push(g);
        }
    }

    Ok(Pretrained {
        theta_init,
        theta,
        model,
        dataset,
        cross_entropy_before,
        cross_entropy_after,
        mean_soft_size_first: first.mean(),
        mean_soft_size_last: last.mean(),
    })
}

/// Initial probe angles and estimator for trial seed `seed`.
pub fn pretrain_run(cfg: &RunConfig, seed: u64) -> Result<Pretrained> {
    pretrain_with(cfg, &mut TrialRngs::new(seed))
}

/// Mutable state of one trial.
#[derive(Debug, Clone)]
pub struct TrialState {
    cfg: RunConfig,
    grid: PhaseGrid,
    ctx: ProbeContext,
    theta: ProbeParams,
    model: EstimatorModel,
    threshold: ThresholdState,
    baseline: RunningMean,
    losses: RunningMean,
    coverage: RunningMean,
    set_sizes: RunningMean,
    drift_start: usize,
    t: usize,
    rngs: TrialRngs,
    fixed_lambda: f64,
}

impl TrialState {
    /// Pretrains and sets up a trial from its seed.
    pub fn new(cfg: &RunConfig, seed: u64) -> Result<(Self, Pretrained)> {
        let mut rngs = TrialRngs::new(seed);
        let pre = pretrain_with(cfg, &mut rngs)?;
        let fixed_lambda = rngs.fixed_lambda.gen_range(0.0..cfg.static_lambda_max);
        let drift_start = rngs.targets.gen_range(0..cfg.levels);
        let lambda = if cfg.mode.adapts_threshold() {
            cfg.initial_lambda()
        } else {
            fixed_lambda
        };
        let threshold = ThresholdState::new(
            lambda,
            cfg.threshold_schedule,
            cfg.alpha,
            cfg.loss.max_loss(),
        )?;
        let state = Self {
            cfg: cfg.clone(),
            grid: PhaseGrid::new(cfg.levels)?,
            ctx: ProbeContext {
                qubits: cfg.qubits,
                basis: cfg.basis.basis(),
                tau: cfg.tau,
                eta_theta: cfg.eta_theta,
            },
            theta: pre.theta.clone(),
            model: pre.model.clone(),
            threshold,
            baseline: RunningMean::default(),
            losses: RunningMean::default(),
            coverage: RunningMean::default(),
            set_sizes: RunningMean::default(),
            drift_start,
            t: 0,
            rngs,
            fixed_lambda,
        };
        Ok((state, pre))
    }

    pub fn theta(&self) -> &ProbeParams {
        &self.theta
    }

    pub fn model(&self) -> &EstimatorModel {
        &self.model
    }

    pub fn threshold(&self) -> &ThresholdState {
        &self.threshold
    }

    pub fn lambda(&self) -> f64 {
        self.threshold.lambda()
    }

    /// Threshold drawn for the fixed-threshold benchmarks.
    pub fn fixed_lambda(&self) -> f64 {
        self.fixed_lambda
    }

    pub fn steps(&self) -> usize {
        self.t
    }

    /// Hash of `(theta, w, lambda)` bit patterns.
    pub fn fingerprint(&self) -> ParamFingerprint {
        let mut theta = DefaultHasher::new();
        self.theta
            .as_slice()
            .iter()
            .for_each(|v| v.to_bits().hash(&mut theta));
        let mut w = DefaultHasher::new();
        for m in self.model.members() {
            m.as_slice().iter().for_each(|v| v.to_bits().hash(&mut w));
        }
        ParamFingerprint {
            theta: theta.finish(),
            weights: w.finish(),
            lambda: self.threshold.lambda().to_bits(),
        }
    }

    /// Draws the next true phase index.
    pub fn next_target(&mut self) -> usize {
        match self.cfg.target {
            TargetProcess::Uniform => self.rngs.targets.gen_range(0..self.cfg.levels),
            TargetProcess::Drift { period } => {
                let m = self.cfg.levels;
                let cycle = 2 * (m - 1);
                let pos = (self.drift_start + self.t / period) % cycle;
                if pos < m {
                    pos
                } else {
                    cycle - pos
                }
            }
        }
    }

    /// One sensing step against the true phase `x_index`.
    pub fn sense_step(&mut self, x_index: usize) -> Result<EpisodeRecord> {
        let x = self.grid.value(x_index)?;
        let dist = measurement_distribution(&self.theta, self.cfg.qubits, x, &self.ctx.basis)?;
        let shots = sample_shots(&dist, self.cfg.shots, &mut self.rngs.shots)?;
        let scores = self.model.posterior(&shots, &mut self.rngs.model)?.scores();
        let lambda = self.threshold.lambda();
        let set = build_set(&scores, lambda);
        let loss = match self.cfg.loss {
            LossKind::Coverage => coverage_loss(x_index, &set),
            LossKind::MinDistance => min_distance_loss(x, &set, &self.grid),
        };
        let soft_size = soft_set_size(&scores, lambda, self.cfg.tau)?;
        let covered = set.contains(x_index);

        let mut flags = StepFlags {
            empty_set: set.is_empty(),
            ..StepFlags::default()
        };
        let online_t = self.t;

        if self.cfg.mode.adapts_threshold() {
            self.threshold.update(loss.value)?;
        }
        if self.cfg.mode.adapts_parameters() {
            let out = self.model.train(
                &shots,
                x_index,
                &self.cfg.train,
                online_t,
                &mut self.rngs.model,
            )?;
            flags.estimator_step_skipped = out.skipped;

            let b = self.baseline.mean().unwrap_or(soft_size);
            let step = probe_grad_step(&self.theta, &shots, &scores, lambda, x, b, &self.ctx)?;
            flags.skipped_shots = step.skipped_shots;
            flags.probe_step_skipped = step.skipped;
            self.theta = step.theta;
            self.baseline.push(soft_size);
        }

        self.t += 1;
        self.losses.push(loss.value);
        self.coverage.push(if covered { 1.0 } else { 0.0 });
        self.set_sizes.push(set.cardinality() as f64);

        Ok(EpisodeRecord {
            t: self.t,
            x_index,
            shots,
            lambda,
            set_size: set.cardinality(),
            set: set.mask().to_vec(),
            scores,
            covered,
            loss: loss.value,
            soft_size,
            running_avg_loss: self.losses.mean().unwrap_or(0.0),
            running_coverage: self.coverage.mean().unwrap_or(0.0),
            running_set_size: self.set_sizes.mean().unwrap_or(0.0),
            flags,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamFingerprint {
    pub theta: u64,
    pub weights: u64,
    pub lambda: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub fixed_lambda: f64,
    pub lambda_final: f64,
    pub theta_final: ProbeParams,
    pub pretrain_cross_entropy: f64,
    pub records: Vec<EpisodeRecord>,
}

impl TrialResult {
    pub fn mean_loss(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.running_avg_loss)
    }

    pub fn final_coverage(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.running_coverage)
    }

    pub fn final_set_size(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.running_set_size)
    }
}

/// Runs one trial end to end.
pub fn run_trial(cfg: &RunConfig, trial: usize) -> Result<TrialResult> {
    let seed = cfg.trial_seed(trial);
    let (mut state, pre) = TrialState::new(cfg, seed)?;
    let mut records = Vec::with_capacity(cfg.horizon);
    for _ in 0..cfg.horizon {
        let xi = state.next_target();
        records.push(state.sense_step(xi)?);
    }
    Ok(TrialResult {
        trial,
        seed,
        fixed_lambda: state.fixed_lambda,
        lambda_final: state.lambda(),
        theta_final: state.theta.clone(),
        pretrain_cross_entropy: pre.cross_entropy_after,
        records,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialFailure {
    pub trial: usize,
    pub error: Error,
}

/// Completed trials in index order, plus the first failure if any trial
/// errored (later trials are still reported when they completed).
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub trials: Vec<TrialResult>,
    pub failure: Option<TrialFailure>,
}

impl ExperimentOutcome {
    pub fn is_complete(&self) -> bool {
        self.failure.is_none()
    }

    pub fn into_result(self) -> Result<Vec<TrialResult>> {
        match self.failure {
            None => Ok(self.trials),
            Some(f) => Err(f.error),
        }
    }
}

/// Runs `cfg.trials` independent trials in parallel with derived seeds.
pub fn run_experiment(cfg: &RunConfig) -> ExperimentOutcome {
    if let Err(error) = cfg.validate() {
        return ExperimentOutcome {
            trials: Vec::new(),
            failure: Some(TrialFailure { trial: 0, error }),
        };
    }
    let results: Vec<Result<TrialResult>> = (0..cfg.trials)
        .into_par_iter()
        .map(|i| run_trial(cfg, i))
        .collect();
    let mut trials = Vec::new();
    let mut failure = None;
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(t) => trials.push(t),
            Err(error) if failure.is_none() => failure = Some(TrialFailure { trial: i, error }),
            Err(_) => {}
        }
    }
    ExperimentOutcome { trials, failure }
}

/// Cross-trial means at one time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub t: usize,
    pub mean_coverage: f64,
    pub mean_set_size: f64,
    pub mean_lambda: f64,
}

/// Cross-trial mean curves of time-averaged coverage, time-averaged set size,
/// and the threshold in use. Stops at the shortest trial.
pub fn aggregate(trials: &[TrialResult]) -> Vec<AggregateRow> {
    let Some(len) = trials.iter().map(|t| t.records.len()).min() else {
        return Vec::new();
    };
    let k = trials.len() as f64;
    (0..len)
        .map(|i| {
            let mean = |f: &dyn Fn(&EpisodeRecord) -> f64| {
                trials.iter().map(|t| f(&t.records[i])).sum::<f64>() / k
            };
            AggregateRow {
                t: i + 1,
                mean_coverage: mean(&|r| r.running_coverage),
                mean_set_size: mean(&|r| r.running_set_size),
                mean_lambda: mean(&|r| r.lambda),
            }
        })
        .collect()
}
