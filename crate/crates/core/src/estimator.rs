//! Sequential posterior estimator `p_w(x | shots)`.
//!
//! Shots are one-hot encoded and fed one at a time through two stacked GRU
//! layers; a linear head maps the last hidden state to logits over the phase
//! grid. Gradients are computed by backpropagation through time and checked
//! against central differences in the tests.
//!
//! Parameters live in one flat vector so that optimizers and gradient checks
//! can address every coordinate uniformly. Input and recurrent matrices are
//! stored transposed (`in_dim x 3H`, gate blocks `[z | r | n]`) so a one-hot
//! input selects a contiguous row.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conformal::ScoreVector;
use crate::error::{Error, Result};
use crate::probe::ShotBatch;

/// Probability floor applied before normalization and logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimatorDims {
    /// One-hot width, `2^n`.
    pub input: usize,
    pub hidden: usize,
    /// Number of grid phases `M`.
    pub output: usize,
}

#[derive(Debug, Clone, Copy)]
struct GruLayout {
    in_dim: usize,
    hidden: usize,
    w: usize,
    u: usize,
    b: usize,
}

impl GruLayout {
    fn at(offset: usize, in_dim: usize, hidden: usize) -> (Self, usize) {
        let g = 3 * hidden;
        let w = offset;
        let u = w + in_dim * g;
        let b = u + hidden * g;
        (
            Self {
                in_dim,
                hidden,
                w,
                u,
                b,
            },
            b + g,
        )
    }
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    l1: GruLayout,
    l2: GruLayout,
    head_w: usize,
    head_b: usize,
    total: usize,
}

impl Layout {
    fn new(d: EstimatorDims) -> Self {
        let (l1, next) = GruLayout::at(0, d.input, d.hidden);
        let (l2, next) = GruLayout::at(next, d.hidden, d.hidden);
        let head_w = next;
        let head_b = head_w + d.hidden * d.output;
        Self {
            l1,
            l2,
            head_w,
            head_b,
            total: head_b + d.output,
        }
    }
}

/// Flat weight vector of the two-layer GRU estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorParams {
    dims: EstimatorDims,
    data: Vec<f64>,
}

impl EstimatorParams {
    /// GRU weights and biases uniform in `[-1/sqrt(H), 1/sqrt(H)]`, head zero.
    pub fn init(dims: EstimatorDims, rng: &mut impl Rng) -> Result<Self> {
        validate_dims(dims)?;
        let layout = Layout::new(dims);
        let bound = 1.0 / (dims.hidden as f64).sqrt();
        let mut data = vec![0.0; layout.total];
        for v in &mut data[..layout.head_w] {
            *v = rng.gen_range(-bound..=bound);
        }
        Ok(Self { dims, data })
    }

    pub fn from_vec(dims: EstimatorDims, data: Vec<f64>) -> Result<Self> {
        validate_dims(dims)?;
        let expect = Layout::new(dims).total;
        if data.len() != expect {
            return Err(Error::Config(format!(
                "estimator weight count {} != {expect} for {dims:?}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("estimator weights must be finite".into()));
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> EstimatorDims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Number of weights for the given shape.
    pub fn count_for(dims: EstimatorDims) -> usize {
        Layout::new(dims).total
    }
}

fn validate_dims(d: EstimatorDims) -> Result<()> {
    if d.input == 0 || d.hidden == 0 || d.output < 2 {
        return Err(Error::Config(format!("invalid estimator shape {d:?}")));
    }
    Ok(())
}

/// Posterior over the phase grid, floored at [`PROB_FLOOR`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PosteriorVector(Vec<f64>);

impl PosteriorVector {
    /// Applies the floor (renormalizing only if it bites).
    pub fn from_probabilities(mut p: Vec<f64>) -> Self {
        if p.iter().any(|&v| v < PROB_FLOOR) {
            for v in &mut p {
                *v = v.max(PROB_FLOOR);
            }
            let total: f64 = p.iter().sum();
            for v in &mut p {
                *v /= total;
            }
        }
        Self(p)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `-log p(x_index)`.
    pub fn score(&self, x_index: usize) -> Result<f64> {
        self.0
            .get(x_index)
            .map(|p| -p.max(PROB_FLOOR).ln())
            .ok_or(Error::Index {
                index: x_index,
                limit: self.0.len(),
            })
    }

    pub fn scores(&self) -> ScoreVector {
        ScoreVector::new(self.0.iter().map(|p| -p.max(PROB_FLOOR).ln()).collect())
            .expect("floored probabilities give finite scores")
    }

    pub fn entropy(&self) -> f64 {
        -self.0.iter().map(|&p| p * p.ln()).sum::<f64>()
    }

    pub fn argmax(&self) -> usize {
        (0..self.0.len())
            .max_by(|&a, &b| self.0[a].total_cmp(&self.0[b]))
            .unwrap_or(0)
    }

    /// Element-wise mean of several posteriors.
    pub fn mean(parts: &[PosteriorVector]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Config("cannot average zero posteriors".into()))?;
        let mut acc = vec![0.0; first.len()];
        for p in parts {
            for (a, v) in acc.iter_mut().zip(&p.0) {
                *a += v;
            }
        }
        let k = parts.len() as f64;
        Ok(Self::from_probabilities(
            acc.into_iter().map(|v| v / k).collect(),
        ))
    }
}

/// Inverted-dropout masks for one forward pass: one per time step on the
/// first layer's output, and one on the final hidden state before the head.
#[derive(Debug, Clone)]
pub struct DropoutMasks {
    between: Vec<Vec<f64>>,
    head: Vec<f64>,
}

impl DropoutMasks {
    pub fn sample(rate: f64, hidden: usize, steps: usize, rng: &mut impl Rng) -> Self {
        let keep = 1.0 - rate;
        let mut draw = |_| {
            if rate <= 0.0 {
                1.0
            } else if rng.gen::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        };
        let between = (0..steps)
            .map(|_| (0..hidden).map(&mut draw).collect())
            .collect();
        let head = (0..hidden).map(&mut draw).collect();
        Self { between, head }
    }
}

struct StepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    rh: Vec<f64>,
}

fn sigmoid(v: f64) -> f64 {
    crate::conformal::sigmoid(v)
}

/// One GRU step. `x` may be sparse (one-hot or dropped units); zero entries
/// are skipped.
fn gru_step(w: &[f64], lay: &GruLayout, x: &[f64], h: &[f64]) -> StepCache {
    let hd = lay.hidden;
    let g = 3 * hd;
    let mut a = w[lay.b..lay.b + g].to_vec();
    for (j, &xj) in x.iter().enumerate() {
        if xj != 0.0 {
            let row = &w[lay.w + j * g..lay.w + (j + 1) * g];
            for (ai, ri) in a.iter_mut().zip(row) {
                *ai += xj * ri;
            }
        }
    }
    for (j, &hj) in h.iter().enumerate() {
        if hj != 0.0 {
            let row = &w[lay.u + j * g..lay.u + j * g + 2 * hd];
            for (ai, ri) in a[..2 * hd].iter_mut().zip(row) {
                *ai += hj * ri;
            }
        }
    }
    let z: Vec<f64> = a[..hd].iter().map(|&v| sigmoid(v)).collect();
    let r: Vec<f64> = a[hd..2 * hd].iter().map(|&v| sigmoid(v)).collect();
    let rh: Vec<f64> = r.iter().zip(h).map(|(ri, hi)| ri * hi).collect();
    let mut an = a[2 * hd..].to_vec();
    for (j, &v) in rh.iter().enumerate() {
        if v != 0.0 {
            let row = &w[lay.u + j * g + 2 * hd..lay.u + (j + 1) * g];
            for (ai, ri) in an.iter_mut().zip(row) {
                *ai += v * ri;
            }
        }
    }
    let n: Vec<f64> = an.iter().map(|v| v.tanh()).collect();
    StepCache {
        x: x.to_vec(),
        h_prev: h.to_vec(),
        z,
        r,
        n,
        rh,
    }
}

fn next_hidden(c: &StepCache) -> Vec<f64> {
    (0..c.z.len())
        .map(|i| (1.0 - c.z[i]) * c.n[i] + c.z[i] * c.h_prev[i])
        .collect()
}

/// Backward through one GRU step. Accumulates weight gradients into `grad`,
/// returns `(d h_prev, d x)`.
fn gru_step_backward(
    w: &[f64],
    grad: &mut [f64],
    lay: &GruLayout,
    c: &StepCache,
    dh_next: &[f64],
    want_dx: bool,
) -> (Vec<f64>, Vec<f64>) {
    let hd = lay.hidden;
    let g = 3 * hd;
    let mut da = vec![0.0; g];
    let mut dh_prev = vec![0.0; hd];
    for i in 0..hd {
        let d = dh_next[i];
        let dz = d * (c.h_prev[i] - c.n[i]);
        da[i] = dz * c.z[i] * (1.0 - c.z[i]);
        let dn = d * (1.0 - c.z[i]);
        da[2 * hd + i] = dn * (1.0 - c.n[i] * c.n[i]);
        dh_prev[i] = d * c.z[i];
    }
    // candidate path through r * h
    let mut drh = vec![0.0; hd];
    for j in 0..hd {
        let row = &w[lay.u + j * g + 2 * hd..lay.u + (j + 1) * g];
        let dn_block = &da[2 * hd..];
        drh[j] = row.iter().zip(dn_block).map(|(a, b)| a * b).sum();
        if c.rh[j] != 0.0 {
            let grow = &mut grad[lay.u + j * g + 2 * hd..lay.u + (j + 1) * g];
            for (gi, di) in grow.iter_mut().zip(dn_block) {
                *gi += c.rh[j] * di;
            }
        }
    }
    for i in 0..hd {
        let dr = drh[i] * c.h_prev[i];
        da[hd + i] = dr * c.r[i] * (1.0 - c.r[i]);
        dh_prev[i] += drh[i] * c.r[i];
    }
    // z/r recurrent path
    for j in 0..hd {
        let row = &w[lay.u + j * g..lay.u + j * g + 2 * hd];
        dh_prev[j] += row
            .iter()
            .zip(&da[..2 * hd])
            .map(|(a, b)| a * b)
            .sum::<f64>();
        if c.h_prev[j] != 0.0 {
            let grow = &mut grad[lay.u + j * g..lay.u + j * g + 2 * hd];
            for (gi, di) in grow.iter_mut().zip(&da[..2 * hd]) {
                *gi += c.h_prev[j] * di;
            }
        }
    }
    for (gb, d) in grad[lay.b..lay.b + g].iter_mut().zip(&da) {
        *gb += d;
    }
    let mut dx = if want_dx {
        vec![0.0; lay.in_dim]
    } else {
        Vec::new()
    };
    for (j, &xj) in c.x.iter().enumerate() {
        let row = &w[lay.w + j * g..lay.w + (j + 1) * g];
        if want_dx {
            dx[j] = row.iter().zip(&da).map(|(a, b)| a * b).sum();
        }
        if xj != 0.0 {
            let grow = &mut grad[lay.w + j * g..lay.w + (j + 1) * g];
            for (gi, di) in grow.iter_mut().zip(&da) {
                *gi += xj * di;
            }
        }
    }
    (dh_prev, dx)
}

struct ForwardTrace {
    l1: Vec<StepCache>,
    l2: Vec<StepCache>,
    h_top: Vec<f64>,
    logits: Vec<f64>,
}

fn run_forward(
    params: &EstimatorParams,
    shots: &ShotBatch,
    masks: Option<&DropoutMasks>,
) -> Result<ForwardTrace> {
    let d = params.dims;
    let lay = Layout::new(d);
    let w = &params.data;
    if shots.is_empty() {
        return Err(Error::Config("estimator needs at least one shot".into()));
    }
    if let Some(&bad) = shots.outcomes().iter().find(|&&s| s >= d.input) {
        return Err(Error::Config(format!(
            "shot outcome {bad} exceeds estimator input width {}",
            d.input
        )));
    }
    let mut h1 = vec![0.0; d.hidden];
    let mut h2 = vec![0.0; d.hidden];
    let mut l1 = Vec::with_capacity(shots.len());
    let mut l2 = Vec::with_capacity(shots.len());
    for (t, &s) in shots.outcomes().iter().enumerate() {
        let mut x = vec![0.0; d.input];
        x[s] = 1.0;
        let c1 = gru_step(w, &lay.l1, &x, &h1);
        h1 = next_hidden(&c1);
        let x2: Vec<f64> = match masks {
            Some(m) => h1.iter().zip(&m.between[t]).map(|(a, b)| a * b).collect(),
            None => h1.clone(),
        };
        let c2 = gru_step(w, &lay.l2, &x2, &h2);
        h2 = next_hidden(&c2);
        l1.push(c1);
        l2.push(c2);
    }
    let h_top: Vec<f64> = match masks {
        Some(m) => h2.iter().zip(&m.head).map(|(a, b)| a * b).collect(),
        None => h2,
    };
    let mut logits = w[lay.head_b..lay.head_b + d.output].to_vec();
    for (j, &hj) in h_top.iter().enumerate() {
        if hj != 0.0 {
            let row = &w[lay.head_w + j * d.output..lay.head_w + (j + 1) * d.output];
            for (li, ri) in logits.iter_mut().zip(row) {
                *li += hj * ri;
            }
        }
    }
    Ok(ForwardTrace {
        l1,
        l2,
        h_top,
        logits,
    })
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Deterministic posterior.
pub fn forward(params: &EstimatorParams, shots: &ShotBatch) -> Result<PosteriorVector> {
    forward_masked(params, shots, None)
}

pub fn forward_masked(
    params: &EstimatorParams,
    shots: &ShotBatch,
    masks: Option<&DropoutMasks>,
) -> Result<PosteriorVector> {
    let trace = run_forward(params, shots, masks)?;
    Ok(PosteriorVector::from_probabilities(softmax(&trace.logits)))
}

/// `-log p_w(x_index | shots)`.
pub fn score(params: &EstimatorParams, shots: &ShotBatch, x_index: usize) -> Result<f64> {
    forward(params, shots)?.score(x_index)
}

/// Cross-entropy of `label` plus `0.5 * l2 * |w|^2`, and its gradient.
pub fn loss_and_grad(
    params: &EstimatorParams,
    shots: &ShotBatch,
    label: usize,
    l2: f64,
    masks: Option<&DropoutMasks>,
) -> Result<(f64, Vec<f64>)> {
    let d = params.dims;
    if label >= d.output {
        return Err(Error::Index {
            index: label,
            limit: d.output,
        });
    }
    let lay = Layout::new(d);
    let w = &params.data;
    let trace = run_forward(params, shots, masks)?;

    let max = trace
        .logits
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let log_z = max
        + trace
            .logits
            .iter()
            .map(|&l| (l - max).exp())
            .sum::<f64>()
            .ln();
    let mut loss = log_z - trace.logits[label];
    let mut grad = vec![0.0; w.len()];

    let mut dlogits: Vec<f64> = trace.logits.iter().map(|&l| (l - log_z).exp()).collect();
    dlogits[label] -= 1.0;

    for (gb, dl) in grad[lay.head_b..lay.head_b + d.output]
        .iter_mut()
        .zip(&dlogits)
    {
        *gb += dl;
    }
    let mut dh2 = vec![0.0; d.hidden];
    for j in 0..d.hidden {
        let row = &w[lay.head_w + j * d.output..lay.head_w + (j + 1) * d.output];
        dh2[j] = row.iter().zip(&dlogits).map(|(a, b)| a * b).sum();
        if trace.h_top[j] != 0.0 {
            let grow = &mut grad[lay.head_w + j * d.output..lay.head_w + (j + 1) * d.output];
            for (gi, dl) in grow.iter_mut().zip(&dlogits) {
                *gi += trace.h_top[j] * dl;
            }
        }
    }
    if let Some(m) = masks {
        for (v, k) in dh2.iter_mut().zip(&m.head) {
            *v *= k;
        }
    }

    // layer 2 gives d(input) per step, which feeds layer 1's hidden chain
    let steps = trace.l2.len();
    let mut dx2_per_step = vec![Vec::new(); steps];
    for t in (0..steps).rev() {
        let (dh_prev, dx) = gru_step_backward(w, &mut grad, &lay.l2, &trace.l2[t], &dh2, true);
        dh2 = dh_prev;
        dx2_per_step[t] = dx;
    }
    let mut dh1 = vec![0.0; d.hidden];
    for t in (0..steps).rev() {
        let mut from_above = std::mem::take(&mut dx2_per_step[t]);
        if let Some(m) = masks {
            for (v, k) in from_above.iter_mut().zip(&m.between[t]) {
                *v *= k;
            }
        }
        for (a, b) in dh1.iter_mut().zip(&from_above) {
            *a += b;
        }
        let (dh_prev, _) = gru_step_backward(w, &mut grad, &lay.l1, &trace.l1[t], &dh1, false);
        dh1 = dh_prev;
    }

    if l2 > 0.0 {
        loss += 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>();
        for (g, v) in grad.iter_mut().zip(w) {
            *g += l2 * v;
        }
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub l2: f64,
    /// Learning rate is multiplied by `decay` every `decay_every` online steps.
    pub decay: f64,
    pub decay_every: usize,
    pub dropout: f64,
    pub ensemble: usize,
    /// Stochastic forward passes averaged per posterior when dropout is on.
    pub passes: usize,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            l2: 1e-4,
            decay: 0.1,
            decay_every: 50,
            dropout: 0.0,
            ensemble: 1,
            passes: 10,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.l2.is_nan() || self.l2 < 0.0 {
            return Err(Error::Config("L2 coefficient must be >= 0".into()));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Config(format!(
                "decay must lie in (0, 1], got {}",
                self.decay
            )));
        }
        if self.decay_every == 0 {
            return Err(Error::Config("decay interval must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.ensemble == 0 {
            return Err(Error::Config("ensemble size must be >= 1".into()));
        }
        if self.passes == 0 {
            return Err(Error::Config("dropout passes must be >= 1".into()));
        }
        Ok(())
    }

    /// Learning rate at online step `t` (0-based).
    pub fn rate_at(&self, t: usize) -> f64 {
        self.learning_rate * self.decay.powi((t / self.decay_every) as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    steps: u64,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            steps: 0,
        }
    }

    fn step(&mut self, w: &mut [f64], grad: &[f64], lr: f64) {
        self.steps += 1;
        let c1 = 1.0 - Self::B1.powi(self.steps as i32);
        let c2 = 1.0 - Self::B2.powi(self.steps as i32);
        for i in 0..w.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            w[i] -= lr * mh / (vh.sqrt() + Self::EPS);
        }
    }
}

/// Estimator weights plus optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainableEstimator {
    params: EstimatorParams,
    adam: Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TrainOutcome {
    /// Gradient was non-finite and the step was skipped.
    pub skipped: bool,
}

impl TrainableEstimator {
    pub fn new(params: EstimatorParams) -> Self {
        let adam = Adam::new(params.len());
        Self { params, adam }
    }

    pub fn params(&self) -> &EstimatorParams {
        &self.params
    }

    pub fn into_params(self) -> EstimatorParams {
        self.params
    }

    /// One gradient step on the cross-entropy of `label` at online step `t`.
    pub fn train_step(
        &mut self,
        shots: &ShotBatch,
        label: usize,
        cfg: &TrainConfig,
        t: usize,
        masks: Option<&DropoutMasks>,
    ) -> Result<TrainOutcome> {
        let lr = cfg.rate_at(t);
        if lr == 0.0 {
            return Ok(TrainOutcome::default());
        }
        let (loss, grad) = loss_and_grad(&self.params, shots, label, cfg.l2, masks)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Ok(TrainOutcome { skipped: true });
        }
        let mut next = self.params.data.clone();
        match cfg.optimizer {
            OptimizerKind::Sgd => {
                for (w, g) in next.iter_mut().zip(&grad) {
                    *w -= lr * g;
                }
            }
            OptimizerKind::Adam => {
                let mut adam = self.adam.clone();
                adam.step(&mut next, &grad, lr);
                if next.iter().any(|v| !v.is_finite()) {
                    return Ok(TrainOutcome { skipped: true });
                }
                self.adam = adam;
            }
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Ok(TrainOutcome { skipped: true });
        }
        self.params.data = next;
        Ok(TrainOutcome::default())
    }
}

/// Functional single step with a fresh optimizer state (plain SGD when the
/// config says so; Adam's first step otherwise).
pub fn train_step(
    params: &EstimatorParams,
    shots: &ShotBatch,
    label: usize,
    cfg: &TrainConfig,
    t: usize,
) -> Result<(EstimatorParams, TrainOutcome)> {
    let mut est = TrainableEstimator::new(params.clone());
    let outcome = est.train_step(shots, label, cfg, t, None)?;
    Ok((est.params, outcome))
}

/// Point, ensemble, or Monte Carlo dropout estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EstimatorModel {
    Point {
        member: TrainableEstimator,
    },
    Ensemble {
        members: Vec<TrainableEstimator>,
    },
    Dropout {
        member: TrainableEstimator,
        rate: f64,
        passes: usize,
    },
}

impl EstimatorModel {
    /// Builds the variant selected by `cfg`: dropout wins over ensembling when
    /// both are requested; `ensemble == 1` without dropout is a point model.
    pub fn init(dims: EstimatorDims, cfg: &TrainConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        if cfg.dropout > 0.0 {
            return Ok(Self::Dropout {
                member: TrainableEstimator::new(EstimatorParams::init(dims, rng)?),
                rate: cfg.dropout,
                passes: cfg.passes,
            });
        }
        if cfg.ensemble > 1 {
            let members = (0..cfg.ensemble)
                .map(|_| EstimatorParams::init(dims, rng).map(TrainableEstimator::new))
                .collect::<Result<Vec<_>>>()?;
            return Ok(Self::Ensemble { members });
        }
        Ok(Self::Point {
            member: TrainableEstimator::new(EstimatorParams::init(dims, rng)?),
        })
    }

    pub fn members(&self) -> Vec<&EstimatorParams> {
        match self {
            Self::Point { member } | Self::Dropout { member, .. } => vec![member.params()],
            Self::Ensemble { members } => members.iter().map(|m| m.params()).collect(),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::Point { .. } => "point",
            Self::Ensemble { .. } => "ensemble",
            Self::Dropout { .. } => "dropout",
        }
    }

    /// Posterior used for scoring. Stochastic only for the dropout variant.
    pub fn posterior(&self, shots: &ShotBatch, rng: &mut impl Rng) -> Result<PosteriorVector> {
        match self {
            Self::Point { member } => forward(member.params(), shots),
            Self::Ensemble { members } => {
                let ws: Vec<&EstimatorParams> = members.iter().map(|m| m.params()).collect();
                forward_bayesian(&BayesianInput::Ensemble(&ws), shots, rng)
            }
            Self::Dropout {
                member,
                rate,
                passes,
            } => forward_bayesian(
                &BayesianInput::Dropout {
                    params: member.params(),
                    rate: *rate,
                    passes: *passes,
                },
                shots,
                rng,
            ),
        }
    }

    /// One online update of every member.
    pub fn train(
        &mut self,
        shots: &ShotBatch,
        label: usize,
        cfg: &TrainConfig,
        t: usize,
        rng: &mut impl Rng,
    ) -> Result<TrainOutcome> {
        let mut out = TrainOutcome::default();
        match self {
            Self::Point { member } => out = member.train_step(shots, label, cfg, t, None)?,
            Self::Ensemble { members } => {
                for m in members {
                    out.skipped |= m.train_step(shots, label, cfg, t, None)?.skipped;
                }
            }
            Self::Dropout { member, rate, .. } => {
                let hidden = member.params().dims().hidden;
                let masks = DropoutMasks::sample(*rate, hidden, shots.len(), rng);
                out = member.train_step(shots, label, cfg, t, Some(&masks))?;
            }
        }
        Ok(out)
    }

    /// Mean cross-entropy of the deterministic members over `data`.
    pub fn mean_cross_entropy(&self, data: &[(ShotBatch, usize)]) -> Result<f64> {
        let mut total = 0.0;
        for (shots, label) in data {
            let ws = self.members();
            let parts = ws
                .iter()
                .map(|w| forward(w, shots))
                .collect::<Result<Vec<_>>>()?;
            total += PosteriorVector::mean(&parts)?.score(*label)?;
        }
        Ok(total / data.len().max(1) as f64)
    }
}

/// Inputs to [`forward_bayesian`].
pub enum BayesianInput<'a> {
    Ensemble(&'a [&'a EstimatorParams]),
    Dropout {
        params: &'a EstimatorParams,
        rate: f64,
        passes: usize,
    },
}

/// Mean posterior over ensemble members or stochastic dropout passes.
pub fn forward_bayesian(
    input: &BayesianInput<'_>,
    shots: &ShotBatch,
    rng: &mut impl Rng,
) -> Result<PosteriorVector> {
    match input {
        BayesianInput::Ensemble(ws) => {
            if ws.is_empty() {
                return Err(Error::Config("ensemble has no members".into()));
            }
            let parts = ws
                .iter()
                .map(|w| forward(w, shots))
                .collect::<Result<Vec<_>>>()?;
            PosteriorVector::mean(&parts)
        }
        BayesianInput::Dropout {
            params,
            rate,
            passes,
        } => {
            if *passes == 0 {
                return Err(Error::Config("dropout needs at least one pass".into()));
            }
            if !(0.0..1.0).contains(rate) {
                return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
            }
            let hidden = params.dims().hidden;
            let parts = (0..*passes)
                .map(|_| {
                    let masks = DropoutMasks::sample(*rate, hidden, shots.len(), rng);
                    forward_masked(params, shots, Some(&masks))
                })
                .collect::<Result<Vec<_>>>()?;
            PosteriorVector::mean(&parts)
        }
    }
}

/// Offline sweeps over `dataset` in order. Online decay does not apply here.
pub fn pretrain(
    model: &mut EstimatorModel,
    dataset: &[(ShotBatch, usize)],
    cfg: &TrainConfig,
    epochs: usize,
    rng: &mut impl Rng,
) -> Result<usize> {
    if dataset.is_empty() {
        return Err(Error::Config("pretraining dataset is empty".into()));
    }
    let mut skipped = 0;
    for _ in 0..epochs {
        for (shots, label) in dataset {
            if model.train(shots, *label, cfg, 0, rng)?.skipped {
                skipped += 1;
            }
        }
    }
    Ok(skipped)
}
