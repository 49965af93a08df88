//! Sensing front end: the variational probe circuit, the local phase channel,
//! the fixed measurement, shot sampling, and log-likelihood gradients with
//! respect to the probe angles.
//!
//! Each ansatz layer applies the same `Rz(a) Ry(b) Rz(c)` rotation to every
//! qubit, then the same `exp(-i phi ZZ / 2)` coupling around the ring
//! `(0,1), (1,2), ..., (n-1,0)`. Shared angles make the prepared state
//! invariant under cyclic relabelling of the qubits.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qsim::{gates, outcome_probabilities, GateOp, Mat2, StateVector};

/// Angles per ansatz layer: three single-qubit Euler angles and one coupling.
pub const ANGLES_PER_LAYER: usize = 4;

/// Probabilities at or below this are treated as zero for log-gradients.
pub const MIN_SHOT_PROBABILITY: f64 = 1e-12;

/// Finite-difference step for `log_prob_grad_theta`.
pub const GRAD_STEP: f64 = 1e-5;

/// Variational probe angles, `[a, b, c, phi]` per layer, flattened.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeParams {
    layers: usize,
    values: Vec<f64>,
}

impl ProbeParams {
    pub fn zeros(layers: usize) -> Self {
        Self {
            layers,
            values: vec![0.0; layers * ANGLES_PER_LAYER],
        }
    }

    pub fn from_vec(layers: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != layers * ANGLES_PER_LAYER {
            return Err(Error::Config(format!(
                "probe parameter length {} != {} x {layers}",
                values.len(),
                ANGLES_PER_LAYER
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("probe angle {i} is not finite")));
        }
        Ok(Self { layers, values })
    }

    /// Ramsey-style start: the first layer rotates every qubit to `|+>`, the
    /// rest are identity, and every angle is jittered uniformly by `+-jitter`.
    pub fn ramsey_init(layers: usize, jitter: f64, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(layers);
        if layers > 0 {
            p.values[1] = FRAC_PI_2;
        }
        if jitter > 0.0 {
            for v in &mut p.values {
                *v += rng.gen_range(-jitter..=jitter);
            }
        }
        p
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn layer(&self, l: usize) -> [f64; ANGLES_PER_LAYER] {
        let s = &self.values[l * ANGLES_PER_LAYER..(l + 1) * ANGLES_PER_LAYER];
        [s[0], s[1], s[2], s[3]]
    }

    /// `self -= step * grad`; non-finite results are rejected and leave `self` untouched.
    pub fn descend(&mut self, step: f64, grad: &[f64]) -> Result<()> {
        assert_eq!(grad.len(), self.values.len());
        let next: Vec<f64> = self
            .values
            .iter()
            .zip(grad)
            .map(|(v, g)| v - step * g)
            .collect();
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(
                "probe update produced a non-finite angle".into(),
            ));
        }
        self.values = next;
        Ok(())
    }

    fn with_offset(&self, k: usize, delta: f64) -> Self {
        let mut p = self.clone();
        p.values[k] += delta;
        p
    }
}

/// `M` equally spaced candidate phases covering `[0, pi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseGrid {
    values: Vec<f64>,
}

impl PhaseGrid {
    pub fn new(levels: usize) -> Result<Self> {
        if levels < 2 {
            return Err(Error::Config(format!(
                "phase grid needs >= 2 levels, got {levels}"
            )));
        }
        let step = PI / (levels - 1) as f64;
        let mut values: Vec<f64> = (0..levels).map(|i| i as f64 * step).collect();
        values[levels - 1] = PI;
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, index: usize) -> Result<f64> {
        self.values.get(index).copied().ok_or(Error::Index {
            index,
            limit: self.values.len(),
        })
    }

    pub fn spacing(&self) -> f64 {
        PI / (self.values.len() - 1) as f64
    }
}

/// Fixed local measurement: `unitary` is applied to every qubit before
/// computational-basis readout.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementBasis {
    unitary: Mat2,
}

impl MeasurementBasis {
    pub fn new(unitary: Mat2) -> Result<Self> {
        GateOp::single(0, unitary)?;
        Ok(Self { unitary })
    }

    /// X-basis readout; makes the `Rz` phase observable.
    pub fn hadamard() -> Self {
        Self {
            unitary: gates::hadamard(),
        }
    }

    /// Plain computational-basis readout.
    pub fn computational() -> Self {
        Self {
            unitary: gates::identity(),
        }
    }

    pub fn unitary(&self) -> &Mat2 {
        &self.unitary
    }
}

/// `L` measurement outcomes from one time step.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ShotBatch {
    outcomes: Vec<usize>,
}

impl ShotBatch {
    pub fn new(outcomes: Vec<usize>, num_outcomes: usize) -> Result<Self> {
        if let Some(&bad) = outcomes.iter().find(|&&s| s >= num_outcomes) {
            return Err(Error::Index {
                index: bad,
                limit: num_outcomes,
            });
        }
        Ok(Self { outcomes })
    }

    pub fn outcomes(&self) -> &[usize] {
        &self.outcomes
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }
}

/// Ring edges used by the coupling layer. Two qubits share a single edge.
fn ring_pairs(n: usize) -> Vec<(usize, usize)> {
    match n {
        0 | 1 => Vec::new(),
        2 => vec![(0, 1)],
        _ => (0..n).map(|q| (q, (q + 1) % n)).collect(),
    }
}

/// Prepares the probe state for angles `theta` on `n >= 2` qubits.
pub fn prepare_probe(theta: &ProbeParams, n: usize) -> Result<StateVector> {
    if n < 2 {
        return Err(Error::Config(format!(
            "the ring ansatz needs at least 2 qubits, got {n}"
        )));
    }
    let mut state = StateVector::zero(n)?;
    let pairs = ring_pairs(n);
    for l in 0..theta.layers() {
        let [a, b, c, phi] = theta.layer(l);
        let u = gates::euler_zyz(a, b, c);
        for q in 0..n {
            state.apply_single(q, &u);
        }
        if phi != 0.0 {
            let zz = gates::zz(phi);
            for &(q0, q1) in &pairs {
                state.apply_two(q0, q1, &zz);
            }
        }
    }
    Ok(state)
}

/// Applies `Rz(x)` with convention `diag(1, e^{ix})` to every qubit:
/// amplitude `s` picks up `e^{i x popcount(s)}`.
pub fn apply_phase_channel(mut state: StateVector, x: f64) -> StateVector {
    if x != 0.0 {
        state.apply_diagonal_phase(|s| x * s.count_ones() as f64);
    }
    state
}

fn readout(mut state: StateVector, basis: &MeasurementBasis) -> Vec<f64> {
    for q in 0..state.num_qubits() {
        state.apply_single(q, basis.unitary());
    }
    outcome_probabilities(&state)
}

/// `p_theta(s | x)` over all `2^n` outcomes.
pub fn measurement_distribution(
    theta: &ProbeParams,
    n: usize,
    x: f64,
    basis: &MeasurementBasis,
) -> Result<Vec<f64>> {
    let probe = prepare_probe(theta, n)?;
    Ok(readout(apply_phase_channel(probe, x), basis))
}

/// Draws `shots` i.i.d. outcomes from `dist` by inverse CDF.
pub fn sample_shots(dist: &[f64], shots: usize, rng: &mut impl Rng) -> Result<ShotBatch> {
    validate_distribution(dist)?;
    if shots == 0 {
        return Err(Error::Config("shot count must be >= 1".into()));
    }
    let mut cdf = Vec::with_capacity(dist.len());
    let mut acc = 0.0;
    for &p in dist {
        acc += p;
        cdf.push(acc);
    }
    let last_support = dist.iter().rposition(|&p| p > 0.0).unwrap_or(0);
    let outcomes = (0..shots)
        .map(|_| {
            let u: f64 = rng.gen::<f64>() * acc;
            cdf.iter()
                .position(|&c| u < c)
                .unwrap_or(last_support)
                .min(last_support)
        })
        .collect();
    Ok(ShotBatch { outcomes })
}

fn validate_distribution(dist: &[f64]) -> Result<()> {
    if dist.is_empty() {
        return Err(Error::Validation("empty distribution".into()));
    }
    if let Some(i) = dist.iter().position(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::Validation(format!(
            "distribution entry {i} = {} is not a probability",
            dist[i]
        )));
    }
    let total: f64 = dist.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Validation(format!("distribution sums to {total}")));
    }
    Ok(())
}

/// Per-coordinate finite-difference derivatives of `log p_theta(s | x)` for
/// every outcome `s`, together with `p_theta(. | x)` itself.
#[derive(Debug, Clone)]
pub struct LogProbJacobian {
    pub probabilities: Vec<f64>,
    /// `grads[k][s]` = d log p(s) / d theta_k, `NaN` where `p(s)` is degenerate.
    grads: Vec<Vec<f64>>,
}

impl LogProbJacobian {
    pub fn compute(
        theta: &ProbeParams,
        n: usize,
        x: f64,
        basis: &MeasurementBasis,
        step: f64,
    ) -> Result<Self> {
        let probabilities = measurement_distribution(theta, n, x, basis)?;
        let mut grads = Vec::with_capacity(theta.len());
        for k in 0..theta.len() {
            let plus = measurement_distribution(&theta.with_offset(k, step), n, x, basis)?;
            let minus = measurement_distribution(&theta.with_offset(k, -step), n, x, basis)?;
            let row = (0..probabilities.len())
                .map(|s| {
                    if probabilities[s] <= MIN_SHOT_PROBABILITY || plus[s] <= 0.0 || minus[s] <= 0.0
                    {
                        f64::NAN
                    } else {
                        (plus[s].ln() - minus[s].ln()) / (2.0 * step)
                    }
                })
                .collect();
            grads.push(row);
        }
        Ok(Self {
            probabilities,
            grads,
        })
    }

    /// Gradient of `log p(outcome | x)`.
    pub fn grad(&self, outcome: usize) -> Result<Vec<f64>> {
        let p = *self.probabilities.get(outcome).ok_or(Error::Index {
            index: outcome,
            limit: self.probabilities.len(),
        })?;
        let g: Vec<f64> = self.grads.iter().map(|row| row[outcome]).collect();
        if p <= MIN_SHOT_PROBABILITY || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateGradient {
                outcome,
                probability: p,
            });
        }
        Ok(g)
    }
}

/// `d/d theta log p_theta(outcome | x)` by central differences with step
/// [`GRAD_STEP`] on exact probabilities.
pub fn log_prob_grad_theta(
    theta: &ProbeParams,
    n: usize,
    x: f64,
    basis: &MeasurementBasis,
    outcome: usize,
) -> Result<Vec<f64>> {
    log_prob_grad_theta_with_step(theta, n, x, basis, outcome, GRAD_STEP)
}

pub fn log_prob_grad_theta_with_step(
    theta: &ProbeParams,
    n: usize,
    x: f64,
    basis: &MeasurementBasis,
    outcome: usize,
    step: f64,
) -> Result<Vec<f64>> {
    LogProbJacobian::compute(theta, n, x, basis, step)?.grad(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_theta(layers: usize, r: &mut ChaCha8Rng) -> ProbeParams {
        let v = (0..layers * ANGLES_PER_LAYER)
            .map(|_| r.gen_range(-PI..PI))
            .collect();
        ProbeParams::from_vec(layers, v).unwrap()
    }

    #[test]
    fn zero_angles_give_zero_state() {
        for n in 2..=4 {
            let s = prepare_probe(&ProbeParams::zeros(4), n).unwrap();
            assert_eq!(s, StateVector::zero(n).unwrap());
        }
    }

    #[test]
    fn single_layer_ry_half_pi_is_plus_plus() {
        let theta = ProbeParams::from_vec(1, vec![0.0, FRAC_PI_2, 0.0, 0.0]).unwrap();
        let s = prepare_probe(&theta, 2).unwrap();
        for a in s.amplitudes() {
            assert!((a - Complex64::new(0.5, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn prepare_rejects_single_qubit() {
        assert!(matches!(
            prepare_probe(&ProbeParams::zeros(1), 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn params_length_checked() {
        assert!(ProbeParams::from_vec(2, vec![0.0; 7]).is_err());
        assert!(ProbeParams::from_vec(1, vec![0.0, f64::NAN, 0.0, 0.0]).is_err());
    }

    #[test]
    fn phase_channel_zero_is_identity() {
        let theta = random_theta(2, &mut rng(1));
        let s = prepare_probe(&theta, 3).unwrap();
        assert_eq!(apply_phase_channel(s.clone(), 0.0), s);
    }

    #[test]
    fn phase_channel_on_basis_state() {
        let x = 0.83;
        let mut amps = vec![Complex64::new(0.0, 0.0); 8];
        amps[0b101] = Complex64::new(1.0, 0.0);
        let s = apply_phase_channel(StateVector::from_amplitudes(amps).unwrap(), x);
        let a = s.amplitudes()[0b101];
        assert!((a - Complex64::from_polar(1.0, 2.0 * x)).norm() < 1e-15);
        assert!((a.norm_sqr() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn single_qubit_interference() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let plus =
            StateVector::from_amplitudes(vec![Complex64::new(h, 0.0), Complex64::new(h, 0.0)])
                .unwrap();
        let p = readout(
            apply_phase_channel(plus, FRAC_PI_2),
            &MeasurementBasis::hadamard(),
        );
        assert!((p[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn grid_layout() {
        let g = PhaseGrid::new(10).unwrap();
        assert_eq!(g.values()[0], 0.0);
        assert_eq!(g.values()[9], PI);
        for w in g.values().windows(2) {
            assert!((w[1] - w[0] - PI / 9.0).abs() < 1e-15);
        }
        assert!(PhaseGrid::new(1).is_err());
        assert!(g.value(10).is_err());
    }

    #[test]
    fn computational_basis_is_phase_blind() {
        let theta = random_theta(3, &mut rng(5));
        let basis = MeasurementBasis::computational();
        let reference = measurement_distribution(&theta, 3, 0.0, &basis).unwrap();
        for x in PhaseGrid::new(10).unwrap().values() {
            let p = measurement_distribution(&theta, 3, *x, &basis).unwrap();
            for (a, b) in p.iter().zip(&reference) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn distribution_is_deterministic() {
        let theta = random_theta(4, &mut rng(9));
        let basis = MeasurementBasis::hadamard();
        let a = measurement_distribution(&theta, 4, 0.0, &basis).unwrap();
        let b = measurement_distribution(&theta, 4, 0.0, &basis).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cyclic_shift_invariance_n4() {
        let theta = random_theta(4, &mut rng(11));
        let p = measurement_distribution(&theta, 4, 1.1, &MeasurementBasis::hadamard()).unwrap();
        let rotate = |s: usize| ((s << 1) | (s >> 3)) & 0xF;
        for s in 0..16 {
            assert!((p[s] - p[rotate(s)]).abs() < 1e-12, "outcome {s}");
        }
    }

    #[test]
    fn point_mass_sampling() {
        let mut d = vec![0.0; 8];
        d[0] = 1.0;
        let b = sample_shots(&d, 50, &mut rng(0)).unwrap();
        assert!(b.outcomes().iter().all(|&s| s == 0));
    }

    #[test]
    fn fair_coin_frequency() {
        let b = sample_shots(&[0.5, 0.5], 100_000, &mut rng(42)).unwrap();
        let zeros = b.outcomes().iter().filter(|&&s| s == 0).count() as f64 / 1e5;
        assert!((0.494..=0.506).contains(&zeros), "{zeros}");
    }

    #[test]
    fn sampling_reproducible() {
        let d = [0.1, 0.2, 0.3, 0.4];
        let a = sample_shots(&d, 100, &mut rng(3)).unwrap();
        let b = sample_shots(&d, 100, &mut rng(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sampling_rejects_bad_distributions() {
        let mut r = rng(0);
        assert!(sample_shots(&[0.5, 0.6], 1, &mut r).is_err());
        assert!(sample_shots(&[1.5, -0.5], 1, &mut r).is_err());
        assert!(sample_shots(&[f64::NAN, 1.0], 1, &mut r).is_err());
        assert!(sample_shots(&[1.0], 0, &mut r).is_err());
    }

    #[test]
    fn stationary_coordinate_has_zero_gradient() {
        // theta = 0 prepares |0000>; the first-acting Rz and the ZZ coupling
        // only add a global phase there.
        let theta = ProbeParams::zeros(2);
        let basis = MeasurementBasis::hadamard();
        for outcome in [0, 5, 15] {
            let g = log_prob_grad_theta(&theta, 4, 0.7, &basis, outcome).unwrap();
            assert!(g[2].abs() < 1e-6, "{}", g[2]);
            assert!(g[3].abs() < 1e-6, "{}", g[3]);
        }
    }

    #[test]
    fn gradient_consistent_across_steps() {
        let mut r = rng(21);
        let basis = MeasurementBasis::hadamard();
        for _ in 0..5 {
            let theta = random_theta(3, &mut r);
            let x = r.gen_range(0.0..PI);
            let p = measurement_distribution(&theta, 2, x, &basis).unwrap();
            let outcome = (0..4).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
            let g1 = log_prob_grad_theta(&theta, 2, x, &basis, outcome).unwrap();
            let g2 = log_prob_grad_theta_with_step(&theta, 2, x, &basis, outcome, 1e-7).unwrap();
            let norm: f64 = g2.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm <= 1e-6 {
                continue;
            }
            for (a, b) in g1.iter().zip(&g2) {
                assert!((a - b).abs() <= 1e-3 * norm.max(b.abs()), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn point_mass_probe_gradients() {
        let theta = ProbeParams::zeros(4);
        let basis = MeasurementBasis::computational();
        let g = log_prob_grad_theta(&theta, 3, 1.0, &basis, 0).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-6));
        assert!(matches!(
            log_prob_grad_theta(&theta, 3, 1.0, &basis, 1),
            Err(Error::DegenerateGradient { outcome: 1, .. })
        ));
    }

    #[test]
    fn descend_moves_against_gradient() {
        let mut p = ProbeParams::zeros(1);
        p.descend(0.5, &[1.0, -2.0, 0.0, 4.0]).unwrap();
        assert_eq!(p.as_slice(), &[-0.5, 1.0, 0.0, -2.0]);
        assert!(p.descend(1.0, &[f64::INFINITY, 0.0, 0.0, 0.0]).is_err());
        assert_eq!(p.as_slice(), &[-0.5, 1.0, 0.0, -2.0]);
    }
}
