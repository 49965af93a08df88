//! Numerical checks of every hand-written gradient against an independent
//! reference.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::conformal::{soft_set_size, soft_size_grad_lambda, soft_size_grad_scores, ScoreVector};
use crate::engine::{score_function_gradient, ProbeContext};
use crate::estimator::{forward, loss_and_grad, EstimatorDims, EstimatorParams};
use crate::probe::{
    log_prob_grad_theta_with_step, measurement_distribution, sample_shots, MeasurementBasis,
    PhaseGrid, ProbeParams, ShotBatch, ANGLES_PER_LAYER,
};
use crate::Result;

/// How a check measures disagreement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorUnit {
    Relative,
    StandardErrors,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    /// Worst disagreement in `unit`.
    pub max_error: f64,
    /// Worst relative error, reported for every check.
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub unit: ErrorUnit,
    pub checked: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub corrupted: bool,
    pub checks: Vec<CheckResult>,
}

impl GradcheckReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckOptions {
    pub seed: u64,
    /// Flip the sign of every analytic gradient; every check must then fail.
    pub corrupt: bool,
    pub estimator_coords: usize,
    pub resamples: usize,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            corrupt: false,
            estimator_coords: 50,
            resamples: 10_000,
        }
    }
}

pub const ESTIMATOR_TOL: f64 = 1e-4;
pub const SOFT_SIZE_TOL: f64 = 1e-8;
pub const PROBE_TOL: f64 = 1e-3;
pub const SCORE_FUNCTION_SIGMAS: f64 = 3.0;

fn rel(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn run(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let sign = if opts.corrupt { -1.0 } else { 1.0 };
    let stream = |k: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(opts.seed);
        r.set_stream(k);
        r
    };
    let checks = vec![
        estimator_check(opts.estimator_coords, sign, &mut stream(0))?,
        soft_size_check(sign, &mut stream(1))?,
        probe_check(sign, &mut stream(2))?,
        score_function_check(opts.resamples, sign, &mut stream(3))?,
    ];
    Ok(GradcheckReport {
        seed: opts.seed,
        corrupted: opts.corrupt,
        checks,
    })
}

fn random_params(dims: EstimatorDims, rng: &mut ChaCha8Rng) -> Result<EstimatorParams> {
    let data = (0..EstimatorParams::count_for(dims))
        .map(|_| rng.gen_range(-0.5..0.5))
        .collect();
    EstimatorParams::from_vec(dims, data)
}

fn estimator_check(coords: usize, sign: f64, rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let dims = EstimatorDims {
        input: 16,
        hidden: 12,
        output: 10,
    };
    let w = random_params(dims, rng)?;
    let outcomes: Vec<usize> = (0..10).map(|_| rng.gen_range(0..16)).collect();
    let shots = ShotBatch::new(outcomes, 16)?;
    let label = rng.gen_range(0..10);
    let l2 = 1e-3;
    let (_, grad) = loss_and_grad(&w, &shots, label, l2, None)?;
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for _ in 0..coords {
        let k = rng.gen_range(0..w.len());
        let mut p = w.clone();
        p.as_mut_slice()[k] += h;
        let mut m = w.clone();
        m.as_mut_slice()[k] -= h;
        let fd = (loss_and_grad(&p, &shots, label, l2, None)?.0
            - loss_and_grad(&m, &shots, label, l2, None)?.0)
            / (2.0 * h);
        worst = worst.max(rel(sign * grad[k], fd, 1e-8));
    }
    Ok(relative_result(
        "estimator_backprop",
        worst,
        ESTIMATOR_TOL,
        coords,
    ))
}

fn relative_result(name: &'static str, worst: f64, tol: f64, checked: usize) -> CheckResult {
    CheckResult {
        name,
        max_error: worst,
        max_rel_error: worst,
        tolerance: tol,
        unit: ErrorUnit::Relative,
        checked,
        pass: worst <= tol,
    }
}

fn soft_size_check(sign: f64, rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for _ in 0..20 {
        let raw: Vec<f64> = (0..10).map(|_| rng.gen_range(0.0..5.0)).collect();
        let lambda = rng.gen_range(0.0..5.0);
        let tau = rng.gen_range(0.2..2.0);
        let scores = ScoreVector::new(raw.clone())?;
        let grad = soft_size_grad_scores(&scores, lambda, tau)?;
        for k in 0..raw.len() {
            let mut p = raw.clone();
            p[k] += h;
            let mut m = raw.clone();
            m[k] -= h;
            let fd = (soft_set_size(&ScoreVector::new(p)?, lambda, tau)?
                - soft_set_size(&ScoreVector::new(m)?, lambda, tau)?)
                / (2.0 * h);
            worst = worst.max(rel(sign * grad[k], fd, 1.0));
            checked += 1;
        }
        let gl = soft_size_grad_lambda(&scores, lambda, tau)?;
        let fd = (soft_set_size(&scores, lambda + h, tau)?
            - soft_set_size(&scores, lambda - h, tau)?)
            / (2.0 * h);
        worst = worst.max(rel(sign * gl, fd, 1.0));
        checked += 1;
    }
    Ok(relative_result(
        "soft_size_gradient",
        worst,
        SOFT_SIZE_TOL,
        checked,
    ))
}

fn random_theta(layers: usize, rng: &mut ChaCha8Rng) -> Result<ProbeParams> {
    let v = (0..layers * ANGLES_PER_LAYER)
        .map(|_| rng.gen_range(-3.0..3.0))
        .collect();
    ProbeParams::from_vec(layers, v)
}

fn probe_check(sign: f64, rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let basis = MeasurementBasis::hadamard();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for _ in 0..10 {
        let n = rng.gen_range(2..=4);
        let theta = random_theta(rng.gen_range(1..=3), rng)?;
        let x = rng.gen_range(0.0..std::f64::consts::PI);
        let p = measurement_distribution(&theta, n, x, &basis)?;
        for (s, &ps) in p.iter().enumerate() {
            if ps < 1e-3 {
                continue;
            }
            let coarse = log_prob_grad_theta_with_step(&theta, n, x, &basis, s, 1e-5)?;
            let fine = log_prob_grad_theta_with_step(&theta, n, x, &basis, s, 1e-7)?;
            let scale = fine.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-6);
            for (a, b) in coarse.iter().zip(&fine) {
                worst = worst.max((sign * a - b).abs() / scale);
            }
            checked += 1;
        }
    }
    Ok(relative_result(
        "probe_log_prob_gradient",
        worst,
        PROBE_TOL,
        checked,
    ))
}

/// Resampled score-function estimates against the finite-difference
/// gradient of the exactly enumerated expectation of `G`, for two qubits
/// and two shots.
fn score_function_check(resamples: usize, sign: f64, rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    const N: usize = 2;
    const SHOTS: usize = 2;
    let outcomes = 1 << N;
    let grid = PhaseGrid::new(10)?;
    let basis = MeasurementBasis::hadamard();
    let theta = random_theta(2, rng)?;
    let x = grid.value(rng.gen_range(0..grid.len()))?;
    let w = random_params(
        EstimatorDims {
            input: outcomes,
            hidden: 8,
            output: grid.len(),
        },
        rng,
    )?;
    let lambda = 2.3;
    let tau = 0.5;

    // G is a fixed function of the shot pair once w and lambda are fixed.
    let mut g_table = vec![0.0; outcomes * outcomes];
    for a in 0..outcomes {
        for b in 0..outcomes {
            let shots = ShotBatch::new(vec![a, b], outcomes)?;
            g_table[a * outcomes + b] = soft_set_size(&forward(&w, &shots)?.scores(), lambda, tau)?;
        }
    }
    let expected_g = |th: &ProbeParams| -> Result<f64> {
        let p = measurement_distribution(th, N, x, &basis)?;
        let mut e = 0.0;
        for a in 0..outcomes {
            for b in 0..outcomes {
                e += p[a] * p[b] * g_table[a * outcomes + b];
            }
        }
        Ok(e)
    };
    let baseline = expected_g(&theta)?;
    let h = 1e-5;
    let mut oracle = Vec::with_capacity(theta.len());
    for k in 0..theta.len() {
        let mut v = theta.as_slice().to_vec();
        v[k] += h;
        let plus = expected_g(&ProbeParams::from_vec(theta.layers(), v.clone())?)?;
        v[k] -= 2.0 * h;
        let minus = expected_g(&ProbeParams::from_vec(theta.layers(), v)?)?;
        oracle.push((plus - minus) / (2.0 * h));
    }

    let ctx = ProbeContext {
        qubits: N,
        basis: basis.clone(),
        tau,
        eta_theta: 0.0,
    };
    let dist = measurement_distribution(&theta, N, x, &basis)?;
    let mut sum = vec![0.0; theta.len()];
    let mut sum_sq = vec![0.0; theta.len()];
    for _ in 0..resamples {
        let shots = sample_shots(&dist, SHOTS, rng)?;
        let s = shots.outcomes();
        let g = g_table[s[0] * outcomes + s[1]];
        let (est, _) = score_function_gradient(&theta, &ctx, x, &shots, g - baseline)?;
        for k in 0..est.len() {
            let v = sign * est[k];
            sum[k] += v;
            sum_sq[k] += v * v;
        }
    }
    let r = resamples as f64;
    let mut worst_z: f64 = 0.0;
    let mut worst_rel: f64 = 0.0;
    for k in 0..theta.len() {
        let mean = sum[k] / r;
        let var = (sum_sq[k] / r - mean * mean).max(0.0) * r / (r - 1.0);
        let se = (var / r).sqrt();
        let diff = (mean - oracle[k]).abs();
        // Angles acting as a global phase have no variance at all.
        if se < 1e-12 {
            if diff > 1e-9 {
                worst_z = f64::INFINITY;
            }
            continue;
        }
        worst_z = worst_z.max(diff / se);
        worst_rel = worst_rel.max(rel(mean, oracle[k], 1e-8));
    }
    Ok(CheckResult {
        name: "score_function_gradient",
        max_error: worst_z,
        max_rel_error: worst_rel,
        tolerance: SCORE_FUNCTION_SIGMAS,
        unit: ErrorUnit::StandardErrors,
        checked: theta.len(),
        pass: worst_z <= SCORE_FUNCTION_SIGMAS,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_seed_passes() {
        let report = run(&GradcheckOptions::default()).unwrap();
        for c in &report.checks {
            assert!(c.pass, "{c:?}");
        }
    }

    #[test]
    fn corruption_fails_every_check() {
        let report = run(&GradcheckOptions {
            corrupt: true,
            ..GradcheckOptions::default()
        })
        .unwrap();
        for c in &report.checks {
            assert!(!c.pass, "{c:?}");
        }
    }
}
