//! Risk-controlled set prediction over a discrete phase grid.
//!
//! Sets contain every candidate whose score is at most the threshold `lambda`.
//! After each step the threshold moves by `eta_t * (loss - alpha)`, which
//! keeps the long-run average loss within `(L_max + max eta) / T * sum |Delta_t|`
//! of `alpha` for any data sequence.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probe::PhaseGrid;

/// Per-candidate scores, lower is more plausible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScoreVector(Vec<f64>);

impl ScoreVector {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::Validation(format!("score {i} is not finite")));
        }
        Ok(Self(scores))
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
}

/// Membership mask over grid indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EstimationSet {
    mask: Vec<bool>,
}

impl EstimationSet {
    pub fn from_mask(mask: Vec<bool>) -> Self {
        Self { mask }
    }

    pub fn contains(&self, index: usize) -> bool {
        self.mask.get(index).copied().unwrap_or(false)
    }

    pub fn cardinality(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.cardinality() == 0
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn members(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
    }

    pub fn is_subset_of(&self, other: &EstimationSet) -> bool {
        self.mask.iter().zip(&other.mask).all(|(&a, &b)| !a || b)
    }
}

/// `{i : scores[i] <= lambda}`.
pub fn build_set(scores: &ScoreVector, lambda: f64) -> EstimationSet {
    EstimationSet {
        mask: scores.0.iter().map(|&s| s <= lambda).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Coverage,
    MinDistance,
}

impl LossKind {
    /// Upper bound of the loss.
    pub fn max_loss(self) -> f64 {
        match self {
            LossKind::Coverage => 1.0,
            LossKind::MinDistance => PI,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub value: f64,
    pub kind: LossKind,
    /// Set when the loss was evaluated on an empty set and capped.
    pub empty_set: bool,
}

/// `0` when `x_index` is in the set, `1` otherwise.
pub fn coverage_loss(x_index: usize, set: &EstimationSet) -> LossValue {
    LossValue {
        value: if set.contains(x_index) { 0.0 } else { 1.0 },
        kind: LossKind::Coverage,
        empty_set: set.is_empty(),
    }
}

/// Distance from `x` to the nearest member phase. For scalar phases every
/// `p`-norm reduces to `|x - x_hat|`, so no order parameter is taken. The
/// empty set is charged the grid diameter `pi`.
pub fn min_distance_loss(x: f64, set: &EstimationSet, grid: &PhaseGrid) -> LossValue {
    let value = set
        .members()
        .filter_map(|i| grid.values().get(i))
        .map(|v| (x - v).abs())
        .fold(None, |acc: Option<f64>, d| {
            Some(acc.map_or(d, |a| a.min(d)))
        });
    LossValue {
        value: value.unwrap_or(PI),
        kind: LossKind::MinDistance,
        empty_set: value.is_none(),
    }
}

/// Threshold learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StepSchedule {
    Constant {
        eta: f64,
    },
    /// `eta_t = eta1 / sqrt(t)`, `t >= 1`.
    Decaying {
        eta1: f64,
    },
}

impl StepSchedule {
    pub fn validate(&self) -> Result<()> {
        let eta = match *self {
            StepSchedule::Constant { eta } => eta,
            StepSchedule::Decaying { eta1 } => eta1,
        };
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::Config(format!(
                "threshold step size must be > 0, got {eta}"
            )));
        }
        Ok(())
    }

    /// Step size at 1-based time `t`.
    pub fn eta(&self, t: usize) -> f64 {
        match *self {
            StepSchedule::Constant { eta } => eta,
            StepSchedule::Decaying { eta1 } => eta1 / (t.max(1) as f64).sqrt(),
        }
    }

    /// `max_{1<=t<=horizon} eta_t`.
    pub fn max_eta(&self, horizon: usize) -> f64 {
        (1..=horizon.max(1))
            .map(|t| self.eta(t))
            .fold(f64::MIN, f64::max)
    }
}

/// `|Delta_1| = 1/eta_1`, `|Delta_t| = 1/eta_t - 1/eta_{t-1}`.
pub fn delta_norms(horizon: usize, schedule: &StepSchedule) -> Vec<f64> {
    (1..=horizon)
        .map(|t| {
            if t == 1 {
                1.0 / schedule.eta(1)
            } else {
                1.0 / schedule.eta(t) - 1.0 / schedule.eta(t - 1)
            }
        })
        .collect()
}

/// Upper bound on `mean loss - alpha` after `horizon` steps.
pub fn risk_bound(horizon: usize, schedule: &StepSchedule, max_loss: f64) -> f64 {
    assert!(horizon >= 1, "risk bound needs a horizon >= 1");
    let delta_sum: f64 = match *schedule {
        StepSchedule::Constant { eta } => 1.0 / eta,
        StepSchedule::Decaying { .. } => delta_norms(horizon, schedule).iter().sum(),
    };
    (max_loss + schedule.max_eta(horizon)) / horizon as f64 * delta_sum
}

/// Online threshold with its bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdState {
    lambda: f64,
    schedule: StepSchedule,
    alpha: f64,
    max_loss: f64,
    /// Number of updates applied so far; the next update uses `eta_{t+1}`.
    t: usize,
    cumulative_loss: f64,
}

impl ThresholdState {
    pub fn new(lambda: f64, schedule: StepSchedule, alpha: f64, max_loss: f64) -> Result<Self> {
        schedule.validate()?;
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Config(format!(
                "alpha must lie in (0, 1), got {alpha}"
            )));
        }
        if max_loss.is_nan() || max_loss <= 0.0 {
            return Err(Error::Config(format!("L_max must be > 0, got {max_loss}")));
        }
        if !lambda.is_finite() {
            return Err(Error::Config("initial threshold must be finite".into()));
        }
        Ok(Self {
            lambda,
            schedule,
            alpha,
            max_loss,
            t: 0,
            cumulative_loss: 0.0,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn max_loss(&self) -> f64 {
        self.max_loss
    }

    pub fn schedule(&self) -> &StepSchedule {
        &self.schedule
    }

    pub fn steps(&self) -> usize {
        self.t
    }

    pub fn cumulative_loss(&self) -> f64 {
        self.cumulative_loss
    }

    /// `lambda += eta_t (loss - alpha)`.
    pub fn update(&mut self, loss: f64) -> Result<()> {
        if !(0.0..=self.max_loss).contains(&loss) {
            return Err(Error::Validation(format!(
                "loss {loss} outside [0, {}]",
                self.max_loss
            )));
        }
        self.t += 1;
        self.lambda += self.schedule.eta(self.t) * (loss - self.alpha);
        self.cumulative_loss += loss;
        Ok(())
    }
}

/// Functional form of [`ThresholdState::update`].
pub fn update_threshold(mut state: ThresholdState, loss: &LossValue) -> Result<ThresholdState> {
    state.update(loss.value)?;
    Ok(state)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Config(format!("temperature must be > 0, got {tau}")));
    }
    Ok(())
}

/// Smooth set size `sum_i sigmoid((lambda - scores[i]) / tau)`.
pub fn soft_set_size(scores: &ScoreVector, lambda: f64, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    Ok(scores.0.iter().map(|&c| sigmoid((lambda - c) / tau)).sum())
}

/// `d soft_set_size / d scores[i] = -sigmoid'(z_i) / tau`.
pub fn soft_size_grad_scores(scores: &ScoreVector, lambda: f64, tau: f64) -> Result<Vec<f64>> {
    check_tau(tau)?;
    Ok(scores
        .0
        .iter()
        .map(|&c| {
            let s = sigmoid((lambda - c) / tau);
            -s * (1.0 - s) / tau
        })
        .collect())
}

/// `d soft_set_size / d lambda`.
pub fn soft_size_grad_lambda(scores: &ScoreVector, lambda: f64, tau: f64) -> Result<f64> {
    Ok(-soft_size_grad_scores(scores, lambda, tau)?
        .iter()
        .sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sv(v: &[f64]) -> ScoreVector {
        ScoreVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn set_edges() {
        let s = sv(&[1.0, 2.0, 3.0]);
        assert!(build_set(&s, 0.5).is_empty());
        assert_eq!(build_set(&s, 3.0).cardinality(), 3);
        assert_eq!(build_set(&s, 2.0).mask(), &[true, true, false]);
    }

    #[test]
    fn non_finite_scores_rejected() {
        assert!(ScoreVector::new(vec![1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn coverage_cases() {
        let set = EstimationSet::from_mask(vec![true, false, true]);
        assert_eq!(coverage_loss(0, &set).value, 0.0);
        assert_eq!(coverage_loss(1, &set).value, 1.0);
        let empty = EstimationSet::from_mask(vec![false; 3]);
        let l = coverage_loss(2, &empty);
        assert_eq!(l.value, 1.0);
        assert!(l.empty_set);
    }

    #[test]
    fn distance_cases() {
        let grid = PhaseGrid::new(10).unwrap();
        let set = EstimationSet::from_mask((0..10).map(|i| i == 3).collect());
        assert_eq!(min_distance_loss(grid.values()[3], &set, &grid).value, 0.0);

        let two = PhaseGrid::new(2).unwrap();
        let only_pi = EstimationSet::from_mask(vec![false, true]);
        assert_eq!(min_distance_loss(0.0, &only_pi, &two).value, PI);

        let ends = EstimationSet::from_mask((0..10).map(|i| i == 0 || i == 9).collect());
        let l = min_distance_loss(grid.values()[4], &ends, &grid);
        assert!((l.value - 4.0 * PI / 9.0).abs() < 1e-14);

        let empty = EstimationSet::from_mask(vec![false; 10]);
        let l = min_distance_loss(1.0, &empty, &grid);
        assert_eq!(l.value, PI);
        assert!(l.empty_set);
    }

    #[test]
    fn threshold_arithmetic() {
        let sched = StepSchedule::Constant { eta: 0.1 };
        let mut st = ThresholdState::new(1.0, sched, 0.3, 1.0).unwrap();
        st.update(0.3).unwrap();
        assert_eq!(st.lambda(), 1.0);

        let st = ThresholdState::new(1.0, sched, 0.3, 1.0).unwrap();
        let up = update_threshold(
            st.clone(),
            &coverage_loss(1, &EstimationSet::from_mask(vec![true, false])),
        )
        .unwrap();
        assert!((up.lambda() - 1.07).abs() < 1e-15);
        let down = update_threshold(
            st,
            &coverage_loss(0, &EstimationSet::from_mask(vec![true, false])),
        )
        .unwrap();
        assert!((down.lambda() - 0.97).abs() < 1e-15);
        assert_eq!(down.steps(), 1);
    }

    #[test]
    fn threshold_rejects_bad_inputs() {
        let sched = StepSchedule::Constant { eta: 0.1 };
        assert!(ThresholdState::new(0.0, sched, 1.2, 1.0).is_err());
        assert!(ThresholdState::new(0.0, StepSchedule::Constant { eta: 0.0 }, 0.2, 1.0).is_err());
        let mut st = ThresholdState::new(0.0, sched, 0.2, 1.0).unwrap();
        assert!(st.update(1.5).is_err());
        assert_eq!(st.steps(), 0);
    }

    #[test]
    fn decaying_schedule_steps() {
        let sched = StepSchedule::Decaying { eta1: 0.4 };
        let mut st = ThresholdState::new(0.0, sched, 0.5, 1.0).unwrap();
        st.update(1.0).unwrap();
        st.update(1.0).unwrap();
        let expect = 0.4 * 0.5 + 0.4 / 2f64.sqrt() * 0.5;
        assert!((st.lambda() - expect).abs() < 1e-15);
    }

    #[test]
    fn soft_size_examples() {
        let s = sv(&[2.0]);
        assert_eq!(soft_set_size(&s, 2.0, 0.7).unwrap(), 0.5);

        let m = 10;
        let s = ScoreVector::new(vec![-5.0; m]).unwrap();
        let g = soft_set_size(&s, 0.0, 0.5).unwrap();
        assert!(g >= m as f64 * sigmoid(10.0) - 1e-12);
        assert!((sigmoid(10.0) - 0.9999546).abs() < 1e-7);

        let g = soft_set_size(&sv(&[1.0, 2.0, 3.0]), 2.0, 0.5).unwrap();
        assert!((g - 1.5).abs() < 1e-12);
        assert!((sigmoid(2.0) - 0.880797).abs() < 1e-6);

        assert!(soft_set_size(&s, 0.0, 0.0).is_err());
        assert!(soft_size_grad_scores(&s, 0.0, -1.0).is_err());
    }

    #[test]
    fn soft_size_gradient_examples() {
        let g = soft_size_grad_scores(&sv(&[2.0, 50.0]), 2.0, 0.5).unwrap();
        assert_eq!(g[0], -0.5);
        assert!(g[1].abs() < 1e-30);
    }

    #[test]
    fn soft_size_gradient_matches_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let scores: Vec<f64> = (0..10).map(|_| rng.gen_range(0.0..5.0)).collect();
            let lambda = rng.gen_range(0.0..5.0);
            let tau = rng.gen_range(0.1..2.0);
            let g = soft_size_grad_scores(&sv(&scores), lambda, tau).unwrap();
            let h = 1e-5;
            for i in 0..scores.len() {
                let mut p = scores.clone();
                let mut m = scores.clone();
                p[i] += h;
                m[i] -= h;
                let fd = (soft_set_size(&sv(&p), lambda, tau).unwrap()
                    - soft_set_size(&sv(&m), lambda, tau).unwrap())
                    / (2.0 * h);
                assert!((fd - g[i]).abs() < 1e-8, "{fd} vs {}", g[i]);
            }
            let fd = (soft_set_size(&sv(&scores), lambda + h, tau).unwrap()
                - soft_set_size(&sv(&scores), lambda - h, tau).unwrap())
                / (2.0 * h);
            let gl = soft_size_grad_lambda(&sv(&scores), lambda, tau).unwrap();
            assert!((fd - gl).abs() < 1e-8);
        }
    }

    #[test]
    fn risk_bound_examples() {
        let c = StepSchedule::Constant { eta: 0.1 };
        assert!((risk_bound(100, &c, 1.0) - 0.11).abs() < 1e-12);
        let ratio = risk_bound(100, &c, 1.0) / risk_bound(1000, &c, 1.0);
        assert!((ratio - 10.0).abs() < 1e-9);

        // (1 + 0.1) / 100 * sqrt(100) / 0.1
        let d = StepSchedule::Decaying { eta1: 0.1 };
        assert!((risk_bound(100, &d, 1.0) - 1.1).abs() < 1e-9);
        let deltas = delta_norms(100, &d);
        let telescoped: f64 = deltas.iter().sum();
        assert!((telescoped - 1.0 / d.eta(100)).abs() < 1e-9);
        assert!(deltas.iter().all(|&v| v >= 0.0));
    }

    proptest! {
        #[test]
        fn sets_nest_in_lambda(
            scores in prop::collection::vec(0.0f64..30.0, 1..16),
            a in -1.0f64..31.0,
            b in -1.0f64..31.0,
            x in 0usize..16,
        ) {
            let s = ScoreVector::new(scores.clone()).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let small = build_set(&s, lo);
            let large = build_set(&s, hi);
            prop_assert!(small.is_subset_of(&large));
            let x = x % scores.len();
            prop_assert!(coverage_loss(x, &small).value >= coverage_loss(x, &large).value);
            let grid = PhaseGrid::new(scores.len().max(2)).unwrap();
            if scores.len() >= 2 {
                let xv = grid.values()[x];
                prop_assert!(min_distance_loss(xv, &small, &grid).value
                    >= min_distance_loss(xv, &large, &grid).value);
            }
        }

        #[test]
        fn soft_size_strictly_inside(
            scores in prop::collection::vec(-5.0f64..5.0, 1..12),
            lambda in -5.0f64..5.0,
            tau in 0.5f64..5.0,
        ) {
            // |z| <= 20 keeps every sigmoid strictly inside (0, 1) in f64
            let s = ScoreVector::new(scores.clone()).unwrap();
            let g = soft_set_size(&s, lambda, tau).unwrap();
            prop_assert!(g > 0.0 && g < scores.len() as f64);
            let g2 = soft_set_size(&s, lambda + 0.3, tau).unwrap();
            prop_assert!(g2 >= g);
        }

        #[test]
        fn soft_size_approaches_cardinality(
            scores in prop::collection::vec(0.0f64..5.0, 1..12),
            lambda in 0.0f64..5.0,
        ) {
            prop_assume!(scores.iter().all(|c| (c - lambda).abs() > 1e-2));
            let s = ScoreVector::new(scores).unwrap();
            let card = build_set(&s, lambda).cardinality() as f64;
            let g = soft_set_size(&s, lambda, 1e-4).unwrap();
            prop_assert!((g - card).abs() < 1e-6);
        }

        #[test]
        fn constant_step_telescopes(
            losses in prop::collection::vec(prop::bool::ANY, 1..400),
            alpha in 0.05f64..0.95,
            eta in 0.01f64..1.0,
            lambda0 in -3.0f64..3.0,
        ) {
            let mut st = ThresholdState::new(lambda0, StepSchedule::Constant { eta }, alpha, 1.0).unwrap();
            let mut sum = 0.0;
            for &miss in &losses {
                let l = if miss { 1.0 } else { 0.0 };
                st.update(l).unwrap();
                sum += l - alpha;
            }
            prop_assert!((st.lambda() - lambda0 - eta * sum).abs() <= 1e-9);
        }
    }
}
