//! Simulator and probe against independent references: dense matrices,
//! the analytic Ramsey magnetometer and large-sample frequencies.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vqsense::probe::{
    apply_phase_channel, measurement_distribution, sample_shots, MeasurementBasis, PhaseGrid,
    ProbeParams, ANGLES_PER_LAYER,
};
use vqsense::qsim::{gates, outcome_probabilities, GateOp, Mat2, StateVector};

#[path = "common/dense.rs"]
mod dense;
use dense::*;

fn random_unitary2(rng: &mut ChaCha8Rng) -> Mat2 {
    gates::euler_zyz(
        rng.gen_range(-PI..PI),
        rng.gen_range(-PI..PI),
        rng.gen_range(-PI..PI),
    )
}

#[test]
fn random_circuits_match_dense_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for n in 1..=3usize {
        for _ in 0..10 {
            let mut state = StateVector::zero(n).unwrap();
            let mut dense = identity(1 << n);
            for _ in 0..12 {
                if n >= 2 && rng.gen_bool(0.4) {
                    let q0 = rng.gen_range(0..n);
                    let q1 = (q0 + rng.gen_range(1..n)) % n;
                    let u = if rng.gen_bool(0.5) {
                        gates::cz()
                    } else {
                        gates::zz(rng.gen_range(-PI..PI))
                    };
                    state.apply(&GateOp::two((q0, q1), u).unwrap()).unwrap();
                    dense = matmul(&dense_two(n, q0, q1, &u), &dense);
                } else {
                    let q = rng.gen_range(0..n);
                    let u = random_unitary2(&mut rng);
                    state.apply(&GateOp::single(q, u).unwrap()).unwrap();
                    dense = matmul(&dense_single(n, q, &u), &dense);
                }
            }
            let expect = apply_dense(&dense, StateVector::zero(n).unwrap().amplitudes());
            for (a, b) in state.amplitudes().iter().zip(&expect) {
                assert!((a - b).norm() <= 1e-10, "n={n}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn probe_distribution_matches_dense_pipeline() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let basis = MeasurementBasis::hadamard();
    for n in 2..=3usize {
        for _ in 0..5 {
            let layers = rng.gen_range(1..=3);
            let values: Vec<f64> = (0..layers * ANGLES_PER_LAYER)
                .map(|_| rng.gen_range(-PI..PI))
                .collect();
            let theta = ProbeParams::from_vec(layers, values.clone()).unwrap();
            let x = rng.gen_range(0.0..PI);

            let expect = dense_probe_distribution(n, &values, x);
            let got = measurement_distribution(&theta, n, x, &basis).unwrap();
            for (a, b) in got.iter().zip(&expect) {
                assert!((a - b).abs() <= 1e-10, "n={n}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn single_qubit_magnetometer_is_analytic() {
    let grid = PhaseGrid::new(10).unwrap();
    let h = GateOp::single(0, gates::hadamard()).unwrap();
    for &x in grid.values() {
        let mut state = StateVector::zero(1).unwrap();
        state.apply(&h).unwrap();
        let mut state = apply_phase_channel(state, x);
        state.apply(&h).unwrap();
        let p = outcome_probabilities(&state);
        assert!((p[0] - (x / 2.0).cos().powi(2)).abs() <= 1e-10, "x={x}");
    }
}

#[test]
fn ramsey_probe_is_a_product_of_magnetometers() {
    // Ry(pi/2) on every qubit with no coupling: each qubit is an independent
    // Ramsey interferometer.
    let theta = ProbeParams::from_vec(1, vec![0.0, FRAC_PI_2, 0.0, 0.0]).unwrap();
    let basis = MeasurementBasis::hadamard();
    let grid = PhaseGrid::new(10).unwrap();
    for n in 2..=4usize {
        for &x in grid.values() {
            let p = measurement_distribution(&theta, n, x, &basis).unwrap();
            let c = (x / 2.0).cos().powi(2);
            for (s, &ps) in p.iter().enumerate() {
                let ones = s.count_ones() as i32;
                let expect = c.powi(n as i32 - ones) * (1.0 - c).powi(ones);
                assert!((ps - expect).abs() <= 1e-10);
            }
        }
    }
}

#[test]
fn shot_frequencies_match_distribution() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let theta = ProbeParams::ramsey_init(4, 0.5, &mut rng);
    let dist = measurement_distribution(&theta, 4, 1.1, &MeasurementBasis::hadamard()).unwrap();
    let shots = sample_shots(&dist, 100_000, &mut rng).unwrap();
    let mut counts = vec![0usize; dist.len()];
    for &s in shots.outcomes() {
        counts[s] += 1;
    }
    let tv: f64 = counts
        .iter()
        .zip(&dist)
        .map(|(&c, &p)| (c as f64 / 1e5 - p).abs())
        .sum::<f64>()
        / 2.0;
    assert!(tv < 0.01, "total variation {tv}");
}
