//! Dense-matrix reference simulator: every gate is expanded to a full
//! `2^n x 2^n` matrix element by element, independently of the strided
//! kernels under test.

#![allow(dead_code)]

use num_complex::Complex64;
use vqsense::qsim::{gates, Mat2, Mat4};

pub type Dense = Vec<Vec<Complex64>>;

pub fn identity(dim: usize) -> Dense {
    (0..dim)
        .map(|i| {
            (0..dim)
                .map(|j| Complex64::new((i == j) as u8 as f64, 0.0))
                .collect()
        })
        .collect()
}

pub fn matmul(a: &Dense, b: &Dense) -> Dense {
    let n = a.len();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| (0..n).map(|k| a[i][k] * b[k][j]).sum())
                .collect()
        })
        .collect()
}

/// Full matrix of a one-qubit gate on qubit `q`, element by element.
pub fn dense_single(n: usize, q: usize, u: &Mat2) -> Dense {
    let dim = 1 << n;
    let mut m = vec![vec![Complex64::new(0.0, 0.0); dim]; dim];
    for (i, row) in m.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            if (i & !(1 << q)) == (j & !(1 << q)) {
                *v = u[(i >> q) & 1][(j >> q) & 1];
            }
        }
    }
    m
}

/// Full matrix of a two-qubit gate; local index is `bit(q0) + 2 bit(q1)`.
pub fn dense_two(n: usize, q0: usize, q1: usize, u: &Mat4) -> Dense {
    let dim = 1 << n;
    let mask = !((1 << q0) | (1 << q1));
    let local = |s: usize| ((s >> q0) & 1) + 2 * ((s >> q1) & 1);
    let mut m = vec![vec![Complex64::new(0.0, 0.0); dim]; dim];
    for (i, row) in m.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            if i & mask == j & mask {
                *v = u[local(i)][local(j)];
            }
        }
    }
    m
}

pub fn apply_dense(m: &Dense, v: &[Complex64]) -> Vec<Complex64> {
    m.iter()
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

/// `p(s | x)` of the ring-ansatz probe built from dense matrices.
pub fn dense_probe_distribution(n: usize, values: &[f64], x: f64) -> Vec<f64> {
    let dim = 1 << n;
    let layers = values.len() / 4;
    let mut m = identity(dim);
    let pairs: Vec<(usize, usize)> = if n == 2 {
        vec![(0, 1)]
    } else {
        (0..n).map(|q| (q, (q + 1) % n)).collect()
    };
    for l in 0..layers {
        let v = &values[l * 4..(l + 1) * 4];
        // Rz(a) Ry(b) Rz(c) as explicit products.
        let u = gates::mul2(
            &gates::rz(v[0]),
            &gates::mul2(&gates::ry(v[1]), &gates::rz(v[2])),
        );
        for q in 0..n {
            m = matmul(&dense_single(n, q, &u), &m);
        }
        for &(a, b) in &pairs {
            m = matmul(&dense_two(n, a, b, &gates::zz(v[3])), &m);
        }
    }
    let mut phase = vec![vec![Complex64::new(0.0, 0.0); dim]; dim];
    for (s, row) in phase.iter_mut().enumerate() {
        row[s] = Complex64::from_polar(1.0, x * s.count_ones() as f64);
    }
    m = matmul(&phase, &m);
    for q in 0..n {
        m = matmul(&dense_single(n, q, &gates::hadamard()), &m);
    }
    let mut e0 = vec![Complex64::new(0.0, 0.0); dim];
    e0[0] = Complex64::new(1.0, 0.0);
    apply_dense(&m, &e0).iter().map(|a| a.norm_sqr()).collect()
}
