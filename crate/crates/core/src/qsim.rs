//! Exact pure-state simulation of small qubit registers.
//!
//! Qubit ordering is little-endian: qubit `q` is bit `q` of the basis index,
//! so for two qubits the amplitude order is `|q1 q0> = 00, 01, 10, 11`.
//!
//! Gates are applied in place over strided amplitude pairs (single-qubit) or
//! quads (two-qubit); no full `2^n x 2^n` matrix is ever built.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Largest register the workbench will allocate.
pub const MAX_QUBITS: usize = 12;

const UNITARY_TOL: f64 = 1e-10;

pub type Mat2 = [[Complex64; 2]; 2];
pub type Mat4 = [[Complex64; 4]; 4];

/// Pure state of `n` qubits.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n: usize,
    amps: Vec<Complex64>,
}

impl StateVector {
    /// `|0...0>` on `n` qubits.
    pub fn zero(n: usize) -> Result<Self> {
        if n == 0 || n > MAX_QUBITS {
            return Err(Error::Config(format!(
                "qubit count {n} outside 1..={MAX_QUBITS}"
            )));
        }
        let mut amps = vec![Complex64::new(0.0, 0.0); 1 << n];
        amps[0] = Complex64::new(1.0, 0.0);
        Ok(Self { n, amps })
    }

    /// Wraps raw amplitudes. The length must be a power of two; the vector is
    /// not renormalized.
    pub fn from_amplitudes(amps: Vec<Complex64>) -> Result<Self> {
        let len = amps.len();
        if len < 2 || !len.is_power_of_two() {
            return Err(Error::Validation(format!(
                "amplitude count {len} is not a power of two >= 2"
            )));
        }
        let n = len.trailing_zeros() as usize;
        if n > MAX_QUBITS {
            return Err(Error::Config(format!("{n} qubits exceeds {MAX_QUBITS}")));
        }
        Ok(Self { n, amps })
    }

    pub fn num_qubits(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Applies `gate` in place.
    pub fn apply(&mut self, gate: &GateOp) -> Result<()> {
        match gate {
            GateOp::Single { target, matrix } => {
                self.check_target(*target)?;
                self.apply_single(*target, matrix);
            }
            GateOp::Two { targets, matrix } => {
                self.check_target(targets.0)?;
                self.check_target(targets.1)?;
                self.apply_two(targets.0, targets.1, matrix);
            }
        }
        Ok(())
    }

    /// Multiplies every amplitude by a diagonal phase `exp(i * phase_of(index))`.
    pub fn apply_diagonal_phase(&mut self, phase_of: impl Fn(usize) -> f64) {
        for (s, a) in self.amps.iter_mut().enumerate() {
            let phi = phase_of(s);
            if phi != 0.0 {
                *a *= Complex64::from_polar(1.0, phi);
            }
        }
    }

    fn check_target(&self, q: usize) -> Result<()> {
        if q >= self.n {
            return Err(Error::Index {
                index: q,
                limit: self.n,
            });
        }
        Ok(())
    }

    pub(crate) fn apply_single(&mut self, q: usize, m: &Mat2) {
        let stride = 1usize << q;
        let dim = self.amps.len();
        let mut base = 0;
        while base < dim {
            for i in base..base + stride {
                let j = i + stride;
                let a0 = self.amps[i];
                let a1 = self.amps[j];
                self.amps[i] = m[0][0] * a0 + m[0][1] * a1;
                self.amps[j] = m[1][0] * a0 + m[1][1] * a1;
            }
            base += stride << 1;
        }
    }

    /// Local basis index is `bit(q0) + 2 * bit(q1)`: the first target is the
    /// less significant local bit.
    pub(crate) fn apply_two(&mut self, q0: usize, q1: usize, m: &Mat4) {
        let b0 = 1usize << q0;
        let b1 = 1usize << q1;
        for i in 0..self.amps.len() {
            if i & b0 != 0 || i & b1 != 0 {
                continue;
            }
            let idx = [i, i | b0, i | b1, i | b0 | b1];
            let v = idx.map(|k| self.amps[k]);
            for (r, &k) in idx.iter().enumerate() {
                self.amps[k] = m[r][0] * v[0] + m[r][1] * v[1] + m[r][2] * v[2] + m[r][3] * v[3];
            }
        }
    }
}

/// Allocates `|0...0>` on `n` qubits.
pub fn init_zero_state(n: usize) -> Result<StateVector> {
    StateVector::zero(n)
}

/// Consuming form of [`StateVector::apply`].
pub fn apply_gate(mut state: StateVector, gate: &GateOp) -> Result<StateVector> {
    state.apply(gate)?;
    Ok(state)
}

/// Computational-basis outcome probabilities `|amps[s]|^2`.
pub fn outcome_probabilities(state: &StateVector) -> Vec<f64> {
    state.amps.iter().map(|a| a.norm_sqr()).collect()
}

/// A validated one- or two-qubit unitary with its targets.
#[derive(Debug, Clone, PartialEq)]
pub enum GateOp {
    Single {
        target: usize,
        matrix: Mat2,
    },
    Two {
        targets: (usize, usize),
        matrix: Mat4,
    },
}

impl GateOp {
    pub fn single(target: usize, matrix: Mat2) -> Result<Self> {
        check_unitary(&matrix.map(|r| r.to_vec()))?;
        Ok(Self::Single { target, matrix })
    }

    pub fn two(targets: (usize, usize), matrix: Mat4) -> Result<Self> {
        if targets.0 == targets.1 {
            return Err(Error::Validation(format!(
                "two-qubit gate targets must differ, got ({}, {})",
                targets.0, targets.1
            )));
        }
        check_unitary(&matrix.map(|r| r.to_vec()))?;
        Ok(Self::Two { targets, matrix })
    }
}

fn check_unitary(m: &[Vec<Complex64>]) -> Result<()> {
    let d = m.len();
    for i in 0..d {
        for j in 0..d {
            let mut acc = Complex64::new(0.0, 0.0);
            for row in m {
                acc += row[i].conj() * row[j];
            }
            let expect = if i == j { 1.0 } else { 0.0 };
            if (acc - expect).norm() > UNITARY_TOL || !acc.re.is_finite() {
                return Err(Error::Validation(format!(
                    "matrix is not unitary: (U^dag U)[{i}][{j}] = {acc}"
                )));
            }
        }
    }
    Ok(())
}

/// Standard gate matrices.
pub mod gates {
    use super::{Mat2, Mat4};
    use num_complex::Complex64;

    const ZERO: Complex64 = Complex64::new(0.0, 0.0);
    const ONE: Complex64 = Complex64::new(1.0, 0.0);

    pub fn identity() -> Mat2 {
        [[ONE, ZERO], [ZERO, ONE]]
    }

    pub fn pauli_x() -> Mat2 {
        [[ZERO, ONE], [ONE, ZERO]]
    }

    pub fn hadamard() -> Mat2 {
        let h = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        [[h, h], [h, -h]]
    }

    /// `exp(-i a Z / 2)`.
    pub fn rz(a: f64) -> Mat2 {
        [
            [Complex64::from_polar(1.0, -a / 2.0), ZERO],
            [ZERO, Complex64::from_polar(1.0, a / 2.0)],
        ]
    }

    /// `exp(-i b Y / 2)`.
    pub fn ry(b: f64) -> Mat2 {
        let (s, c) = (b / 2.0).sin_cos();
        [
            [Complex64::new(c, 0.0), Complex64::new(-s, 0.0)],
            [Complex64::new(s, 0.0), Complex64::new(c, 0.0)],
        ]
    }

    /// `Rz(a) Ry(b) Rz(c)`; `Rz(c)` acts first.
    pub fn euler_zyz(a: f64, b: f64, c: f64) -> Mat2 {
        mul2(&mul2(&rz(a), &ry(b)), &rz(c))
    }

    pub fn cz() -> Mat4 {
        let mut m = [[ZERO; 4]; 4];
        m[0][0] = ONE;
        m[1][1] = ONE;
        m[2][2] = ONE;
        m[3][3] = -ONE;
        m
    }

    /// `exp(-i phi Z(x)Z / 2)`.
    pub fn zz(phi: f64) -> Mat4 {
        let minus = Complex64::from_polar(1.0, -phi / 2.0);
        let plus = Complex64::from_polar(1.0, phi / 2.0);
        let mut m = [[ZERO; 4]; 4];
        m[0][0] = minus;
        m[1][1] = plus;
        m[2][2] = plus;
        m[3][3] = minus;
        m
    }

    pub fn mul2(a: &Mat2, b: &Mat2) -> Mat2 {
        let mut out = [[ZERO; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        out
    }
}
