//! Statevector simulator for the variational circuit block.
//!
//! Basis indices are little-endian: qubit 0 is the least significant bit of
//! the amplitude index. All gates preserve the state norm to 1e-12.

mod vqc;

pub use vqc::{angle_encode, encoded_qubit_states, VqcBlock, NUM_READOUT};

use crate::error::{Error, Result};
use num_complex::Complex64;

pub type C64 = Complex64;

/// 2x2 complex matrix in row-major order.
pub type Mat2 = [[C64; 2]; 2];

/// Largest supported register; dense simulation above this is out of scope.
pub const MAX_QUBITS: usize = 14;

const UNITARY_TOL: f64 = 1e-12;

/// Pure state over `2^num_qubits` complex amplitudes.
#[derive(Debug, Clone)]
pub struct Statevector {
    num_qubits: usize,
    amps: Vec<C64>,
}

impl Statevector {
    /// The all-zeros computational basis state |0...0>.
    pub fn zero_state(num_qubits: usize) -> Result<Self> {
        if num_qubits == 0 || num_qubits > MAX_QUBITS {
            return Err(Error::Usage(format!(
                "qubit count {num_qubits} outside supported range 1..={MAX_QUBITS}"
            )));
        }
        let mut amps = vec![C64::new(0.0, 0.0); 1 << num_qubits];
        amps[0] = C64::new(1.0, 0.0);
        Ok(Statevector { num_qubits, amps })
    }

    pub fn from_amplitudes(amps: Vec<C64>) -> Result<Self> {
        if !amps.len().is_power_of_two() || amps.is_empty() {
            return Err(Error::Usage(format!(
                "amplitude count {} is not a power of two",
                amps.len()
            )));
        }
        let num_qubits = amps.len().trailing_zeros() as usize;
        Ok(Statevector { num_qubits, amps })
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    fn check_qubit(&self, qubit: usize) -> Result<()> {
        if qubit >= self.num_qubits {
            return Err(Error::Usage(format!(
                "qubit index {qubit} out of range for {} qubits",
                self.num_qubits
            )));
        }
        Ok(())
    }

    /// Applies a single-qubit unitary over the amplitude pairs that differ in
    /// the target bit. Rejects matrices that are not unitary to 1e-12.
    pub fn apply_single_qubit(&mut self, qubit: usize, m: &Mat2) -> Result<()> {
        self.check_qubit(qubit)?;
        if !is_unitary(m, UNITARY_TOL) {
            return Err(Error::Usage("gate matrix is not unitary".into()));
        }
        self.apply_single_qubit_unchecked(qubit, m);
        Ok(())
    }

    pub(crate) fn apply_single_qubit_unchecked(&mut self, qubit: usize, m: &Mat2) {
        let bit = 1usize << qubit;
        let low_mask = bit - 1;
        let half = self.amps.len() / 2;
        let (m00, m01, m10, m11) = (m[0][0], m[0][1], m[1][0], m[1][1]);
        for i in 0..half {
            let i0 = ((i & !low_mask) << 1) | (i & low_mask);
            let i1 = i0 | bit;
            let a0 = self.amps[i0];
            let a1 = self.amps[i1];
            self.amps[i0] = m00 * a0 + m01 * a1;
            self.amps[i1] = m10 * a0 + m11 * a1;
        }
    }

    /// Flips the target bit of every amplitude whose control bit is set.
    pub fn apply_cnot(&mut self, control: usize, target: usize) -> Result<()> {
        self.check_qubit(control)?;
        self.check_qubit(target)?;
        if control == target {
            return Err(Error::Usage("cnot control and target must differ".into()));
        }
        let cbit = 1usize << control;
        let tbit = 1usize << target;
        for i in 0..self.amps.len() {
            if i & cbit != 0 && i & tbit == 0 {
                self.amps.swap(i, i | tbit);
            }
        }
        Ok(())
    }

    /// Expectation of the Pauli-Z observable on one qubit:
    /// sum of |a_k|^2 weighted +1 when the qubit bit is 0, -1 when it is 1.
    pub fn expectation_z(&self, qubit: usize) -> Result<f64> {
        self.check_qubit(qubit)?;
        let bit = 1usize << qubit;
        let mut acc = 0.0;
        for (k, a) in self.amps.iter().enumerate() {
            let p = a.norm_sqr();
            if k & bit == 0 {
                acc += p;
            } else {
                acc -= p;
            }
        }
        Ok(acc)
    }
}

pub fn is_unitary(m: &Mat2, tol: f64) -> bool {
    // U^dagger U == I, checked entrywise.
    let mut max_dev: f64 = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            let mut acc = C64::new(0.0, 0.0);
            for k in 0..2 {
                acc += m[k][i].conj() * m[k][j];
            }
            let target = if i == j { 1.0 } else { 0.0 };
            max_dev = max_dev.max((acc - target).norm());
        }
    }
    max_dev <= tol
}

/// Ry(theta) = [[cos t/2, -sin t/2], [sin t/2, cos t/2]].
pub fn ry(theta: f64) -> Mat2 {
    let (s, c) = (theta / 2.0).sin_cos();
    [
        [C64::new(c, 0.0), C64::new(-s, 0.0)],
        [C64::new(s, 0.0), C64::new(c, 0.0)],
    ]
}

/// Rz(theta) = diag(e^{-i t/2}, e^{+i t/2}).
pub fn rz(theta: f64) -> Mat2 {
    let (s, c) = (theta / 2.0).sin_cos();
    [
        [C64::new(c, -s), C64::new(0.0, 0.0)],
        [C64::new(0.0, 0.0), C64::new(c, s)],
    ]
}

/// General single-qubit rotation in the ZYZ decomposition:
/// R(phi, theta, omega) = Rz(omega) Ry(theta) Rz(phi).
pub fn rot(phi: f64, theta: f64, omega: f64) -> Mat2 {
    mat_mul(&rz(omega), &mat_mul(&ry(theta), &rz(phi)))
}

pub fn hadamard() -> Mat2 {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    [
        [C64::new(h, 0.0), C64::new(h, 0.0)],
        [C64::new(h, 0.0), C64::new(-h, 0.0)],
    ]
}

pub fn pauli_x() -> Mat2 {
    [
        [C64::new(0.0, 0.0), C64::new(1.0, 0.0)],
        [C64::new(1.0, 0.0), C64::new(0.0, 0.0)],
    ]
}

pub fn identity2() -> Mat2 {
    [
        [C64::new(1.0, 0.0), C64::new(0.0, 0.0)],
        [C64::new(0.0, 0.0), C64::new(1.0, 0.0)],
    ]
}

pub fn mat_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut out = [[C64::new(0.0, 0.0); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}
