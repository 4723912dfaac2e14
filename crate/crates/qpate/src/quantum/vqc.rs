//! Variational circuit block: fixed arctan angle encoding, trainable
//! three-angle rotations with ring-CNOT entanglement per layer, and
//! parameter-shift gradients for both the trainable angles and the inputs.

use std::f64::consts::FRAC_PI_2;

use super::{rot, ry, rz, C64, Mat2, Statevector, MAX_QUBITS};
use crate::error::{Error, Result};

/// Number of readout qubits: Pauli-Z expectations on qubits 0 and 1 are the
/// two class logits.
pub const NUM_READOUT: usize = 2;

/// Per-qubit states of the angle-encoding product state:
/// Rz(arctan(x_i^2)) Ry(arctan(x_i)) |0>.
pub fn encoded_qubit_states(input: &[f64]) -> Vec<[C64; 2]> {
    input
        .iter()
        .map(|&x| encoded_single(x.atan(), (x * x).atan()))
        .collect()
}

fn encoded_single(a_ry: f64, a_rz: f64) -> [C64; 2] {
    let m = super::mat_mul(&rz(a_rz), &ry(a_ry));
    // Column 0 of the combined matrix is the image of |0>.
    [m[0][0], m[1][0]]
}

fn product_state(qubit_states: &[[C64; 2]]) -> Statevector {
    let q = qubit_states.len();
    let mut amps = vec![C64::new(1.0, 0.0)];
    for s in qubit_states.iter() {
        let half = amps.len();
        let mut next = vec![C64::new(0.0, 0.0); half * 2];
        for (i, &a) in amps.iter().enumerate() {
            next[i] = a * s[0];
            next[half + i] = a * s[1];
        }
        amps = next;
    }
    debug_assert_eq!(amps.len(), 1 << q);
    Statevector::from_amplitudes(amps).expect("power-of-two amplitude count")
}

/// Encodes a feature vector into a product state by applying
/// Ry(arctan(x_i)) then Rz(arctan(x_i^2)) to qubit i of |0...0>.
pub fn angle_encode(input: &[f64]) -> Result<Statevector> {
    if input.is_empty() || input.len() > MAX_QUBITS {
        return Err(Error::Usage(format!(
            "encoding input length {} outside supported range 1..={MAX_QUBITS}",
            input.len()
        )));
    }
    if input.iter().any(|v| !v.is_finite()) {
        return Err(Error::Usage("encoding input must be finite".into()));
    }
    Ok(product_state(&encoded_qubit_states(input)))
}

/// Parameterized circuit: `num_layers` repetitions of one trainable rotation
/// per qubit followed by a nearest-neighbour CNOT ring. Parameters are stored
/// as (phi, theta, omega) triples per qubit per layer.
#[derive(Debug, Clone)]
pub struct VqcBlock {
    num_qubits: usize,
    num_layers: usize,
    params: Vec<f64>,
}

impl VqcBlock {
    pub fn new(num_qubits: usize, num_layers: usize, params: Vec<f64>) -> Result<Self> {
        if !(NUM_READOUT..=MAX_QUBITS).contains(&num_qubits) {
            return Err(Error::Config(format!(
                "circuit needs between {NUM_READOUT} and {MAX_QUBITS} qubits, got {num_qubits}"
            )));
        }
        if num_layers == 0 {
            return Err(Error::Config("circuit needs at least one layer".into()));
        }
        let expected = 3 * num_qubits * num_layers;
        if params.len() != expected {
            return Err(Error::Config(format!(
                "expected {expected} circuit parameters, got {}",
                params.len()
            )));
        }
        Ok(VqcBlock {
            num_qubits,
            num_layers,
            params,
        })
    }

    /// Angles drawn uniformly from (-pi/2, pi/2); wide enough that the two
    /// readouts start decorrelated and input-sensitive.
    pub fn init_random(num_qubits: usize, num_layers: usize, rng: &mut impl rand::Rng) -> Self {
        let n = 3 * num_qubits * num_layers;
        let half = std::f64::consts::FRAC_PI_2;
        let params = (0..n).map(|_| rng.random::<f64>() * 2.0 * half - half).collect();
        VqcBlock::new(num_qubits, num_layers, params).expect("valid dimensions")
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.num_qubits {
            return Err(Error::Usage(format!(
                "expected {} input features, got {}",
                self.num_qubits,
                input.len()
            )));
        }
        Ok(())
    }

    fn rotation(&self, params: &[f64], layer: usize, qubit: usize) -> Mat2 {
        let base = (layer * self.num_qubits + qubit) * 3;
        rot(params[base], params[base + 1], params[base + 2])
    }

    /// Applies layers `from..num_layers` with the given parameter vector.
    fn apply_layers_from(&self, state: &mut Statevector, params: &[f64], from: usize) {
        for layer in from..self.num_layers {
            self.apply_one_layer(state, params, layer);
        }
    }

    fn readout(&self, state: &Statevector) -> [f64; NUM_READOUT] {
        let mut out = [0.0; NUM_READOUT];
        for (q, o) in out.iter_mut().enumerate() {
            *o = state.expectation_z(q).expect("readout qubit in range");
        }
        out
    }

    /// Full forward pass: encode, run the variational layers, and return the
    /// Pauli-Z expectations on the readout qubits as logits in [-1, 1].
    pub fn forward(&self, input: &[f64]) -> Result<[f64; NUM_READOUT]> {
        self.check_input(input)?;
        let mut state = angle_encode(input)?;
        self.apply_layers_from(&mut state, &self.params, 0);
        Ok(self.readout(&state))
    }

    fn forward_with_params(&self, encoded: &Statevector, params: &[f64], from: usize) -> [f64; NUM_READOUT] {
        let mut state = encoded.clone();
        self.apply_layers_from(&mut state, params, from);
        self.readout(&state)
    }

    /// Parameter-shift gradient of `upstream . logits` with respect to every
    /// circuit parameter: dZ/dp = (f(p + pi/2) - f(p - pi/2)) / 2, two extra
    /// circuit evaluations per parameter. Intermediate states are cached per
    /// layer so each shifted evaluation replays only the layers at or after
    /// the shifted one.
    pub fn parameter_shift_grad(
        &self,
        input: &[f64],
        upstream: &[f64; NUM_READOUT],
    ) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut grad = vec![0.0; self.params.len()];
        if upstream.iter().all(|&u| u == 0.0) {
            return Ok(grad);
        }

        // states[l] is the state just before layer l.
        let mut states = Vec::with_capacity(self.num_layers);
        let mut state = angle_encode(input)?;
        for layer in 0..self.num_layers {
            states.push(state.clone());
            self.apply_one_layer(&mut state, &self.params, layer);
        }

        let mut shifted = self.params.clone();
        for p in 0..self.params.len() {
            let layer = p / (3 * self.num_qubits);
            let original = shifted[p];

            shifted[p] = original + FRAC_PI_2;
            let plus = self.forward_with_params(&states[layer], &shifted, layer);
            shifted[p] = original - FRAC_PI_2;
            let minus = self.forward_with_params(&states[layer], &shifted, layer);
            shifted[p] = original;

            let mut acc = 0.0;
            for k in 0..NUM_READOUT {
                acc += upstream[k] * (plus[k] - minus[k]) / 2.0;
            }
            grad[p] = acc;
        }
        Ok(grad)
    }

    fn apply_one_layer(&self, state: &mut Statevector, params: &[f64], layer: usize) {
        for qubit in 0..self.num_qubits {
            let m = self.rotation(params, layer, qubit);
            state.apply_single_qubit_unchecked(qubit, &m);
        }
        for qubit in 0..self.num_qubits {
            let target = (qubit + 1) % self.num_qubits;
            state.apply_cnot(qubit, target).expect("ring indices are valid");
        }
    }

    /// Gradient of `upstream . logits` with respect to the raw input
    /// features. The shift rule is applied to the encoding angles and chained
    /// through arctan: d/dx arctan(x) = 1/(1+x^2), d/dx arctan(x^2) = 2x/(1+x^4).
    pub fn input_gradient(
        &self,
        input: &[f64],
        upstream: &[f64; NUM_READOUT],
    ) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut grad = vec![0.0; input.len()];
        if upstream.iter().all(|&u| u == 0.0) {
            return Ok(grad);
        }

        let base_states = encoded_qubit_states(input);
        let eval_with_qubit_state = |i: usize, qs: [C64; 2]| -> [f64; NUM_READOUT] {
            let mut states = base_states.clone();
            states[i] = qs;
            let mut state = product_state(&states);
            self.apply_layers_from(&mut state, &self.params, 0);
            self.readout(&state)
        };

        for (i, &x) in input.iter().enumerate() {
            let a_ry = x.atan();
            let a_rz = (x * x).atan();

            let ry_plus = eval_with_qubit_state(i, encoded_single(a_ry + FRAC_PI_2, a_rz));
            let ry_minus = eval_with_qubit_state(i, encoded_single(a_ry - FRAC_PI_2, a_rz));
            let rz_plus = eval_with_qubit_state(i, encoded_single(a_ry, a_rz + FRAC_PI_2));
            let rz_minus = eval_with_qubit_state(i, encoded_single(a_ry, a_rz - FRAC_PI_2));

            let d_ry_dx = 1.0 / (1.0 + x * x);
            let d_rz_dx = 2.0 * x / (1.0 + x.powi(4));
            let mut acc = 0.0;
            for k in 0..NUM_READOUT {
                let d_ry = (ry_plus[k] - ry_minus[k]) / 2.0;
                let d_rz = (rz_plus[k] - rz_minus[k]) / 2.0;
                acc += upstream[k] * (d_ry * d_ry_dx + d_rz * d_rz_dx);
            }
            grad[i] = acc;
        }
        Ok(grad)
    }
}
