//! Shared test oracles: central finite differences and a dense full-unitary
//! evaluation of the variational circuit, kept independent of the simulator's
//! strided gate kernels.

#![allow(dead_code)]

use num_complex::Complex64 as C64;
use qpate::quantum::VqcBlock;
use qpate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(len: usize, span: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..len).map(|_| (rng.random::<f64>() * 2.0 - 1.0) * span).collect()
}

pub fn random_tensor(shape: &[usize], span: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let len = shape.iter().product();
    Tensor::from_vec(shape, random_vec(len, span, rng)).unwrap()
}

/// Central finite differences of a scalar function.
pub fn fd_grad(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let original = probe[i];
        probe[i] = original + h;
        let plus = f(&probe);
        probe[i] = original - h;
        let minus = f(&probe);
        probe[i] = original;
        grad[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// Asserts elementwise |a - b| <= rtol * max(|a|, |b|) + atol and returns the
/// worst relative deviation.
pub fn assert_grads_close(analytic: &[f64], numeric: &[f64], rtol: f64, atol: f64, what: &str) {
    assert_eq!(analytic.len(), numeric.len(), "{what}: length mismatch");
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let tol = rtol * a.abs().max(n.abs()) + atol;
        assert!(
            (a - n).abs() <= tol,
            "{what}[{i}]: analytic {a} vs numeric {n} (tol {tol})"
        );
    }
}

// ---------------------------------------------------------------------------
// Dense circuit oracle
// ---------------------------------------------------------------------------

type Mat = Vec<Vec<C64>>;

fn oracle_ry(theta: f64) -> [[C64; 2]; 2] {
    let (s, c) = (theta / 2.0).sin_cos();
    [
        [C64::new(c, 0.0), C64::new(-s, 0.0)],
        [C64::new(s, 0.0), C64::new(c, 0.0)],
    ]
}

fn oracle_rz(theta: f64) -> [[C64; 2]; 2] {
    let (s, c) = (theta / 2.0).sin_cos();
    [
        [C64::new(c, -s), C64::new(0.0, 0.0)],
        [C64::new(0.0, 0.0), C64::new(c, s)],
    ]
}

fn mat2_mul(a: &[[C64; 2]; 2], b: &[[C64; 2]; 2]) -> [[C64; 2]; 2] {
    let mut out = [[C64::new(0.0, 0.0); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

fn oracle_rot(phi: f64, theta: f64, omega: f64) -> [[C64; 2]; 2] {
    mat2_mul(&oracle_rz(omega), &mat2_mul(&oracle_ry(theta), &oracle_rz(phi)))
}

fn identity(dim: usize) -> Mat {
    let mut m = vec![vec![C64::new(0.0, 0.0); dim]; dim];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = C64::new(1.0, 0.0);
    }
    m
}

/// Embeds a single-qubit gate at `target` into the full 2^q unitary using the
/// little-endian bit layout (qubit 0 is the least significant index bit).
fn embed_single(gate: &[[C64; 2]; 2], target: usize, qubits: usize) -> Mat {
    let dim = 1 << qubits;
    let bit = 1 << target;
    let mut m = vec![vec![C64::new(0.0, 0.0); dim]; dim];
    for col in 0..dim {
        let cbit = usize::from(col & bit != 0);
        for rbit in 0..2 {
            let row = if rbit == 0 { col & !bit } else { col | bit };
            m[row][col] += gate[rbit][cbit];
        }
    }
    m
}

fn cnot_matrix(control: usize, target: usize, qubits: usize) -> Mat {
    let dim = 1 << qubits;
    let mut m = vec![vec![C64::new(0.0, 0.0); dim]; dim];
    for col in 0..dim {
        let row = if col & (1 << control) != 0 {
            col ^ (1 << target)
        } else {
            col
        };
        m[row][col] = C64::new(1.0, 0.0);
    }
    m
}

fn mat_mul(a: &Mat, b: &Mat) -> Mat {
    let dim = a.len();
    let mut out = vec![vec![C64::new(0.0, 0.0); dim]; dim];
    for i in 0..dim {
        for k in 0..dim {
            let av = a[i][k];
            if av.norm_sqr() == 0.0 {
                continue;
            }
            for j in 0..dim {
                out[i][j] += av * b[k][j];
            }
        }
    }
    out
}

/// Full-unitary evaluation of the circuit on |0..0>: multiplies every gate
/// matrix into one 2^q x 2^q chain and reads the Pauli-Z expectations of
/// qubits 0 and 1 from the resulting column.
pub fn dense_circuit_logits(block: &VqcBlock, input: &[f64]) -> [f64; 2] {
    let q = block.num_qubits();
    assert_eq!(input.len(), q);
    let mut chain = identity(1 << q);
    let mut push = |gate: Mat| {
        chain = mat_mul(&gate, &chain);
    };

    for (i, &x) in input.iter().enumerate() {
        push(embed_single(&oracle_ry(x.atan()), i, q));
    }
    for (i, &x) in input.iter().enumerate() {
        push(embed_single(&oracle_rz((x * x).atan()), i, q));
    }
    for layer in 0..block.num_layers() {
        for qubit in 0..q {
            let base = (layer * q + qubit) * 3;
            let p = block.params();
            push(embed_single(&oracle_rot(p[base], p[base + 1], p[base + 2]), qubit, q));
        }
        for qubit in 0..q {
            push(cnot_matrix(qubit, (qubit + 1) % q, q));
        }
    }

    // State = first column of the chained unitary.
    let dim = 1 << q;
    let mut expectations = [0.0; 2];
    for (k, e) in expectations.iter_mut().enumerate() {
        let bit = 1 << k;
        let mut acc = 0.0;
        for row in 0..dim {
            let p = chain[row][0].norm_sqr();
            acc += if row & bit == 0 { p } else { -p };
        }
        *e = acc;
    }
    expectations
}

// ---------------------------------------------------------------------------
// Per-seed gradient checks shared by the gradients and acceptance suites
// ---------------------------------------------------------------------------

use qpate::tensor::{
    cross_entropy, leaky_relu, leaky_relu_backward, maxpool2x2_backward, maxpool2x2_forward,
    BatchNorm2d, Conv2d, Dense,
};

pub const H: f64 = 1e-5;
pub const RTOL: f64 = 1e-5;
pub const ATOL: f64 = 1e-8;

/// Projection loss sum(out * r) turns a layer into a scalar function whose
/// analytic gradient is the backward pass evaluated at grad_out = r.
fn project(out: &Tensor, r: &[f64]) -> f64 {
    out.data().iter().zip(r).map(|(&o, &w)| o * w).sum()
}

pub fn check_conv_gradients(seed: u64, kernel: usize) {
    let mut r = rng(seed);
    let conv = Conv2d::new(2, 3, kernel, &mut r).unwrap();
    let input = random_tensor(&[2, 2, 6, 6], 1.0, &mut r);
    let proj = random_vec(2 * 3 * 6 * 6, 1.0, &mut r);

    let (out, cache) = conv.forward(&input).unwrap();
    let grad_out = Tensor::from_vec(out.shape(), proj.clone()).unwrap();
    let (grad_input, grads) = conv.backward(&cache, &grad_out).unwrap();

    let fd_input = fd_grad(
        |x| {
            let t = Tensor::from_vec(input.shape(), x.to_vec()).unwrap();
            project(&conv.forward(&t).unwrap().0, &proj)
        },
        input.data(),
        H,
    );
    assert_grads_close(grad_input.data(), &fd_input, RTOL, ATOL, "conv input");

    let fd_weight = fd_grad(
        |w| {
            let mut c = conv.clone();
            c.weight = Tensor::from_vec(conv.weight.shape(), w.to_vec()).unwrap();
            project(&c.forward(&input).unwrap().0, &proj)
        },
        conv.weight.data(),
        H,
    );
    assert_grads_close(grads.weight.data(), &fd_weight, RTOL, ATOL, "conv weight");

    let fd_bias = fd_grad(
        |b| {
            let mut c = conv.clone();
            c.bias = Tensor::from_vec(conv.bias.shape(), b.to_vec()).unwrap();
            project(&c.forward(&input).unwrap().0, &proj)
        },
        conv.bias.data(),
        H,
    );
    assert_grads_close(grads.bias.data(), &fd_bias, RTOL, ATOL, "conv bias");
}

pub fn check_batchnorm_gradients(seed: u64) {
    let mut r = rng(seed);
    let mut bn = BatchNorm2d::new(3);
    bn.gamma = random_tensor(&[3], 1.0, &mut r);
    bn.beta = random_tensor(&[3], 1.0, &mut r);
    let input = random_tensor(&[4, 3, 3, 3], 1.0, &mut r);
    let proj = random_vec(input.len(), 1.0, &mut r);

    let (out, cache) = bn.clone().forward_train(&input).unwrap();
    let grad_out = Tensor::from_vec(out.shape(), proj.clone()).unwrap();
    let (grad_input, grads) = bn.backward(&cache, &grad_out).unwrap();

    let fd_input = fd_grad(
        |x| {
            let t = Tensor::from_vec(input.shape(), x.to_vec()).unwrap();
            project(&bn.clone().forward_train(&t).unwrap().0, &proj)
        },
        input.data(),
        H,
    );
    // Batch statistics couple every element, so the constant floor is looser.
    assert_grads_close(grad_input.data(), &fd_input, 1e-5, 1e-6, "batchnorm input");

    let fd_gamma = fd_grad(
        |g| {
            let mut b = bn.clone();
            b.gamma = Tensor::from_vec(&[3], g.to_vec()).unwrap();
            project(&b.forward_train(&input).unwrap().0, &proj)
        },
        bn.gamma.data(),
        H,
    );
    assert_grads_close(grads.gamma.data(), &fd_gamma, 1e-5, 1e-6, "batchnorm gamma");

    let fd_beta = fd_grad(
        |b| {
            let mut m = bn.clone();
            m.beta = Tensor::from_vec(&[3], b.to_vec()).unwrap();
            project(&m.forward_train(&input).unwrap().0, &proj)
        },
        bn.beta.data(),
        H,
    );
    assert_grads_close(grads.beta.data(), &fd_beta, 1e-5, 1e-6, "batchnorm beta");
}

pub fn check_dense_gradients(seed: u64) {
    let mut r = rng(seed);
    let dense = Dense::new(7, 4, &mut r).unwrap();
    let input = random_tensor(&[3, 7], 1.0, &mut r);
    let proj = random_vec(3 * 4, 1.0, &mut r);

    let (out, cache) = dense.forward(&input).unwrap();
    let grad_out = Tensor::from_vec(out.shape(), proj.clone()).unwrap();
    let (grad_input, grads) = dense.backward(&cache, &grad_out).unwrap();

    let fd_input = fd_grad(
        |x| {
            let t = Tensor::from_vec(input.shape(), x.to_vec()).unwrap();
            project(&dense.forward(&t).unwrap().0, &proj)
        },
        input.data(),
        H,
    );
    assert_grads_close(grad_input.data(), &fd_input, RTOL, ATOL, "dense input");

    let fd_weight = fd_grad(
        |w| {
            let mut d = dense.clone();
            d.weight = Tensor::from_vec(dense.weight.shape(), w.to_vec()).unwrap();
            project(&d.forward(&input).unwrap().0, &proj)
        },
        dense.weight.data(),
        H,
    );
    assert_grads_close(grads.weight.data(), &fd_weight, RTOL, ATOL, "dense weight");

    let fd_bias = fd_grad(
        |b| {
            let mut d = dense.clone();
            d.bias = Tensor::from_vec(dense.bias.shape(), b.to_vec()).unwrap();
            project(&d.forward(&input).unwrap().0, &proj)
        },
        dense.bias.data(),
        H,
    );
    assert_grads_close(grads.bias.data(), &fd_bias, RTOL, ATOL, "dense bias");
}

pub fn check_activation_and_pool_gradients(seed: u64) {
    let mut r = rng(seed);
    let input = random_tensor(&[2, 2, 4, 4], 1.0, &mut r);
    let proj = random_vec(input.len(), 1.0, &mut r);
    let grad_out = Tensor::from_vec(input.shape(), proj.clone()).unwrap();

    for slope in [0.0, 0.01] {
        let analytic = leaky_relu_backward(&input, &grad_out, slope);
        let fd = fd_grad(
            |x| {
                let t = Tensor::from_vec(input.shape(), x.to_vec()).unwrap();
                project(&leaky_relu(&t, slope), &proj)
            },
            input.data(),
            H,
        );
        assert_grads_close(analytic.data(), &fd, RTOL, ATOL, "leaky relu");
    }

    let (out, cache) = maxpool2x2_forward(&input).unwrap();
    let pproj = random_vec(out.len(), 1.0, &mut r);
    let pgrad = Tensor::from_vec(out.shape(), pproj.clone()).unwrap();
    let analytic = maxpool2x2_backward(&cache, &pgrad).unwrap();
    let fd = fd_grad(
        |x| {
            let t = Tensor::from_vec(input.shape(), x.to_vec()).unwrap();
            project(&maxpool2x2_forward(&t).unwrap().0, &pproj)
        },
        input.data(),
        H,
    );
    assert_grads_close(analytic.data(), &fd, RTOL, ATOL, "maxpool");
}

pub fn check_cross_entropy_gradient(seed: u64) {
    let mut r = rng(seed);
    let logits = random_tensor(&[4, 2], 2.0, &mut r);
    let labels = vec![0, 1, 1, 0];
    let (_, grad) = cross_entropy(&logits, &labels).unwrap();
    let fd = fd_grad(
        |x| {
            let t = Tensor::from_vec(logits.shape(), x.to_vec()).unwrap();
            cross_entropy(&t, &labels).unwrap().0
        },
        logits.data(),
        H,
    );
    assert_grads_close(grad.data(), &fd, RTOL, ATOL, "cross entropy");
}

/// Parameter-shift gradient of the full block against finite differences.
pub fn check_vqc_param_gradient(seed: u64, num_qubits: usize, num_layers: usize) {
    let mut r = rng(seed);
    let block = VqcBlock::init_random(num_qubits, num_layers, &mut r);
    let input = random_vec(num_qubits, 2.0, &mut r);
    let upstream = [
        r.random::<f64>() * 2.0 - 1.0,
        r.random::<f64>() * 2.0 - 1.0,
    ];
    let analytic = block.parameter_shift_grad(&input, &upstream).unwrap();
    let fd = fd_grad(
        |p| {
            let b = VqcBlock::new(num_qubits, num_layers, p.to_vec()).unwrap();
            let logits = b.forward(&input).unwrap();
            upstream[0] * logits[0] + upstream[1] * logits[1]
        },
        block.params(),
        1e-6,
    );
    assert_grads_close(&analytic, &fd, 1e-5, 1e-8, "vqc parameters");
}

pub fn check_vqc_input_gradient(seed: u64, num_qubits: usize) {
    let mut r = rng(seed);
    let block = VqcBlock::init_random(num_qubits, 2, &mut r);
    let input = random_vec(num_qubits, 2.0, &mut r);
    let upstream = [
        r.random::<f64>() * 2.0 - 1.0,
        r.random::<f64>() * 2.0 - 1.0,
    ];
    let analytic = block.input_gradient(&input, &upstream).unwrap();
    let fd = fd_grad(
        |x| {
            let logits = block.forward(x).unwrap();
            upstream[0] * logits[0] + upstream[1] * logits[1]
        },
        &input,
        1e-6,
    );
    assert_grads_close(&analytic, &fd, 1e-5, 1e-8, "vqc input");
}

