//! The two classifier backends behind a common train/predict contract.
//!
//! Classical: four convolution blocks (two 3x3 and two 1x1, each with batch
//! normalization and ReLU), a 512-dimensional latent layer, and a dense head.
//! Quantum: two 3x3 convolution blocks with leaky ReLU, the 512-dimensional
//! latent layer, a 512 -> 10 reduction, and a 10-qubit two-layer variational
//! circuit whose two Pauli-Z readouts are the class logits.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::data::ImageRecord;
use crate::error::{Error, Result};
use crate::quantum::VqcBlock;
use crate::tensor::{
    cross_entropy, leaky_relu, leaky_relu_backward, maxpool2x2_backward, maxpool2x2_forward,
    adamw_step_slice, AdamWConfig, AdamWState, BatchNorm2d, BatchNormCache, Conv2d, Conv2dCache,
    Dense, DenseCache, MaxPoolCache, Tensor, LEAKY_SLOPE,
};

pub const IMAGE_SIDE: usize = 32;
pub const NUM_CLASSES: usize = 2;
const FLAT_DIM: usize = 32 * 8 * 8;
const LATENT_DIM: usize = 512;
const VQC_QUBITS: usize = 10;
const VQC_LAYERS: usize = 2;

/// Which classifier architecture a model uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Classical,
    Quantum,
}

impl BackendKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            BackendKind::Classical => "classical",
            BackendKind::Quantum => "quantum",
        }
    }
}

impl std::str::FromStr for BackendKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classical" => Ok(BackendKind::Classical),
            "quantum" => Ok(BackendKind::Quantum),
            other => Err(Error::Usage(format!("unknown backend '{other}'"))),
        }
    }
}

/// Shared training hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            learning_rate: 0.001,
            weight_decay: 1e-4,
            batch_size: 64,
            epochs: 20,
        }
    }
}

impl Hyperparams {
    fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }
}

struct ConvBlock {
    conv: Conv2d,
    bn: BatchNorm2d,
}

impl ConvBlock {
    fn new(in_ch: usize, out_ch: usize, kernel: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(ConvBlock {
            conv: Conv2d::new(in_ch, out_ch, kernel, rng)?,
            bn: BatchNorm2d::new(out_ch),
        })
    }
}

struct BlockCache {
    conv: Conv2dCache,
    bn: BatchNormCache,
    bn_out: Tensor,
}

struct BlockGrads {
    weight: Tensor,
    bias: Tensor,
    gamma: Tensor,
    beta: Tensor,
}

impl ConvBlock {
    fn forward_train(&mut self, input: &Tensor, slope: f64) -> Result<(Tensor, BlockCache)> {
        let (c_out, conv_cache) = self.conv.forward(input)?;
        let (bn_out, bn_cache) = self.bn.forward_train(&c_out)?;
        let act = leaky_relu(&bn_out, slope);
        Ok((
            act,
            BlockCache {
                conv: conv_cache,
                bn: bn_cache,
                bn_out,
            },
        ))
    }

    fn forward_eval(&self, input: &Tensor, slope: f64) -> Result<Tensor> {
        let (c_out, _) = self.conv.forward(input)?;
        let bn_out = self.bn.forward_eval(&c_out)?;
        Ok(leaky_relu(&bn_out, slope))
    }

    fn backward(
        &self,
        cache: &BlockCache,
        grad_act: &Tensor,
        slope: f64,
    ) -> Result<(Tensor, BlockGrads)> {
        let grad_bn = leaky_relu_backward(&cache.bn_out, grad_act, slope);
        let (grad_conv_out, bn_grads) = self.bn.backward(&cache.bn, &grad_bn)?;
        let (grad_input, conv_grads) = self.conv.backward(&cache.conv, &grad_conv_out)?;
        Ok((
            grad_input,
            BlockGrads {
                weight: conv_grads.weight,
                bias: conv_grads.bias,
                gamma: bn_grads.gamma,
                beta: bn_grads.beta,
            },
        ))
    }
}

struct BlockOpt {
    weight: AdamWState,
    bias: AdamWState,
    gamma: AdamWState,
    beta: AdamWState,
}

impl BlockOpt {
    fn new(block: &ConvBlock) -> Self {
        BlockOpt {
            weight: AdamWState::new(block.conv.weight.len()),
            bias: AdamWState::new(block.conv.bias.len()),
            gamma: AdamWState::new(block.bn.gamma.len()),
            beta: AdamWState::new(block.bn.beta.len()),
        }
    }

    fn apply(
        &mut self,
        block: &mut ConvBlock,
        grads: &BlockGrads,
        cfg: &AdamWConfig,
        step: u64,
    ) {
        adamw_step_slice(block.conv.weight.data_mut(), grads.weight.data(), &mut self.weight, cfg, step);
        adamw_step_slice(block.conv.bias.data_mut(), grads.bias.data(), &mut self.bias, cfg, step);
        adamw_step_slice(block.bn.gamma.data_mut(), grads.gamma.data(), &mut self.gamma, cfg, step);
        adamw_step_slice(block.bn.beta.data_mut(), grads.beta.data(), &mut self.beta, cfg, step);
    }
}

// ---------------------------------------------------------------------------
// Classical backend
// ---------------------------------------------------------------------------

pub struct ClassicalNet {
    b1: ConvBlock,
    b2: ConvBlock,
    b3: ConvBlock,
    b4: ConvBlock,
    latent: Dense,
    head: Dense,
}

struct ClassicalCache {
    b1: BlockCache,
    pool1: MaxPoolCache,
    b2: BlockCache,
    pool2: MaxPoolCache,
    b3: BlockCache,
    b4: BlockCache,
    latent: DenseCache,
    latent_out: Tensor,
    head: DenseCache,
}

struct ClassicalGrads {
    b1: BlockGrads,
    b2: BlockGrads,
    b3: BlockGrads,
    b4: BlockGrads,
    latent_w: Tensor,
    latent_b: Tensor,
    head_w: Tensor,
    head_b: Tensor,
}

struct ClassicalOpt {
    b1: BlockOpt,
    b2: BlockOpt,
    b3: BlockOpt,
    b4: BlockOpt,
    latent_w: AdamWState,
    latent_b: AdamWState,
    head_w: AdamWState,
    head_b: AdamWState,
}

impl ClassicalNet {
    fn new(rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(ClassicalNet {
            b1: ConvBlock::new(1, 16, 3, rng)?,
            b2: ConvBlock::new(16, 32, 3, rng)?,
            b3: ConvBlock::new(32, 32, 1, rng)?,
            b4: ConvBlock::new(32, 32, 1, rng)?,
            latent: Dense::new(FLAT_DIM, LATENT_DIM, rng)?,
            head: Dense::new(LATENT_DIM, NUM_CLASSES, rng)?,
        })
    }

    fn forward_train(&mut self, input: &Tensor) -> Result<(Tensor, ClassicalCache)> {
        let n = input.shape()[0];
        let (a1, b1) = self.b1.forward_train(input, 0.0)?;
        let (p1, pool1) = maxpool2x2_forward(&a1)?;
        let (a2, b2) = self.b2.forward_train(&p1, 0.0)?;
        let (p2, pool2) = maxpool2x2_forward(&a2)?;
        let (a3, b3) = self.b3.forward_train(&p2, 0.0)?;
        let (a4, b4) = self.b4.forward_train(&a3, 0.0)?;
        let flat = a4.reshape(&[n, FLAT_DIM])?;
        let (lat_pre, latent) = self.latent.forward(&flat)?;
        let lat_act = leaky_relu(&lat_pre, 0.0);
        let (logits, head) = self.head.forward(&lat_act)?;
        Ok((
            logits,
            ClassicalCache {
                b1,
                pool1,
                b2,
                pool2,
                b3,
                b4,
                latent,
                latent_out: lat_pre,
                head,
            },
        ))
    }

    fn forward_eval(&self, input: &Tensor) -> Result<Tensor> {
        let n = input.shape()[0];
        let a1 = self.b1.forward_eval(input, 0.0)?;
        let (p1, _) = maxpool2x2_forward(&a1)?;
        let a2 = self.b2.forward_eval(&p1, 0.0)?;
        let (p2, _) = maxpool2x2_forward(&a2)?;
        let a3 = self.b3.forward_eval(&p2, 0.0)?;
        let a4 = self.b4.forward_eval(&a3, 0.0)?;
        let flat = a4.reshape(&[n, FLAT_DIM])?;
        let (lat_pre, _) = self.latent.forward(&flat)?;
        let lat_act = leaky_relu(&lat_pre, 0.0);
        let (logits, _) = self.head.forward(&lat_act)?;
        Ok(logits)
    }

    fn backward(&self, cache: &ClassicalCache, grad_logits: &Tensor) -> Result<ClassicalGrads> {
        let n = grad_logits.shape()[0];
        let (grad_lat_act, head_grads) = self.head.backward(&cache.head, grad_logits)?;
        let grad_lat_pre = leaky_relu_backward(&cache.latent_out, &grad_lat_act, 0.0);
        let (grad_flat, latent_grads) = self.latent.backward(&cache.latent, &grad_lat_pre)?;
        let grad_a4 = grad_flat.reshape(&[n, 32, 8, 8])?;
        let (grad_a3, b4) = self.b4.backward(&cache.b4, &grad_a4, 0.0)?;
        let (grad_p2, b3) = self.b3.backward(&cache.b3, &grad_a3, 0.0)?;
        let grad_a2 = maxpool2x2_backward(&cache.pool2, &grad_p2)?;
        let (grad_p1, b2) = self.b2.backward(&cache.b2, &grad_a2, 0.0)?;
        let grad_a1 = maxpool2x2_backward(&cache.pool1, &grad_p1)?;
        let (_, b1) = self.b1.backward(&cache.b1, &grad_a1, 0.0)?;
        Ok(ClassicalGrads {
            b1,
            b2,
            b3,
            b4,
            latent_w: latent_grads.weight,
            latent_b: latent_grads.bias,
            head_w: head_grads.weight,
            head_b: head_grads.bias,
        })
    }
}

// ---------------------------------------------------------------------------
// Quantum backend
// ---------------------------------------------------------------------------

pub struct QuantumNet {
    b1: ConvBlock,
    b2: ConvBlock,
    latent: Dense,
    reduce: Dense,
    vqc: VqcBlock,
}

struct QuantumCache {
    b1: BlockCache,
    pool1: MaxPoolCache,
    b2: BlockCache,
    pool2: MaxPoolCache,
    latent: DenseCache,
    latent_out: Tensor,
    reduce: DenseCache,
    reduce_out: Tensor,
}

struct QuantumGrads {
    b1: BlockGrads,
    b2: BlockGrads,
    latent_w: Tensor,
    latent_b: Tensor,
    reduce_w: Tensor,
    reduce_b: Tensor,
    vqc: Vec<f64>,
}

struct QuantumOpt {
    b1: BlockOpt,
    b2: BlockOpt,
    latent_w: AdamWState,
    latent_b: AdamWState,
    reduce_w: AdamWState,
    reduce_b: AdamWState,
    vqc: AdamWState,
}

impl QuantumNet {
    fn new(rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(QuantumNet {
            b1: ConvBlock::new(1, 16, 3, rng)?,
            b2: ConvBlock::new(16, 32, 3, rng)?,
            latent: Dense::new(FLAT_DIM, LATENT_DIM, rng)?,
            reduce: Dense::new(LATENT_DIM, VQC_QUBITS, rng)?,
            vqc: VqcBlock::init_random(VQC_QUBITS, VQC_LAYERS, rng),
        })
    }

    fn embed_train(&mut self, input: &Tensor) -> Result<(Tensor, QuantumCache)> {
        let n = input.shape()[0];
        let (a1, b1) = self.b1.forward_train(input, LEAKY_SLOPE)?;
        let (p1, pool1) = maxpool2x2_forward(&a1)?;
        let (a2, b2) = self.b2.forward_train(&p1, LEAKY_SLOPE)?;
        let (p2, pool2) = maxpool2x2_forward(&a2)?;
        let flat = p2.reshape(&[n, FLAT_DIM])?;
        let (lat_pre, latent) = self.latent.forward(&flat)?;
        let lat_act = leaky_relu(&lat_pre, LEAKY_SLOPE);
        let (features, reduce) = self.reduce.forward(&lat_act)?;
        Ok((
            features.clone(),
            QuantumCache {
                b1,
                pool1,
                b2,
                pool2,
                latent,
                latent_out: lat_pre,
                reduce,
                reduce_out: features,
            },
        ))
    }

    fn vqc_logits(&self, features: &Tensor) -> Result<Tensor> {
        let n = features.shape()[0];
        let rows: Vec<[f64; 2]> = (0..n)
            .into_par_iter()
            .map(|s| {
                let row = &features.data()[s * VQC_QUBITS..(s + 1) * VQC_QUBITS];
                self.vqc.forward(row)
            })
            .collect::<Result<_>>()?;
        let mut logits = Tensor::zeros(&[n, NUM_CLASSES]);
        for (s, row) in rows.iter().enumerate() {
            logits.data_mut()[s * NUM_CLASSES] = row[0];
            logits.data_mut()[s * NUM_CLASSES + 1] = row[1];
        }
        Ok(logits)
    }

    fn forward_train(&mut self, input: &Tensor) -> Result<(Tensor, QuantumCache)> {
        let (features, cache) = self.embed_train(input)?;
        let logits = self.vqc_logits(&features)?;
        Ok((logits, cache))
    }

    fn forward_eval(&self, input: &Tensor) -> Result<Tensor> {
        let n = input.shape()[0];
        let a1 = self.b1.forward_eval(input, LEAKY_SLOPE)?;
        let (p1, _) = maxpool2x2_forward(&a1)?;
        let a2 = self.b2.forward_eval(&p1, LEAKY_SLOPE)?;
        let (p2, _) = maxpool2x2_forward(&a2)?;
        let flat = p2.reshape(&[n, FLAT_DIM])?;
        let (lat_pre, _) = self.latent.forward(&flat)?;
        let lat_act = leaky_relu(&lat_pre, LEAKY_SLOPE);
        let (features, _) = self.reduce.forward(&lat_act)?;
        self.vqc_logits(&features)
    }

    fn backward(&self, cache: &QuantumCache, grad_logits: &Tensor) -> Result<QuantumGrads> {
        let n = grad_logits.shape()[0];

        // Per-sample shift-rule gradients, kept in submission order so the
        // sequential reduction below is deterministic.
        let per_sample: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
            .into_par_iter()
            .map(|s| {
                let row = &cache.reduce_out.data()[s * VQC_QUBITS..(s + 1) * VQC_QUBITS];
                let upstream = [
                    grad_logits.data()[s * NUM_CLASSES],
                    grad_logits.data()[s * NUM_CLASSES + 1],
                ];
                let input_grad = self.vqc.input_gradient(row, &upstream)?;
                let param_grad = self.vqc.parameter_shift_grad(row, &upstream)?;
                Ok((input_grad, param_grad))
            })
            .collect::<Result<_>>()?;

        let mut vqc_grad = vec![0.0; self.vqc.num_params()];
        let mut grad_features = Tensor::zeros(&[n, VQC_QUBITS]);
        for (s, (input_grad, param_grad)) in per_sample.iter().enumerate() {
            for (acc, g) in vqc_grad.iter_mut().zip(param_grad) {
                *acc += g;
            }
            grad_features.data_mut()[s * VQC_QUBITS..(s + 1) * VQC_QUBITS]
                .copy_from_slice(input_grad);
        }

        let (grad_lat_act, reduce_grads) = self.reduce.backward(&cache.reduce, &grad_features)?;
        let grad_lat_pre = leaky_relu_backward(&cache.latent_out, &grad_lat_act, LEAKY_SLOPE);
        let (grad_flat, latent_grads) = self.latent.backward(&cache.latent, &grad_lat_pre)?;
        let grad_p2 = grad_flat.reshape(&[n, 32, 8, 8])?;
        let grad_a2 = maxpool2x2_backward(&cache.pool2, &grad_p2)?;
        let (grad_p1, b2) = self.b2.backward(&cache.b2, &grad_a2, LEAKY_SLOPE)?;
        let grad_a1 = maxpool2x2_backward(&cache.pool1, &grad_p1)?;
        let (_, b1) = self.b1.backward(&cache.b1, &grad_a1, LEAKY_SLOPE)?;

        Ok(QuantumGrads {
            b1,
            b2,
            latent_w: latent_grads.weight,
            latent_b: latent_grads.bias,
            reduce_w: reduce_grads.weight,
            reduce_b: reduce_grads.bias,
            vqc: vqc_grad,
        })
    }
}

// ---------------------------------------------------------------------------
// Unified model
// ---------------------------------------------------------------------------

enum Net {
    Classical(Box<ClassicalNet>),
    Quantum(Box<QuantumNet>),
}

enum OptState {
    Classical(Box<ClassicalOpt>),
    Quantum(Box<QuantumOpt>),
}

/// A classifier with its optimizer state and step counter. Both backends
/// expose the same train/predict contract.
pub struct Model {
    kind: BackendKind,
    net: Net,
    opt: OptState,
    step: u64,
}

impl Model {
    /// Fresh model with seeded He-uniform initialization.
    pub fn new(kind: BackendKind, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (net, opt) = match kind {
            BackendKind::Classical => {
                let net = ClassicalNet::new(&mut rng)?;
                let opt = ClassicalOpt {
                    b1: BlockOpt::new(&net.b1),
                    b2: BlockOpt::new(&net.b2),
                    b3: BlockOpt::new(&net.b3),
                    b4: BlockOpt::new(&net.b4),
                    latent_w: AdamWState::new(net.latent.weight.len()),
                    latent_b: AdamWState::new(net.latent.bias.len()),
                    head_w: AdamWState::new(net.head.weight.len()),
                    head_b: AdamWState::new(net.head.bias.len()),
                };
                (Net::Classical(Box::new(net)), OptState::Classical(Box::new(opt)))
            }
            BackendKind::Quantum => {
                let net = QuantumNet::new(&mut rng)?;
                let opt = QuantumOpt {
                    b1: BlockOpt::new(&net.b1),
                    b2: BlockOpt::new(&net.b2),
                    latent_w: AdamWState::new(net.latent.weight.len()),
                    latent_b: AdamWState::new(net.latent.bias.len()),
                    reduce_w: AdamWState::new(net.reduce.weight.len()),
                    reduce_b: AdamWState::new(net.reduce.bias.len()),
                    vqc: AdamWState::new(net.vqc.num_params()),
                };
                (Net::Quantum(Box::new(net)), OptState::Quantum(Box::new(opt)))
            }
        };
        Ok(Model {
            kind,
            net,
            opt,
            step: 0,
        })
    }

    pub fn kind(&self) -> BackendKind {
        self.kind
    }

    /// Logits on a batch using inference-mode normalization.
    pub fn logits(&self, batch: &Tensor) -> Result<Tensor> {
        match &self.net {
            Net::Classical(net) => net.forward_eval(batch),
            Net::Quantum(net) => net.forward_eval(batch),
        }
    }

    /// Argmax class prediction per record.
    pub fn predict(&self, records: &[ImageRecord]) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(records.len());
        for chunk in records.chunks(256) {
            let (batch, _) = batch_tensor(chunk);
            let logits = self.logits(&batch)?;
            for s in 0..chunk.len() {
                let row = &logits.data()[s * NUM_CLASSES..(s + 1) * NUM_CLASSES];
                let pred = if row[1] > row[0] { 1 } else { 0 };
                out.push(pred);
            }
        }
        Ok(out)
    }

    /// One optimizer step over a prepared batch; returns the batch loss.
    pub fn train_batch(
        &mut self,
        batch: &Tensor,
        labels: &[usize],
        hyper: &Hyperparams,
    ) -> Result<f64> {
        self.step += 1;
        let cfg = hyper.adamw();
        let step = self.step;
        match (&mut self.net, &mut self.opt) {
            (Net::Classical(net), OptState::Classical(opt)) => {
                let (logits, cache) = net.forward_train(batch)?;
                let (loss, grad_logits) = cross_entropy(&logits, labels)?;
                let grads = net.backward(&cache, &grad_logits)?;
                opt.b1.apply(&mut net.b1, &grads.b1, &cfg, step);
                opt.b2.apply(&mut net.b2, &grads.b2, &cfg, step);
                opt.b3.apply(&mut net.b3, &grads.b3, &cfg, step);
                opt.b4.apply(&mut net.b4, &grads.b4, &cfg, step);
                adamw_step_slice(net.latent.weight.data_mut(), grads.latent_w.data(), &mut opt.latent_w, &cfg, step);
                adamw_step_slice(net.latent.bias.data_mut(), grads.latent_b.data(), &mut opt.latent_b, &cfg, step);
                adamw_step_slice(net.head.weight.data_mut(), grads.head_w.data(), &mut opt.head_w, &cfg, step);
                adamw_step_slice(net.head.bias.data_mut(), grads.head_b.data(), &mut opt.head_b, &cfg, step);
                Ok(loss)
            }
            (Net::Quantum(net), OptState::Quantum(opt)) => {
                let (logits, cache) = net.forward_train(batch)?;
                let (loss, grad_logits) = cross_entropy(&logits, labels)?;
                let grads = net.backward(&cache, &grad_logits)?;
                opt.b1.apply(&mut net.b1, &grads.b1, &cfg, step);
                opt.b2.apply(&mut net.b2, &grads.b2, &cfg, step);
                adamw_step_slice(net.latent.weight.data_mut(), grads.latent_w.data(), &mut opt.latent_w, &cfg, step);
                adamw_step_slice(net.latent.bias.data_mut(), grads.latent_b.data(), &mut opt.latent_b, &cfg, step);
                adamw_step_slice(net.reduce.weight.data_mut(), grads.reduce_w.data(), &mut opt.reduce_w, &cfg, step);
                adamw_step_slice(net.reduce.bias.data_mut(), grads.reduce_b.data(), &mut opt.reduce_b, &cfg, step);
                adamw_step_slice(net.vqc.params_mut(), &grads.vqc, &mut opt.vqc, &cfg, step);
                Ok(loss)
            }
            _ => unreachable!("net and optimizer state are constructed together"),
        }
    }

    /// Standard supervised training: seeded shuffling, fixed-size minibatches
    /// (a trailing batch of one is dropped because batch normalization needs
    /// at least two rows), and a divergence check per epoch.
    pub fn train(
        &mut self,
        records: &[ImageRecord],
        labels: &[usize],
        hyper: &Hyperparams,
        seed: u64,
    ) -> Result<Vec<f64>> {
        if records.is_empty() {
            return Err(Error::Usage("training set is empty".into()));
        }
        if records.len() != labels.len() {
            return Err(Error::Usage(format!(
                "{} labels for {} training records",
                labels.len(),
                records.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..records.len()).collect();
        let mut losses = Vec::with_capacity(hyper.epochs);
        for epoch in 0..hyper.epochs {
            crate::data::shuffle(&mut order, &mut rng);
            let mut epoch_loss = 0.0;
            let mut batches = 0usize;
            for chunk in order.chunks(hyper.batch_size.max(1)) {
                if chunk.len() < 2 {
                    continue;
                }
                let subset: Vec<ImageRecord> =
                    chunk.iter().map(|&i| records[i].clone()).collect();
                let (batch, _) = batch_tensor(&subset);
                let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
                let loss = self.train_batch(&batch, &batch_labels, hyper)?;
                if !loss.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        reason: format!("batch loss is {loss}"),
                    });
                }
                epoch_loss += loss;
                batches += 1;
            }
            losses.push(if batches > 0 { epoch_loss / batches as f64 } else { 0.0 });
        }
        Ok(losses)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let checkpoint = self.to_checkpoint();
        let json = serde_json::to_string_pretty(&checkpoint)
            .map_err(|e| Error::Format(format!("checkpoint serialization failed: {e}")))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let json = std::fs::read_to_string(path)?;
        let checkpoint: Checkpoint = serde_json::from_str(&json)
            .map_err(|e| Error::Format(format!("checkpoint parse failed: {e}")))?;
        Model::from_checkpoint(checkpoint)
    }

    fn to_checkpoint(&self) -> Checkpoint {
        let mut tensors = Vec::new();
        let mut push = |name: &str, t: &Tensor| {
            tensors.push(NamedTensor {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            });
        };
        let mut vqc = None;
        match &self.net {
            Net::Classical(net) => {
                for (prefix, block) in [
                    ("b1", &net.b1),
                    ("b2", &net.b2),
                    ("b3", &net.b3),
                    ("b4", &net.b4),
                ] {
                    push_block(&mut push, prefix, block);
                }
                push("latent.weight", &net.latent.weight);
                push("latent.bias", &net.latent.bias);
                push("head.weight", &net.head.weight);
                push("head.bias", &net.head.bias);
            }
            Net::Quantum(net) => {
                for (prefix, block) in [("b1", &net.b1), ("b2", &net.b2)] {
                    push_block(&mut push, prefix, block);
                }
                push("latent.weight", &net.latent.weight);
                push("latent.bias", &net.latent.bias);
                push("reduce.weight", &net.reduce.weight);
                push("reduce.bias", &net.reduce.bias);
                vqc = Some(VqcCheckpoint {
                    num_qubits: net.vqc.num_qubits(),
                    num_layers: net.vqc.num_layers(),
                    params: net.vqc.params().to_vec(),
                });
            }
        }
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: 1,
            backend: self.kind,
            tensors,
            vqc,
        }
    }

    fn from_checkpoint(cp: Checkpoint) -> Result<Self> {
        if cp.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!(
                "not a model checkpoint (format marker '{}')",
                cp.format
            )));
        }
        let mut model = Model::new(cp.backend, 0)?;
        let mut lookup = std::collections::HashMap::new();
        for t in cp.tensors {
            lookup.insert(t.name.clone(), t);
        }
        let mut load = |name: &str, dst: &mut Tensor| -> Result<()> {
            let t = lookup
                .get(name)
                .ok_or_else(|| Error::Format(format!("checkpoint is missing tensor '{name}'")))?;
            if t.shape != dst.shape() {
                return Err(Error::Format(format!(
                    "tensor '{name}' has shape {:?}, expected {:?}",
                    t.shape,
                    dst.shape()
                )));
            }
            dst.data_mut().copy_from_slice(&t.data);
            Ok(())
        };
        match &mut model.net {
            Net::Classical(net) => {
                for (prefix, block) in [
                    ("b1", &mut net.b1),
                    ("b2", &mut net.b2),
                    ("b3", &mut net.b3),
                    ("b4", &mut net.b4),
                ] {
                    load_block(&mut load, prefix, block)?;
                }
                load("latent.weight", &mut net.latent.weight)?;
                load("latent.bias", &mut net.latent.bias)?;
                load("head.weight", &mut net.head.weight)?;
                load("head.bias", &mut net.head.bias)?;
            }
            Net::Quantum(net) => {
                for (prefix, block) in [("b1", &mut net.b1), ("b2", &mut net.b2)] {
                    load_block(&mut load, prefix, block)?;
                }
                load("latent.weight", &mut net.latent.weight)?;
                load("latent.bias", &mut net.latent.bias)?;
                load("reduce.weight", &mut net.reduce.weight)?;
                load("reduce.bias", &mut net.reduce.bias)?;
                let vqc = cp
                    .vqc
                    .ok_or_else(|| Error::Format("checkpoint is missing circuit parameters".into()))?;
                net.vqc = VqcBlock::new(vqc.num_qubits, vqc.num_layers, vqc.params)?;
            }
        }
        Ok(model)
    }
}

fn push_block(push: &mut impl FnMut(&str, &Tensor), prefix: &str, block: &ConvBlock) {
    push(&format!("{prefix}.conv.weight"), &block.conv.weight);
    push(&format!("{prefix}.conv.bias"), &block.conv.bias);
    push(&format!("{prefix}.bn.gamma"), &block.bn.gamma);
    push(&format!("{prefix}.bn.beta"), &block.bn.beta);
    push(&format!("{prefix}.bn.running_mean"), &block.bn.running_mean);
    push(&format!("{prefix}.bn.running_var"), &block.bn.running_var);
}

fn load_block(
    load: &mut impl FnMut(&str, &mut Tensor) -> Result<()>,
    prefix: &str,
    block: &mut ConvBlock,
) -> Result<()> {
    load(&format!("{prefix}.conv.weight"), &mut block.conv.weight)?;
    load(&format!("{prefix}.conv.bias"), &mut block.conv.bias)?;
    load(&format!("{prefix}.bn.gamma"), &mut block.bn.gamma)?;
    load(&format!("{prefix}.bn.beta"), &mut block.bn.beta)?;
    load(&format!("{prefix}.bn.running_mean"), &mut block.bn.running_mean)?;
    load(&format!("{prefix}.bn.running_var"), &mut block.bn.running_var)?;
    Ok(())
}

const CHECKPOINT_FORMAT: &str = "qpate-checkpoint";

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    backend: BackendKind,
    tensors: Vec<NamedTensor>,
    vqc: Option<VqcCheckpoint>,
}

#[derive(Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct VqcCheckpoint {
    num_qubits: usize,
    num_layers: usize,
    params: Vec<f64>,
}

/// Stacks records into an [N, 1, 32, 32] batch plus the label vector.
pub fn batch_tensor(records: &[ImageRecord]) -> (Tensor, Vec<usize>) {
    let n = records.len();
    let mut data = Vec::with_capacity(n * IMAGE_SIDE * IMAGE_SIDE);
    let mut labels = Vec::with_capacity(n);
    for r in records {
        data.extend_from_slice(&r.pixels);
        labels.push(r.label as usize);
    }
    (
        Tensor::from_vec(&[n, 1, IMAGE_SIDE, IMAGE_SIDE], data).expect("records are 32x32"),
        labels,
    )
}
