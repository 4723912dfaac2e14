//! Differential-privacy mechanisms: seeded Laplace noise, the noisy-argmax
//! vote aggregator, and a Gaussian gradient sanitizer kept as a comparison
//! baseline. Privacy composition lives in the accountant submodule.

mod accountant;

pub use accountant::{solve_gamma, PrivacyLedger, MAX_MOMENT_ORDER};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Seeded Laplace noise stream with location 0 and scale `1/gamma`.
///
/// `gamma = f64::INFINITY` is the no-noise limit: every sample is exactly 0.
#[derive(Debug, Clone)]
pub struct LaplaceNoise {
    gamma: f64,
    rng: ChaCha8Rng,
}

impl LaplaceNoise {
    pub fn new(gamma: f64, seed: u64) -> Result<Self> {
        if !(gamma > 0.0) {
            return Err(Error::Usage(format!(
                "laplace privacy parameter must be positive, got {gamma}"
            )));
        }
        Ok(LaplaceNoise {
            gamma,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn scale(&self) -> f64 {
        1.0 / self.gamma
    }

    /// Inverse-CDF sample: u uniform in (-1/2, 1/2), x = -b sign(u) ln(1-2|u|),
    /// with |u| clamped one ulp short of 1/2 so the tails stay finite.
    pub fn sample(&mut self) -> f64 {
        let u: f64 = self.rng.random::<f64>() - 0.5;
        laplace_inverse_cdf(u, self.gamma)
    }
}

/// Maps a uniform draw in [-1/2, 1/2] to a Laplace(0, 1/gamma) value.
fn laplace_inverse_cdf(u: f64, gamma: f64) -> f64 {
    let mag = u.abs().min(0.5 - f64::EPSILON / 4.0);
    let sign = if u < 0.0 { -1.0 } else { 1.0 };
    -(1.0 / gamma) * sign * (1.0 - 2.0 * mag).ln()
}

/// Per-label teacher vote counts; the total equals the teacher count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoteHistogram {
    counts: Vec<u32>,
}

impl VoteHistogram {
    pub fn new(counts: Vec<u32>) -> Self {
        VoteHistogram { counts }
    }

    pub fn from_labels(labels: &[usize], num_classes: usize) -> Result<Self> {
        let mut counts = vec![0u32; num_classes];
        for &l in labels {
            if l >= num_classes {
                return Err(Error::Usage(format!(
                    "vote label {l} out of range for {num_classes} classes"
                )));
            }
            counts[l] += 1;
        }
        Ok(VoteHistogram { counts })
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn num_teachers(&self) -> u32 {
        self.counts.iter().sum()
    }
}

/// Index of the maximal count after adding independent Laplace noise per
/// label. Ties break toward the lowest index, which matters only in the
/// measure-zero noiseless path.
pub fn noisy_argmax(votes: &VoteHistogram, noise: &mut LaplaceNoise) -> Result<usize> {
    if votes.counts.is_empty() {
        return Err(Error::Usage("noisy argmax over an empty histogram".into()));
    }
    let mut best = 0usize;
    let mut best_val = f64::NEG_INFINITY;
    for (j, &c) in votes.counts.iter().enumerate() {
        let v = c as f64 + noise.sample();
        if v > best_val {
            best_val = v;
            best = j;
        }
    }
    Ok(best)
}

/// Gaussian mechanism configuration: gradients are clipped to l2-norm
/// `clip_norm` and perturbed elementwise with std `noise_multiplier * clip_norm`.
#[derive(Debug, Clone, Copy)]
pub struct GaussianSanitizerConfig {
    pub clip_norm: f64,
    pub noise_multiplier: f64,
}

impl GaussianSanitizerConfig {
    pub fn new(clip_norm: f64, noise_multiplier: f64) -> Result<Self> {
        if !(clip_norm > 0.0) {
            return Err(Error::Config(format!(
                "clip norm must be positive, got {clip_norm}"
            )));
        }
        if noise_multiplier < 0.0 {
            return Err(Error::Config(format!(
                "noise multiplier must be nonnegative, got {noise_multiplier}"
            )));
        }
        Ok(GaussianSanitizerConfig {
            clip_norm,
            noise_multiplier,
        })
    }
}

/// Rescales the gradient so its l2-norm never exceeds the clip norm, then adds
/// i.i.d. Gaussian noise of std `noise_multiplier * clip_norm` per element.
///
/// Included as an API baseline; the ensemble runs certify privacy through the
/// Laplace vote path and never touch gradients.
pub fn sanitize_gradient(
    grad: &Tensor,
    config: &GaussianSanitizerConfig,
    rng: &mut ChaCha8Rng,
) -> Tensor {
    let mut out = grad.clone();
    let s = config.clip_norm;
    // Repeat the rescale if rounding left the norm a few ulps above S.
    for _ in 0..4 {
        let norm = out.l2_norm();
        if norm <= s || norm == 0.0 {
            break;
        }
        let scale = s / norm;
        for v in out.data_mut() {
            *v *= scale;
        }
    }
    debug_assert!(out.l2_norm() <= s);
    let std = config.noise_multiplier * s;
    if std > 0.0 {
        let normal = Normal::new(0.0, std).expect("std is finite and positive");
        for v in out.data_mut() {
            *v += normal.sample(rng);
        }
    }
    out
}
