//! Transmission-time defenses: differential-privacy clipping/noising and
//! magnitude-quantile sparsification, applied to the payload before upload.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flsim::Payload;
use crate::models::ModelWeights;
use crate::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    Gaussian,
    Laplacian,
}

/// Clip-then-noise configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpConfig {
    /// Per-layer L2 clipping threshold.
    pub clip: f64,
    pub noise: NoiseKind,
    /// Noise level; the additive noise has std (Gaussian) or scale
    /// (Laplacian) `sigma * clip`.
    pub sigma: f64,
    /// Group size divisor; 1 leaves magnitudes untouched.
    pub group: usize,
}

impl DpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clip <= 0.0 {
            return Err(Error::Argument("dp clip threshold must be > 0".into()));
        }
        if self.sigma < 0.0 {
            return Err(Error::Argument("dp sigma must be >= 0".into()));
        }
        if self.group == 0 {
            return Err(Error::Argument("dp group size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SparsifyScope {
    Global,
    PerLayer,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsifyConfig {
    pub rate: f64,
    pub scope: SparsifyScope,
}

impl SparsifyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.rate) {
            return Err(Error::Argument("sparsify rate must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Defense selected in a simulation run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DefenseConfig {
    Dp(DpConfig),
    Sparsify(SparsifyConfig),
}

impl DefenseConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            DefenseConfig::Dp(c) => c.validate(),
            DefenseConfig::Sparsify(c) => c.validate(),
        }
    }

    pub fn name(&self) -> String {
        match self {
            DefenseConfig::Dp(c) => format!(
                "dp-{}-sigma{}-clip{}-group{}",
                match c.noise {
                    NoiseKind::Gaussian => "gaussian",
                    NoiseKind::Laplacian => "laplacian",
                },
                c.sigma, c.clip, c.group
            ),
            DefenseConfig::Sparsify(c) => format!("sparsify-{}", c.rate),
        }
    }

    /// Transform a payload at transmission time.
    pub fn apply(&self, payload: Payload, seed: u64) -> Result<Payload> {
        self.validate()?;
        let transform = |tensors: &[Tensor]| -> Vec<Tensor> {
            match self {
                DefenseConfig::Dp(cfg) => dp_apply_tensors(tensors, cfg, seed),
                DefenseConfig::Sparsify(cfg) => sparsify_tensors(tensors, cfg.rate, cfg.scope),
            }
        };
        Ok(match payload {
            Payload::Weights { weights } => {
                let fingerprint = weights.fingerprint();
                let tensors = transform(weights.tensors());
                Payload::Weights {
                    weights: ModelWeights::from_tensors_unchecked(tensors, fingerprint),
                }
            }
            Payload::Gradients { gradients } => Payload::Gradients {
                gradients: transform(&gradients),
            },
        })
    }
}

fn clip_tensor(t: &Tensor, c: f64) -> Tensor {
    let norm = t.frobenius_norm();
    if norm <= c {
        t.clone()
    } else {
        // Back the scale off by 1e-13 so the re-measured norm of the result
        // stays strictly below c and a second clip is a bitwise no-op.
        t.scaled(c / norm * (1.0 - 1e-13))
    }
}

/// Per-layer L2 clipping: `W_l / max(1, ||W_l||_2 / C)`.
pub fn dp_clip(weights: &ModelWeights, c: f64) -> Result<ModelWeights> {
    if c <= 0.0 {
        return Err(Error::Argument("clip threshold must be > 0".into()));
    }
    let tensors = weights.tensors().iter().map(|t| clip_tensor(t, c)).collect();
    Ok(ModelWeights::from_tensors_unchecked(tensors, weights.fingerprint()))
}

/// Seeded noise on already-clipped weights, then the group divisor:
/// per layer `(W + n) / L` with n Gaussian(0, (sigma*C)^2) or
/// Laplacian(scale sigma*C).
pub fn dp_noise(weights: &ModelWeights, cfg: &DpConfig, seed: u64) -> Result<ModelWeights> {
    cfg.validate()?;
    let tensors = dp_noise_tensors(weights.tensors(), cfg, seed);
    Ok(ModelWeights::from_tensors_unchecked(tensors, weights.fingerprint()))
}

/// The composed defense: clip, then noise.
pub fn dp_apply(weights: &ModelWeights, cfg: &DpConfig, seed: u64) -> Result<ModelWeights> {
    cfg.validate()?;
    let tensors = dp_apply_tensors(weights.tensors(), cfg, seed);
    Ok(ModelWeights::from_tensors_unchecked(tensors, weights.fingerprint()))
}

fn dp_apply_tensors(tensors: &[Tensor], cfg: &DpConfig, seed: u64) -> Vec<Tensor> {
    let clipped: Vec<Tensor> = tensors.iter().map(|t| clip_tensor(t, cfg.clip)).collect();
    dp_noise_tensors(&clipped, cfg, seed)
}

fn dp_noise_tensors(tensors: &[Tensor], cfg: &DpConfig, seed: u64) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = cfg.sigma * cfg.clip;
    let group = cfg.group as f64;
    tensors
        .iter()
        .map(|t| {
            let noised: Vec<f64> = t
                .data()
                .iter()
                .map(|&w| (w + sample_noise(&mut rng, cfg.noise, scale)) / group)
                .collect();
            Tensor::from_raw(t.shape().to_vec(), noised)
        })
        .collect()
}

fn sample_noise(rng: &mut ChaCha8Rng, kind: NoiseKind, scale: f64) -> f64 {
    if scale == 0.0 {
        return 0.0;
    }
    match kind {
        NoiseKind::Gaussian => Normal::new(0.0, scale).expect("valid sigma").sample(rng),
        NoiseKind::Laplacian => {
            // Inverse CDF on u ~ U(-1/2, 1/2).
            let u: f64 = rand::Rng::random_range(rng, -0.5..0.5);
            -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
        }
    }
}

/// Zero every entry whose magnitude falls strictly below the rate-quantile.
///
/// The threshold is the `ceil(rate * n)`-th smallest magnitude (0-based, so
/// with distinct magnitudes exactly that share of entries is pruned); ties
/// at the threshold survive.
pub fn sparsify(weights: &ModelWeights, rate: f64, scope: SparsifyScope) -> Result<ModelWeights> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Argument("sparsify rate must be in [0, 1)".into()));
    }
    let tensors = sparsify_tensors(weights.tensors(), rate, scope);
    Ok(ModelWeights::from_tensors_unchecked(tensors, weights.fingerprint()))
}

fn quantile_threshold(mags: &mut [f64], rate: f64) -> f64 {
    if rate == 0.0 || mags.is_empty() {
        return f64::NEG_INFINITY;
    }
    mags.sort_by(|a, b| a.partial_cmp(b).expect("finite magnitudes"));
    let idx = ((rate * mags.len() as f64).ceil() as usize).min(mags.len() - 1);
    mags[idx]
}

fn sparsify_tensors(tensors: &[Tensor], rate: f64, scope: SparsifyScope) -> Vec<Tensor> {
    let prune = |t: &Tensor, threshold: f64| t.map(|v| if v.abs() < threshold { 0.0 } else { v });
    match scope {
        SparsifyScope::Global => {
            let mut mags: Vec<f64> = tensors
                .iter()
                .flat_map(|t| t.data().iter().map(|v| v.abs()))
                .collect();
            let threshold = quantile_threshold(&mut mags, rate);
            tensors.iter().map(|t| prune(t, threshold)).collect()
        }
        SparsifyScope::PerLayer => tensors
            .iter()
            .map(|t| {
                let mut mags: Vec<f64> = t.data().iter().map(|v| v.abs()).collect();
                let threshold = quantile_threshold(&mut mags, rate);
                prune(t, threshold)
            })
            .collect(),
    }
}
