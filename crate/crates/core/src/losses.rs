//! Photometric loss and the near-camera density penalty.

use thiserror::Error;

use crate::autodiff::{AutodiffError, Real, Tape, Tensor, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("length mismatch: {lhs} vs {rhs}")]
    Length { lhs: usize, rhs: usize },
    #[error("empty batch")]
    Empty,
    #[error("regularization range {range} exceeds {samples} samples per ray")]
    Range { range: usize, samples: usize },
    #[error("black/white prior is enabled but no sample colors were supplied")]
    MissingColors,
    #[error("invalid occlusion config: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OcclusionConfig {
    pub weight: f64,
    /// Number of leading samples per ray that are always penalized.
    pub range: usize,
    pub bw_prior_enabled: bool,
    /// Wider range for samples whose predicted color is near black or white.
    pub bw_range: usize,
    pub bw_low: f64,
    pub bw_high: f64,
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        OcclusionConfig::with_range(20)
    }
}

impl OcclusionConfig {
    pub fn with_range(range: usize) -> Self {
        OcclusionConfig {
            weight: 0.01,
            range,
            bw_prior_enabled: false,
            bw_range: range + 5,
            bw_low: 0.1,
            bw_high: 0.9,
        }
    }

    pub fn disabled() -> Self {
        OcclusionConfig {
            weight: 0.0,
            ..OcclusionConfig::with_range(0)
        }
    }

    /// Whether the term contributes to the loss at all.
    pub fn active(&self) -> bool {
        self.weight > 0.0 && (self.range > 0 || (self.bw_prior_enabled && self.bw_range > 0))
    }

    pub fn validate(&self, samples: usize) -> Result<(), LossError> {
        if !(self.weight >= 0.0 && self.weight.is_finite()) {
            return Err(LossError::Config(format!("weight must be finite and >= 0, got {}", self.weight)));
        }
        if !(self.bw_low <= self.bw_high) {
            return Err(LossError::Config(format!("bw_low {} > bw_high {}", self.bw_low, self.bw_high)));
        }
        let bw = if self.bw_prior_enabled { self.bw_range } else { 0 };
        for range in [self.range, bw] {
            if range > samples {
                return Err(LossError::Range { range, samples });
            }
        }
        Ok(())
    }
}

/// Mean of the three channels.
pub fn luminance(rgb: [f64; 3]) -> f64 {
    (rgb[0] + rgb[1] + rgb[2]) / 3.0
}

/// Mean squared error over every channel of every pixel.
pub fn photometric_loss(rendered: &[f64], target: &[f64]) -> Result<f64, LossError> {
    if rendered.len() != target.len() {
        return Err(LossError::Length {
            lhs: rendered.len(),
            rhs: target.len(),
        });
    }
    if rendered.is_empty() {
        return Err(LossError::Empty);
    }
    let sum: f64 = rendered.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / rendered.len() as f64)
}

/// `(1/K) sum_k sigma_k m_k` for one ray.
pub fn occlusion_loss(sigma: &[f64], mask: &[f64]) -> Result<f64, LossError> {
    if sigma.len() != mask.len() {
        return Err(LossError::Length {
            lhs: sigma.len(),
            rhs: mask.len(),
        });
    }
    if sigma.is_empty() {
        return Err(LossError::Empty);
    }
    let sum: f64 = sigma.iter().zip(mask).map(|(s, m)| s * m).sum();
    Ok(sum / sigma.len() as f64)
}

/// Per-ray loss averaged over a batch; `sigma` and `mask` are row-major `[rays, k]`.
pub fn occlusion_loss_batch(sigma: &[f64], mask: &[f64], k: usize) -> Result<f64, LossError> {
    if sigma.len() != mask.len() {
        return Err(LossError::Length {
            lhs: sigma.len(),
            rhs: mask.len(),
        });
    }
    if k == 0 || sigma.is_empty() || sigma.len() % k != 0 {
        return Err(LossError::Length { lhs: sigma.len(), rhs: k });
    }
    let rays = sigma.len() / k;
    let mut total = 0.0;
    for (s, m) in sigma.chunks_exact(k).zip(mask.chunks_exact(k)) {
        total += occlusion_loss(s, m)?;
    }
    Ok(total / rays as f64)
}

/// Binary penalty mask for one ray of `k` near-to-far samples.
pub fn build_occlusion_mask(k: usize, cfg: &OcclusionConfig, sample_colors: Option<&[[f64; 3]]>) -> Result<Vec<f64>, LossError> {
    if cfg.range > k {
        return Err(LossError::Range { range: cfg.range, samples: k });
    }
    let mut mask: Vec<f64> = (0..k).map(|i| if i < cfg.range { 1.0 } else { 0.0 }).collect();
    if cfg.bw_prior_enabled {
        let colors = sample_colors.ok_or(LossError::MissingColors)?;
        if colors.len() != k {
            return Err(LossError::Length { lhs: colors.len(), rhs: k });
        }
        if cfg.bw_range > k {
            return Err(LossError::Range { range: cfg.bw_range, samples: k });
        }
        for i in cfg.range..cfg.bw_range {
            let y = luminance(colors[i]);
            if y < cfg.bw_low || y > cfg.bw_high {
                mask[i] = 1.0;
            }
        }
    }
    Ok(mask)
}

/// Mean squared error on the tape; `rendered` is `[n, 3]`, `target` the same shape.
pub fn photometric_loss_on_tape<R: Real>(tape: &mut Tape<R>, rendered: Var, target: &Tensor<R>) -> Result<Var, AutodiffError> {
    let t = tape.constant(target.clone());
    let diff = tape.sub(rendered, t)?;
    let sq = tape.mul(diff, diff)?;
    tape.mean(sq)
}

/// Batch occlusion loss on the tape; `sigma` is `[rays, k]`, `mask` the same shape.
pub fn occlusion_loss_on_tape<R: Real>(tape: &mut Tape<R>, sigma: Var, mask: &Tensor<R>) -> Result<Var, AutodiffError> {
    let m = tape.constant(mask.clone());
    let masked = tape.mul(sigma, m)?;
    tape.mean(masked)
}
