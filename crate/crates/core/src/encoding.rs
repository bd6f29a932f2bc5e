//! Sinusoidal positional encoding and the frequency-visibility schedule.
//!
//! Layout of an encoded `d`-vector with `L` bands:
//!
//! ```text
//! [x_1..x_d, sin(x_1)..sin(x_d), cos(x_1)..cos(x_d), sin(2x_1).., cos(2x_1).., ..., cos(2^{L-1} x_d)]
//! ```
//!
//! i.e. the raw block followed by one `2d`-wide group per band. A mask of
//! length `L + 3` gates it: entries 1..=3 gate the raw block, entry `3 + b`
//! gates every element of band `b`.

use thiserror::Error;

use crate::autodiff::{Real, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncodingError {
    #[error("encoded width {found} does not match {expected} (d = {dims}, L = {bands})")]
    Width {
        found: usize,
        expected: usize,
        dims: usize,
        bands: usize,
    },
    #[error("mask has {found} entries, expected L + 3 = {expected}")]
    MaskLength { found: usize, expected: usize },
}

/// Band counts for positions and view directions. The raw input is always
/// concatenated in front of the sinusoids.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncodingConfig {
    pub coord_bands: usize,
    pub dir_bands: usize,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        EncodingConfig {
            coord_bands: 16,
            dir_bands: 4,
        }
    }
}

impl EncodingConfig {
    pub fn coord_width(&self) -> usize {
        encoded_width(3, self.coord_bands)
    }

    pub fn dir_width(&self) -> usize {
        encoded_width(3, self.dir_bands)
    }
}

pub fn encoded_width(dims: usize, bands: usize) -> usize {
    dims + 2 * dims * bands
}

/// Encodes `x` with `bands` frequency bands (raw block first).
pub fn encode(x: &[f64], bands: usize) -> Vec<f64> {
    let d = x.len();
    let mut out = vec![0.0; encoded_width(d, bands)];
    encode_into(x, bands, None, &mut out);
    out
}

/// Encodes into `out`, skipping bands whose gate is exactly zero and scaling
/// the rest by their gate. `out` must be `encoded_width(x.len(), bands)` long.
pub fn encode_into<R: Real>(x: &[f64], bands: usize, mask: Option<&FrequencyMask>, out: &mut [R]) {
    let d = x.len();
    let raw_gate = mask.map_or(1.0, FrequencyMask::raw_gate);
    for (o, &v) in out[..d].iter_mut().zip(x) {
        *o = R::of(v * raw_gate);
    }
    let last = (0..bands).rev().find(|&b| mask.map_or(1.0, |m| m.band_gate(b)) != 0.0);
    out[d..].fill(R::zero());
    let Some(last) = last else { return };
    // double-angle recurrence from the base band
    for (j, &v) in x.iter().enumerate() {
        let (mut s, mut c) = v.sin_cos();
        for b in 0..=last {
            let gate = mask.map_or(1.0, |m| m.band_gate(b));
            if gate != 0.0 {
                let o = d + 2 * d * b;
                out[o + j] = R::of(s * gate);
                out[o + d + j] = R::of(c * gate);
            }
            (s, c) = (2.0 * s * c, (c - s) * (c + s));
        }
    }
}

/// Encodes a batch of `d`-vectors (row-major `points`) into a `[n, width]` tensor,
/// with the mask folded in.
pub fn encode_batch<R: Real>(points: &[f64], dims: usize, bands: usize, mask: Option<&FrequencyMask>) -> Tensor<R> {
    let n = points.len() / dims;
    let w = encoded_width(dims, bands);
    let mut data = vec![R::zero(); n * w];
    for (p, out) in points.chunks_exact(dims).zip(data.chunks_exact_mut(w)) {
        encode_into(p, bands, mask, out);
    }
    Tensor::new(vec![n, w], data).expect("encoded batch extent")
}

/// Per-band visibility vector of length `L + 3`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyMask {
    pub alpha: Vec<f64>,
    pub iteration: u64,
    pub end_iteration: u64,
    pub bands: usize,
}

/// Linearly widening mask at iteration `t` of a curriculum that ends at `end`.
///
/// With `x = t L / T`, 1-based entry `i` is 1 when `i <= x + 3`, the fractional
/// part of `x` when `x + 3 < i <= x + 6`, and 0 beyond. All comparisons are done
/// in exact integer arithmetic. `end == 0` or `t >= end` gives an all-ones mask.
pub fn frequency_mask(t: u64, end: u64, bands: usize) -> FrequencyMask {
    let len = bands + 3;
    let alpha = if end == 0 || t >= end {
        vec![1.0; len]
    } else {
        let num = t as u128 * bands as u128; // x = num / end
        let den = end as u128;
        let frac = (num % den) as f64 / den as f64;
        (1..=len as u128)
            .map(|i| {
                if i <= 3 || (i - 3) * den <= num {
                    1.0
                } else if i <= 6 || (i - 6) * den <= num {
                    frac
                } else {
                    0.0
                }
            })
            .collect()
    };
    FrequencyMask {
        alpha,
        iteration: t,
        end_iteration: end,
        bands,
    }
}

/// First zeroed abstract index under the hard form `pos_enc[int(t/T*L)+3:] = 0`,
/// i.e. `floor(t L / T) + 3`, clamped to `L + 3`.
pub fn hard_mask_cutoff(t: u64, end: u64, bands: usize) -> usize {
    if end == 0 || t >= end {
        return bands + 3;
    }
    let floor = (t as u128 * bands as u128 / end as u128) as usize;
    (floor + 3).min(bands + 3)
}

impl FrequencyMask {
    pub fn all_visible(bands: usize) -> Self {
        frequency_mask(0, 0, bands)
    }

    /// Mask that keeps the raw block plus the lowest `floor(bands * ratio)` bands
    /// for the whole run.
    pub fn static_ratio(bands: usize, ratio: f64) -> Self {
        let visible = ((bands as f64 * ratio).floor() as usize).min(bands);
        let alpha = (0..bands + 3).map(|i| if i < visible + 3 { 1.0 } else { 0.0 }).collect();
        FrequencyMask {
            alpha,
            iteration: 0,
            end_iteration: 0,
            bands,
        }
    }

    pub fn raw_gate(&self) -> f64 {
        self.alpha[..3].iter().copied().fold(1.0, f64::min)
    }

    /// Gate for 0-based band `b`.
    pub fn band_gate(&self, b: usize) -> f64 {
        self.alpha[3 + b]
    }

    /// Entries strictly inside (0, 1).
    pub fn ramp_len(&self) -> usize {
        self.alpha.iter().filter(|&&a| a > 0.0 && a < 1.0).count()
    }

    /// Number of leading entries equal to one.
    pub fn fully_visible(&self) -> usize {
        self.alpha.iter().take_while(|&&a| a == 1.0).count()
    }

    pub fn is_all_ones(&self) -> bool {
        self.alpha.iter().all(|&a| a == 1.0)
    }

    /// Row vector expanding the mask onto an encoded `d`-vector.
    pub fn expanded(&self, dims: usize) -> Vec<f64> {
        let mut out = vec![self.raw_gate(); dims];
        for b in 0..self.bands {
            out.extend(std::iter::repeat_n(self.band_gate(b), 2 * dims));
        }
        out
    }
}

/// Elementwise product of an encoded vector with the expanded mask.
pub fn apply_mask(encoded: &[f64], mask: &FrequencyMask, dims: usize) -> Result<Vec<f64>, EncodingError> {
    if mask.alpha.len() != mask.bands + 3 {
        return Err(EncodingError::MaskLength {
            found: mask.alpha.len(),
            expected: mask.bands + 3,
        });
    }
    let expected = encoded_width(dims, mask.bands);
    if encoded.len() != expected {
        return Err(EncodingError::Width {
            found: encoded.len(),
            expected,
            dims,
            bands: mask.bands,
        });
    }
    Ok(encoded.iter().zip(mask.expanded(dims)).map(|(e, m)| e * m).collect())
}
