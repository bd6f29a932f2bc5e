use crate::autodiff::{AutodiffError, Real, Tape, Tensor, Var};

use super::RenderError;

/// Default length assigned to the interval behind the last sample.
pub const TERMINAL_DELTA: f64 = 1e10;
/// Opacity floor for the depth normalization.
pub const DEPTH_EPS: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct Composite {
    pub color: [f64; 3],
    pub depth: f64,
    pub opacity: f64,
    pub weights: Vec<f64>,
}

/// Quadrature compositing of one ray.
///
/// `t` holds the `K` sample distances (near to far), `sigma` the densities,
/// `rgb` the `3K` colors and `deltas` the interval lengths (last one is the
/// terminal delta).
pub fn composite<R: Real>(
    t: &[f64],
    deltas: &[f64],
    sigma: &[R],
    rgb: &[R],
    background: [f64; 3],
) -> Result<Composite, RenderError> {
    let k = t.len();
    assert!(deltas.len() == k && sigma.len() == k && rgb.len() == 3 * k, "ray sample lengths disagree");
    let mut weights = Vec::with_capacity(k);
    let mut acc_depth = 0.0f64;
    let mut optical = 0.0f64;
    let mut color = [0.0f64; 3];
    for i in 0..k {
        let s = sigma[i].to_f64().unwrap_or(f64::NAN);
        if !s.is_finite() {
            return Err(RenderError::NonFiniteDensity { sample: i });
        }
        let tau = s * deltas[i];
        let w = (-optical).exp() * (1.0 - (-tau).exp());
        optical += tau;
        for c in 0..3 {
            color[c] += w * rgb[3 * i + c].to_f64().unwrap_or(f64::NAN);
        }
        acc_depth += w * t[i];
        weights.push(w);
    }
    let opacity: f64 = weights.iter().sum();
    for c in 0..3 {
        color[c] += (1.0 - opacity) * background[c];
    }
    Ok(Composite {
        color,
        depth: acc_depth / opacity.max(DEPTH_EPS),
        opacity,
        weights,
    })
}

/// Differentiable compositing of `rays` rays with `K` samples each.
#[derive(Clone, Copy, Debug)]
pub struct TapeComposite {
    /// `[rays, 3]`
    pub color: Var,
    /// `[rays, K]`
    pub weights: Var,
    /// `[rays, K]` densities reshaped per ray.
    pub sigma: Var,
}

/// `sigma` is `[rays*K, 1]`, `rgb` is `[rays*K, 3]`, `deltas` is `[rays, K]`.
///
/// `color = sum_k w_k (c_k - bg) + bg`, which equals `sum_k w_k c_k + (1 - sum_k w_k) bg`.
pub fn composite_on_tape<R: Real>(
    tape: &mut Tape<R>,
    sigma: Var,
    rgb: Var,
    deltas: &Tensor<R>,
    background: [f64; 3],
) -> Result<TapeComposite, AutodiffError> {
    let (rays, k) = (deltas.rows(), deltas.cols());
    let sigma = tape.reshape(sigma, &[rays, k])?;
    let d = tape.constant(deltas.clone());
    let tau = tape.mul(sigma, d)?;
    let cum = tape.exclusive_cumsum(tau)?;
    let neg_cum = tape.neg(cum)?;
    let transmittance = tape.exp(neg_cum)?;
    let neg_tau = tape.neg(tau)?;
    let survive = tape.exp(neg_tau)?;
    let neg_survive = tape.neg(survive)?;
    let alpha = tape.add_scalar(neg_survive, R::one())?;
    let weights = tape.mul(transmittance, alpha)?;
    let bg = tape.constant(Tensor::row(&background.map(R::of)));
    let shifted = tape.sub(rgb, bg)?;
    let summed = tape.segment_weighted_sum(weights, shifted)?;
    let color = tape.add(summed, bg)?;
    Ok(TapeComposite { color, weights, sigma })
}
