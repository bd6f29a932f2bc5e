use super::tensor::{Real, Tensor};

/// Clamp every element to `[-clip_value, clip_value]`, then rescale the whole set
/// so its global L2 norm is at most `clip_norm`. Order is value first, norm second.
pub fn clip_gradients<R: Real>(grads: &[Tensor<R>], clip_value: f64, clip_norm: f64) -> Vec<Tensor<R>> {
    let mut out = grads.to_vec();
    clip_gradients_in_place(&mut out, clip_value, clip_norm);
    out
}

pub fn clip_gradients_in_place<R: Real>(grads: &mut [Tensor<R>], clip_value: f64, clip_norm: f64) {
    let (lo, hi) = (R::of(-clip_value), R::of(clip_value));
    for g in grads.iter_mut() {
        for v in g.data_mut() {
            *v = v.max(lo).min(hi);
        }
    }
    let norm = global_norm(grads);
    if norm > clip_norm {
        let s = R::of(clip_norm / norm);
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v = *v * s;
            }
        }
    }
}

/// L2 norm over every element of every tensor, accumulated in f64.
pub fn global_norm<R: Real>(grads: &[Tensor<R>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| {
            let v = v.to_f64().unwrap_or(f64::NAN);
            v * v
        })
        .sum::<f64>()
        .sqrt()
}
