use rand::Rng;

use super::camera::Ray;

/// One draw per equal-width bin of `[near, far]`; bin midpoints when `rng` is `None`.
pub fn stratified_samples<G: Rng + ?Sized>(ray: &Ray, count: usize, rng: Option<&mut G>) -> Vec<f64> {
    stratified_in(ray.near, ray.far, count, rng)
}

pub fn stratified_in<G: Rng + ?Sized>(near: f64, far: f64, count: usize, mut rng: Option<&mut G>) -> Vec<f64> {
    let width = (far - near) / count as f64;
    (0..count)
        .map(|k| {
            let lo = near + k as f64 * width;
            let u = match rng.as_deref_mut() {
                Some(r) => r.gen::<f64>(),
                None => 0.5,
            };
            // guard against rounding onto the next bin's lower edge
            (lo + u * width).min(lo + width * (1.0 - f64::EPSILON))
        })
        .collect()
}

/// Interval lengths `t_{k+1} - t_k`, with `terminal` for the last sample.
pub fn deltas(t: &[f64], terminal: f64) -> Vec<f64> {
    let mut out: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
    if !t.is_empty() {
        out.push(terminal);
    }
    out
}

/// Inverse-CDF resampling of `count` distances from a piecewise-constant density
/// over bins with edges `edges` (len = weights + 1). Deterministic (evenly spaced
/// quantiles) when `rng` is `None`. Output is sorted.
pub fn sample_pdf<G: Rng + ?Sized>(edges: &[f64], weights: &[f64], count: usize, mut rng: Option<&mut G>) -> Vec<f64> {
    debug_assert_eq!(edges.len(), weights.len() + 1);
    let padded: Vec<f64> = weights.iter().map(|w| w.max(0.0) + 1e-5).collect();
    let total: f64 = padded.iter().sum();
    let mut cdf = Vec::with_capacity(padded.len() + 1);
    cdf.push(0.0);
    let mut acc = 0.0;
    for w in &padded {
        acc += w / total;
        cdf.push(acc.min(1.0));
    }
    let mut us: Vec<f64> = (0..count)
        .map(|i| match rng.as_deref_mut() {
            Some(r) => r.gen::<f64>(),
            None => (i as f64 + 0.5) / count as f64,
        })
        .collect();
    us.sort_by(f64::total_cmp);
    us.into_iter()
        .map(|u| {
            let idx = cdf.partition_point(|&c| c <= u).clamp(1, padded.len());
            let (c0, c1) = (cdf[idx - 1], cdf[idx]);
            let frac = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.0 };
            edges[idx - 1] + frac.clamp(0.0, 1.0) * (edges[idx] - edges[idx - 1])
        })
        .collect()
}

/// Bin edges around sorted sample positions (midpoints, padded by the outer bounds).
pub fn edges_around(t: &[f64], near: f64, far: f64) -> Vec<f64> {
    let mut edges = Vec::with_capacity(t.len() + 1);
    edges.push(near);
    edges.extend(t.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    edges.push(far);
    edges
}

/// Sorted union of two sample lists, nudging exact duplicates apart so the
/// result is strictly increasing.
pub fn merge_sorted(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut all: Vec<f64> = a.iter().chain(b).copied().collect();
    all.sort_by(f64::total_cmp);
    for i in 1..all.len() {
        if all[i] <= all[i - 1] {
            all[i] = f64::from_bits(all[i - 1].to_bits() + 1);
        }
    }
    all
}
