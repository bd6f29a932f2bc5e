//! PSNR, SSIM and their geometric-mean summary.

use std::fmt::Write as _;

use thiserror::Error;

use crate::rendering::Image;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("image sizes differ: {0}x{1} vs {2}x{3}")]
    Shape(u32, u32, u32, u32),
    #[error("mask selects no pixels")]
    EmptyMask,
    #[error("mask has {found} entries for {expected} pixels")]
    MaskLength { found: usize, expected: usize },
    #[error("image {width}x{height} is smaller than the {window}x{window} window")]
    TooSmall { width: u32, height: u32, window: usize },
    #[error("{name} component {value} is not a valid non-negative value")]
    Component { name: &'static str, value: f64 },
}

fn check_shapes(a: &Image, b: &Image) -> Result<(), MetricError> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(MetricError::Shape(a.width, a.height, b.width, b.height))
    }
}

/// `-10 log10(MSE)` over unmasked pixels and all channels, peak value 1.
/// Identical inputs give `+inf`.
pub fn psnr(a: &Image, b: &Image, mask: Option<&[bool]>) -> Result<f64, MetricError> {
    check_shapes(a, b)?;
    let n = a.pixel_count();
    if let Some(m) = mask {
        if m.len() != n {
            return Err(MetricError::MaskLength { found: m.len(), expected: n });
        }
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, (pa, pb)) in a.data.chunks_exact(3).zip(b.data.chunks_exact(3)).enumerate() {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        sum += pa.iter().zip(pb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        count += 3;
    }
    if count == 0 {
        return Err(MetricError::EmptyMask);
    }
    Ok(psnr_from_mse(sum / count as f64))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let x = i as f64 - half;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable "valid" filtering of a `w x h` plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over valid window positions, averaged over channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64, MetricError> {
    check_shapes(a, b)?;
    if (a.width as usize) < SSIM_WINDOW || (a.height as usize) < SSIM_WINDOW {
        return Err(MetricError::TooSmall {
            width: a.width,
            height: a.height,
            window: SSIM_WINDOW,
        });
    }
    let (w, h) = (a.width as usize, a.height as usize);
    let k = gaussian_window();
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let mut total = 0.0;
    for ch in 0..3 {
        let pa: Vec<f64> = a.data.iter().skip(ch).step_by(3).copied().collect();
        let pb: Vec<f64> = b.data.iter().skip(ch).step_by(3).copied().collect();
        let prod = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
        let mu_a = filter_valid(&pa, w, h, &k);
        let mu_b = filter_valid(&pb, w, h, &k);
        let aa = filter_valid(&prod(&pa, &pa), w, h, &k);
        let bb = filter_valid(&prod(&pb, &pb), w, h, &k);
        let ab = filter_valid(&prod(&pa, &pb), w, h, &k);
        let mut acc = 0.0;
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let var_a = aa[i] - ma * ma;
            let var_b = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
        }
        total += acc / mu_a.len() as f64;
    }
    Ok(total / 3.0)
}

/// SSIM on the full frame after replacing masked-out pixels with `background`
/// in both images.
pub fn ssim_masked(a: &Image, b: &Image, mask: &[bool], background: [f64; 3]) -> Result<f64, MetricError> {
    check_shapes(a, b)?;
    if mask.len() != a.pixel_count() {
        return Err(MetricError::MaskLength {
            found: mask.len(),
            expected: a.pixel_count(),
        });
    }
    let fill = |img: &Image| {
        let mut out = img.clone();
        for (px, &keep) in out.data.chunks_exact_mut(3).zip(mask) {
            if !keep {
                px.copy_from_slice(&background);
            }
        }
        out
    };
    ssim(&fill(a), &fill(b))
}

/// Geometric mean of `10^(-psnr/10)`, `sqrt(1 - ssim)` and, when given, LPIPS.
/// Zero components are allowed (a perfect score).
pub fn average_metric(psnr: f64, ssim: f64, lpips: Option<f64>) -> Result<f64, MetricError> {
    let mse = 10f64.powf(-psnr / 10.0);
    let structure = 1.0 - ssim;
    let mut parts = vec![("mse", mse), ("1 - ssim", structure)];
    if let Some(l) = lpips {
        parts.push(("lpips", l));
    }
    for &(name, value) in &parts {
        if !(value >= 0.0) || !value.is_finite() {
            return Err(MetricError::Component { name, value });
        }
    }
    let parts = [mse, structure.sqrt()].into_iter().chain(lpips);
    let n = 2 + lpips.is_some() as usize;
    Ok(parts.product::<f64>().powf(1.0 / n as f64))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViewMetrics {
    pub view_id: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub avg2: f64,
}

/// Per-view metrics. The average column never includes LPIPS.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub views: Vec<ViewMetrics>,
    pub masked: bool,
}

impl MetricReport {
    pub fn evaluate(view_id: usize, rendered: &Image, target: &Image, mask: Option<&[bool]>, background: [f64; 3]) -> Result<ViewMetrics, MetricError> {
        let p = psnr(rendered, target, mask)?;
        let s = match mask {
            Some(m) => ssim_masked(rendered, target, m, background)?,
            None => ssim(rendered, target)?,
        };
        Ok(ViewMetrics {
            view_id,
            psnr: p,
            ssim: s,
            avg2: average_metric(p, s, None)?,
        })
    }

    /// Mean PSNR over views with a finite value.
    pub fn mean_psnr(&self) -> f64 {
        let finite: Vec<f64> = self.views.iter().map(|v| v.psnr).filter(|p| p.is_finite()).collect();
        if finite.is_empty() {
            if self.views.is_empty() {
                f64::NAN
            } else {
                f64::INFINITY
            }
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        }
    }

    pub fn mean_ssim(&self) -> f64 {
        self.views.iter().map(|v| v.ssim).sum::<f64>() / self.views.len() as f64
    }

    pub fn mean_avg2(&self) -> f64 {
        self.views.iter().map(|v| v.avg2).sum::<f64>() / self.views.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("view_id,psnr,ssim,avg2\n");
        for v in &self.views {
            writeln!(out, "{},{:.6},{:.6},{:.6}", v.view_id, v.psnr, v.ssim, v.avg2).expect("write to string");
        }
        out
    }

    pub fn summary(&self) -> String {
        format!(
            "{} views{}: PSNR {:.3} dB, SSIM {:.4}, avg2 {:.5} (no LPIPS)",
            self.views.len(),
            if self.masked { " (masked)" } else { "" },
            self.mean_psnr(),
            self.mean_ssim(),
            self.mean_avg2()
        )
    }
}
