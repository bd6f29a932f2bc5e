//! Cameras, ray sampling, quadrature compositing and image output.

mod camera;
mod composite;
mod image;
mod sampling;

use nalgebra::Vector3;
use thiserror::Error;

pub use self::camera::{focal_from_fov, generate_rays, Camera, Ray};
pub use self::composite::{composite, composite_on_tape, Composite, TapeComposite, DEPTH_EPS, TERMINAL_DELTA};
pub use self::image::{read_pfm, write_pfm, Image};
pub use self::sampling::{deltas, edges_around, merge_sorted, sample_pdf, stratified_in, stratified_samples};

use crate::autodiff::Real;
use crate::encoding::FrequencyMask;
use crate::field::{FieldError, RadianceField};

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("pixel ({x}, {y}) outside {width}x{height} image")]
    PixelOutOfBounds { x: u32, y: u32, width: u32, height: u32 },
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("non-finite density at sample {sample}")]
    NonFiniteDensity { sample: usize },
    #[error("image i/o: {0}")]
    Image(String),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Axis-aligned box mapped onto `[-1, 1]^3` before encoding.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneBounds {
    pub center: Vector3<f64>,
    pub half_extent: f64,
}

impl SceneBounds {
    pub fn cube(half_extent: f64) -> Self {
        SceneBounds {
            center: Vector3::zeros(),
            half_extent,
        }
    }

    pub fn normalize(&self, p: &Vector3<f64>) -> [f64; 3] {
        let q = (p - self.center) / self.half_extent;
        [q.x, q.y, q.z]
    }
}

/// Rendered frame: color, expected termination depth and accumulated opacity.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub image: Image,
    pub depth: Vec<f64>,
    pub opacity: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderSettings {
    pub samples: usize,
    /// Extra importance samples for the second stage (ignored without a fine field).
    pub fine_samples: usize,
    pub background: [f64; 3],
    pub terminal_delta: f64,
    pub chunk_rays: usize,
}

impl Default for RenderSettings {
    fn default() -> Self {
        RenderSettings {
            samples: 64,
            fine_samples: 64,
            background: [1.0; 3],
            terminal_delta: TERMINAL_DELTA,
            chunk_rays: 1024,
        }
    }
}

/// Flattened `(positions, directions)` for every sample of every ray,
/// positions normalized by `bounds`.
pub fn sample_points(rays: &[Ray], t_values: &[Vec<f64>], bounds: &SceneBounds) -> (Vec<f64>, Vec<f64>) {
    let n: usize = t_values.iter().map(Vec::len).sum();
    let mut pos = Vec::with_capacity(3 * n);
    let mut dirs = Vec::with_capacity(3 * n);
    for (ray, ts) in rays.iter().zip(t_values) {
        for &t in ts {
            pos.extend(bounds.normalize(&ray.at(t)));
            dirs.extend([ray.direction.x, ray.direction.y, ray.direction.z]);
        }
    }
    (pos, dirs)
}

/// Deterministic render of a full camera frame through a (coarse, optional fine) field pair.
pub fn render_view<R: Real>(
    coarse: &RadianceField<R>,
    fine: Option<&RadianceField<R>>,
    camera: &Camera,
    bounds: &SceneBounds,
    masks: (&FrequencyMask, &FrequencyMask),
    settings: &RenderSettings,
) -> Result<RenderOutput, RenderError> {
    let pixels: Vec<(u32, u32)> = (0..camera.height).flat_map(|y| (0..camera.width).map(move |x| (x, y))).collect();
    let mut colors = Vec::with_capacity(pixels.len() * 3);
    let mut depth = Vec::with_capacity(pixels.len());
    let mut opacity = Vec::with_capacity(pixels.len());
    for chunk in pixels.chunks(settings.chunk_rays.max(1)) {
        let rays = generate_rays(camera, chunk)?;
        let t_coarse: Vec<Vec<f64>> = rays
            .iter()
            .map(|r| stratified_samples(r, settings.samples, None::<&mut rand_chacha::ChaCha8Rng>))
            .collect();
        let mut results = shade(coarse, &rays, &t_coarse, bounds, masks, settings)?;
        if let Some(fine) = fine {
            let t_fine: Vec<Vec<f64>> = rays
                .iter()
                .zip(&t_coarse)
                .zip(&results)
                .map(|((r, t), c)| {
                    let edges = edges_around(t, r.near, r.far);
                    let extra = sample_pdf(&edges, &c.weights, settings.fine_samples, None::<&mut rand_chacha::ChaCha8Rng>);
                    merge_sorted(t, &extra)
                })
                .collect();
            results = shade(fine, &rays, &t_fine, bounds, masks, settings)?;
        }
        for c in results {
            colors.extend(c.color);
            depth.push(c.depth);
            opacity.push(c.opacity);
        }
    }
    Ok(RenderOutput {
        image: Image::new(camera.width, camera.height, colors),
        depth,
        opacity,
    })
}

fn shade<R: Real>(
    field: &RadianceField<R>,
    rays: &[Ray],
    t_values: &[Vec<f64>],
    bounds: &SceneBounds,
    (mask_x, mask_d): (&FrequencyMask, &FrequencyMask),
    settings: &RenderSettings,
) -> Result<Vec<Composite>, RenderError> {
    let (pos, dirs) = sample_points(rays, t_values, bounds);
    let (sigma, rgb) = field.evaluate(&pos, &dirs, mask_x, mask_d)?;
    let mut offset = 0;
    t_values
        .iter()
        .map(|t| {
            let k = t.len();
            let d = deltas(t, settings.terminal_delta);
            let c = composite(t, &d, &sigma[offset..offset + k], &rgb[3 * offset..3 * (offset + k)], settings.background);
            offset += k;
            c
        })
        .collect()
}

/// Deterministic quadrature render of an arbitrary density/color function
/// sampled at `samples` bin midpoints per ray.
pub fn quadrature_render(
    camera: &Camera,
    samples: usize,
    background: [f64; 3],
    field: impl Fn(&Vector3<f64>) -> (f64, [f64; 3]),
) -> Result<RenderOutput, RenderError> {
    let mut colors = Vec::with_capacity((camera.width * camera.height * 3) as usize);
    let mut depth = Vec::new();
    let mut opacity = Vec::new();
    let mut sigma = vec![0.0f64; samples];
    let mut rgb = vec![0.0f64; 3 * samples];
    for y in 0..camera.height {
        for x in 0..camera.width {
            let ray = camera.ray(x, y)?;
            let t = stratified_samples(&ray, samples, None::<&mut rand_chacha::ChaCha8Rng>);
            for (k, &tk) in t.iter().enumerate() {
                let (s, c) = field(&ray.at(tk));
                sigma[k] = s;
                rgb[3 * k..3 * k + 3].copy_from_slice(&c);
            }
            let c = composite(&t, &deltas(&t, TERMINAL_DELTA), &sigma, &rgb, background)?;
            colors.extend(c.color);
            depth.push(c.depth);
            opacity.push(c.opacity);
        }
    }
    Ok(RenderOutput {
        image: Image::new(camera.width, camera.height, colors),
        depth,
        opacity,
    })
}
