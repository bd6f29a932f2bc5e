use nalgebra::Vector3;

use crate::rendering::{Camera, Image, Ray, RenderOutput, SceneBounds, DEPTH_EPS};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape {
    Sphere { center: Vector3<f64>, radius: f64 },
    Cuboid { min: Vector3<f64>, max: Vector3<f64> },
}

impl Shape {
    /// Parametric interval `(t_in, t_out)` where the line `origin + t dir` is inside.
    pub fn chord(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, f64)> {
        match *self {
            Shape::Sphere { center, radius } => {
                let oc = origin - center;
                let a = dir.dot(dir);
                let half_b = oc.dot(dir);
                let c = oc.dot(&oc) - radius * radius;
                let disc = half_b * half_b - a * c;
                if disc <= 0.0 {
                    return None;
                }
                let root = disc.sqrt();
                Some(((-half_b - root) / a, (-half_b + root) / a))
            }
            Shape::Cuboid { min, max } => {
                let mut t0 = f64::NEG_INFINITY;
                let mut t1 = f64::INFINITY;
                for axis in 0..3 {
                    let inv = 1.0 / dir[axis];
                    let (mut a, mut b) = ((min[axis] - origin[axis]) * inv, (max[axis] - origin[axis]) * inv);
                    if a.is_nan() || b.is_nan() {
                        // ray parallel to the slab and starting on its plane
                        return None;
                    }
                    if a > b {
                        std::mem::swap(&mut a, &mut b);
                    }
                    t0 = t0.max(a);
                    t1 = t1.min(b);
                }
                (t0 < t1).then_some((t0, t1))
            }
        }
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        match *self {
            Shape::Sphere { center, radius } => (p - center).norm_squared() < radius * radius,
            Shape::Cuboid { min, max } => (0..3).all(|i| p[i] > min[i] && p[i] < max[i]),
        }
    }
}

/// Constant-density, constant-color volume.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Primitive {
    pub shape: Shape,
    pub density: f64,
    pub color: [f64; 3],
}

/// Piecewise-constant density field with a closed-form volume rendering integral.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneOracle {
    pub primitives: Vec<Primitive>,
    pub bounds: SceneBounds,
    pub background: [f64; 3],
}

/// Per-ray result of [`SceneOracle::trace`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleSample {
    pub color: [f64; 3],
    pub depth: f64,
    pub opacity: f64,
}

impl SceneOracle {
    pub fn empty(bounds: SceneBounds, background: [f64; 3]) -> Self {
        SceneOracle {
            primitives: Vec::new(),
            bounds,
            background,
        }
    }

    /// Total density and density-weighted color at `p`.
    pub fn field_at(&self, p: &Vector3<f64>) -> (f64, [f64; 3]) {
        let mut sigma = 0.0;
        let mut acc = [0.0; 3];
        for prim in &self.primitives {
            if prim.shape.contains(p) {
                sigma += prim.density;
                for c in 0..3 {
                    acc[c] += prim.density * prim.color[c];
                }
            }
        }
        if sigma > 0.0 {
            (sigma, acc.map(|v| v / sigma))
        } else {
            (0.0, [0.0; 3])
        }
    }

    /// Exact integral over `[ray.near, ray.far]`, segment by segment between
    /// primitive boundaries.
    pub fn trace(&self, ray: &Ray) -> OracleSample {
        let mut cuts = vec![ray.near, ray.far];
        for prim in &self.primitives {
            if let Some((a, b)) = prim.shape.chord(&ray.origin, &ray.direction) {
                cuts.extend([a, b].into_iter().filter(|t| *t > ray.near && *t < ray.far));
            }
        }
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();

        let mut transmittance = 1.0f64;
        let mut color = [0.0; 3];
        let mut depth = 0.0;
        for seg in cuts.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let (sigma, c) = self.field_at(&ray.at(0.5 * (a + b)));
            if sigma == 0.0 {
                continue;
            }
            let survive = (-sigma * (b - a)).exp();
            let w = transmittance * (1.0 - survive);
            for ch in 0..3 {
                color[ch] += w * c[ch];
            }
            // integral of t sigma T(t) over the segment
            depth += transmittance * ((a + 1.0 / sigma) - (b + 1.0 / sigma) * survive);
            transmittance *= survive;
        }
        let opacity = 1.0 - transmittance;
        for ch in 0..3 {
            color[ch] += transmittance * self.background[ch];
        }
        OracleSample {
            color,
            depth: depth / opacity.max(DEPTH_EPS),
            opacity,
        }
    }
}

/// Closed-form render of every pixel center of `camera`.
pub fn oracle_render(scene: &SceneOracle, camera: &Camera) -> RenderOutput {
    let n = (camera.width * camera.height) as usize;
    let mut colors = Vec::with_capacity(3 * n);
    let mut depth = Vec::with_capacity(n);
    let mut opacity = Vec::with_capacity(n);
    for y in 0..camera.height {
        for x in 0..camera.width {
            let s = scene.trace(&camera.ray_unchecked(x as f64 + 0.5, y as f64 + 0.5));
            colors.extend(s.color);
            depth.push(s.depth);
            opacity.push(s.opacity);
        }
    }
    RenderOutput {
        image: Image::new(camera.width, camera.height, colors),
        depth,
        opacity,
    }
}
