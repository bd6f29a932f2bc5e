use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{oracle_render, Primitive, SceneError, SceneOracle, Shape, View, ViewSet};
use crate::rendering::{focal_from_fov, Camera, SceneBounds};

pub const FIXTURE_NAMES: [&str; 3] = ["three-spheres", "box-room", "near-clutter"];
pub const CAMERA_RADIUS: f64 = 4.0;
pub const FIXTURE_NEAR: f64 = 1.0;
pub const FIXTURE_FAR: f64 = 7.0;
pub const FIXTURE_FOV_X: f64 = 40.0 * PI / 180.0;
/// Held-out views rendered for every fixture, whatever the number of inputs.
pub const FIXTURE_TEST_VIEWS: usize = 6;
/// Density of every fixture primitive; high enough that surfaces are opaque.
pub const FIXTURE_DENSITY: f64 = 5000.0;
const BACKGROUND: [f64; 3] = [1.0, 1.0, 1.0];
const BOUNDS_HALF_EXTENT: f64 = 1.5;

/// `(azimuth, elevation)` pairs in radians for train and test cameras.
#[derive(Clone, Debug, PartialEq)]
pub struct FixtureRig {
    pub train: Vec<(f64, f64)>,
    pub test: Vec<(f64, f64)>,
}

/// Inputs spread evenly in azimuth starting at `azimuth0`, held-out views
/// halfway between them at alternating heights.
pub fn hemisphere_rig(n_views: usize, azimuth0: f64) -> FixtureRig {
    let train = (0..n_views)
        .map(|i| {
            let el = if n_views <= 3 || i % 2 == 0 { 30.0 } else { 50.0 };
            (azimuth0 + 2.0 * PI * i as f64 / n_views as f64, el * PI / 180.0)
        })
        .collect();
    let test = (0..FIXTURE_TEST_VIEWS)
        .map(|j| {
            let el = if j % 2 == 0 { 20.0 } else { 40.0 };
            (azimuth0 + 2.0 * PI * (j as f64 + 0.5) / FIXTURE_TEST_VIEWS as f64, el * PI / 180.0)
        })
        .collect();
    FixtureRig { train, test }
}

fn direction(az: f64, el: f64) -> Vector3<f64> {
    Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin())
}

fn rig_camera(az: f64, el: f64, size: u32) -> Camera {
    Camera::look_at(
        CAMERA_RADIUS * direction(az, el),
        Vector3::zeros(),
        Vector3::z(),
        size,
        size,
        focal_from_fov(size, FIXTURE_FOV_X),
        FIXTURE_NEAR,
        FIXTURE_FAR,
    )
    .expect("rig cameras are never vertical")
}

fn sphere(c: [f64; 3], r: f64, color: [f64; 3]) -> Primitive {
    Primitive {
        shape: Shape::Sphere {
            center: Vector3::from(c),
            radius: r,
        },
        density: FIXTURE_DENSITY,
        color,
    }
}

fn cuboid(min: [f64; 3], max: [f64; 3], color: [f64; 3]) -> Primitive {
    Primitive {
        shape: Shape::Cuboid {
            min: Vector3::from(min),
            max: Vector3::from(max),
        },
        density: FIXTURE_DENSITY,
        color,
    }
}

fn three_spheres() -> Vec<Primitive> {
    vec![
        sphere([-0.55, -0.35, -0.1], 0.45, [0.85, 0.25, 0.2]),
        sphere([0.5, -0.3, 0.05], 0.38, [0.2, 0.7, 0.3]),
        sphere([0.0, 0.5, 0.15], 0.42, [0.25, 0.35, 0.85]),
    ]
}

fn box_room() -> Vec<Primitive> {
    vec![
        cuboid([-1.3, -1.3, -0.75], [1.3, 1.3, -0.65], [0.6, 0.6, 0.6]),
        cuboid([-1.3, -1.3, -0.65], [-1.2, 1.3, 0.4], [0.8, 0.7, 0.5]),
        cuboid([-1.2, 1.2, -0.65], [1.3, 1.3, 0.4], [0.55, 0.65, 0.8]),
        cuboid([-0.2, -0.5, -0.65], [0.4, 0.1, -0.05], [0.1, 0.55, 0.55]),
        sphere([-0.3, 0.5, -0.35], 0.3, [0.75, 0.2, 0.6]),
    ]
}

/// Deterministic analytic scene with its cameras and exact images.
#[derive(Clone, Debug, PartialEq)]
pub struct Fixture {
    pub name: String,
    pub scene: SceneOracle,
    pub views: ViewSet,
    pub rig: FixtureRig,
}

impl Fixture {
    /// Pixels with closed-form opacity above one half, per view.
    pub fn object_masks(&self) -> Vec<Vec<bool>> {
        self.views
            .views
            .iter()
            .map(|v| oracle_render(&self.scene, &v.camera).opacity.iter().map(|&a| a > 0.5).collect())
            .collect()
    }
}

/// Builds fixture `name` with `n_views` inputs and [`FIXTURE_TEST_VIEWS`]
/// held-out views of `image_size` pixels square. `seed` rotates the rig.
pub fn make_fixture(name: &str, n_views: usize, image_size: u32, seed: u64) -> Result<Fixture, SceneError> {
    if n_views == 0 || image_size == 0 {
        return Err(SceneError::Request(format!("need at least one view and pixel, got {n_views} views of {image_size}px")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let azimuth0 = rng.gen_range(0.0..2.0 * PI);
    let rig = hemisphere_rig(n_views, azimuth0);
    let cameras: Vec<Camera> = rig
        .train
        .iter()
        .chain(&rig.test)
        .map(|&(az, el)| rig_camera(az, el, image_size))
        .collect();

    let primitives = match name {
        "three-spheres" => three_spheres(),
        "box-room" => box_room(),
        "near-clutter" => {
            // small sphere just past the near bound of the first input camera
            let cam = &cameras[0];
            let ray = cam.ray_unchecked(0.3 * image_size as f64, 0.35 * image_size as f64);
            let mut prims = three_spheres();
            prims.push(sphere(ray.at(FIXTURE_NEAR + 0.35).into(), 0.12, [0.95, 0.6, 0.1]));
            prims
        }
        _ => {
            return Err(SceneError::UnknownFixture {
                name: name.into(),
                known: FIXTURE_NAMES.join(", "),
            })
        }
    };
    let scene = SceneOracle {
        primitives,
        bounds: SceneBounds::cube(BOUNDS_HALF_EXTENT),
        background: BACKGROUND,
    };
    let views = cameras
        .into_iter()
        .map(|camera| View {
            image: oracle_render(&scene, &camera).image,
            camera,
            mask: None,
            file: None,
        })
        .collect();
    let split = super::Split {
        train: (0..n_views).collect(),
        test: (n_views..n_views + FIXTURE_TEST_VIEWS).collect(),
    };
    Ok(Fixture {
        name: name.into(),
        scene,
        views: ViewSet::new(views)?.with_split(split)?,
        rig,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let a = make_fixture("three-spheres", 3, 12, 7).unwrap();
        let b = make_fixture("three-spheres", 3, 12, 7).unwrap();
        assert_eq!(a, b);
        let c = make_fixture("three-spheres", 3, 12, 8).unwrap();
        assert_ne!(a.views.views[0].camera, c.views.views[0].camera);
    }

    #[test]
    fn unknown_name() {
        assert!(matches!(make_fixture("teapot", 3, 8, 0), Err(SceneError::UnknownFixture { .. })));
    }

    #[test]
    fn three_views_are_far_apart() {
        let fx = make_fixture("box-room", 3, 8, 3).unwrap();
        let dirs: Vec<_> = fx.views.train_views().map(|v| v.camera.origin().normalize()).collect();
        for i in 0..3 {
            for j in i + 1..3 {
                let angle = dirs[i].dot(&dirs[j]).clamp(-1.0, 1.0).acos().to_degrees();
                assert!(angle >= 60.0, "{angle}");
            }
        }
    }

    #[test]
    fn clutter_sits_near_the_first_camera() {
        let fx = make_fixture("near-clutter", 3, 16, 1).unwrap();
        let cam = &fx.views.views[0].camera;
        let near_hit = (0..16)
            .flat_map(|y| (0..16).map(move |x| (x, y)))
            .filter_map(|(x, y)| {
                let ray = cam.ray(x, y).unwrap();
                fx.scene.primitives.last().unwrap().shape.chord(&ray.origin, &ray.direction).map(|c| c.0)
            })
            .fold(f64::INFINITY, f64::min);
        assert!(near_hit >= FIXTURE_NEAR && near_hit <= FIXTURE_NEAR + 0.1 * (FIXTURE_FAR - FIXTURE_NEAR));
    }
}
