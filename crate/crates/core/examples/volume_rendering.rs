//! Quadrature rendering of an analytic sphere converging to the closed form.

use fieldforge::rendering::{focal_from_fov, quadrature_render, Camera};
use fieldforge::scenes::{oracle_render, Primitive, SceneOracle, Shape};
use fieldforge::rendering::SceneBounds;
use nalgebra::Vector3;

fn main() {
    let scene = SceneOracle {
        primitives: vec![Primitive {
            shape: Shape::Sphere { center: Vector3::zeros(), radius: 0.6 },
            density: 2.0,
            color: [0.9, 0.3, 0.2],
        }],
        bounds: SceneBounds::cube(1.5),
        background: [1.0; 3],
    };
    let size = 24;
    let camera = Camera::look_at(
        Vector3::new(0.0, -3.0, 0.5),
        Vector3::zeros(),
        Vector3::z(),
        size,
        size,
        focal_from_fov(size, 0.7),
        1.0,
        5.0,
    )
    .unwrap();
    let exact = oracle_render(&scene, &camera);
    for k in [16, 64, 256, 1024] {
        let quad = quadrature_render(&camera, k, scene.background, |p| scene.field_at(p)).unwrap();
        let err = exact.image.data.iter().zip(&quad.image.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let c = 3 * (size / 2 * size + size / 2) as usize;
        let center = (exact.image.data[c] - quad.image.data[c]).abs();
        println!("K={k:5}  center pixel error {center:.2e}  max over image {err:.2e}");
    }
}
