//! Builds a radiance field and queries it at a few points.

use fieldforge::encoding::FrequencyMask;
use fieldforge::field::{FieldConfig, RadianceField};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let config = FieldConfig::default();
    let field = RadianceField::<f32>::new(config, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    println!("{} parameters in {} tensors", field.param_count(), field.param_names().len());

    let mx = FrequencyMask::all_visible(config.encoding.coord_bands);
    let md = FrequencyMask::all_visible(config.encoding.dir_bands);
    let dir = [0.0, 0.0, 1.0];
    for x in [[0.0, 0.0, 0.0], [0.5, -0.2, 0.1], [-0.9, 0.9, 0.3]] {
        let (sigma, rgb) = field.query(x, dir, &mx, &md).unwrap();
        println!("x={x:?}  sigma {sigma:.4}  rgb {rgb:.3?}");
    }
}
