//! Occlusion penalty masks and the resulting loss for one ray.

use fieldforge::losses::{build_occlusion_mask, occlusion_loss, OcclusionConfig};

fn main() {
    let k = 16;
    let sigma: Vec<f64> = (0..k).map(|i| if i < 3 { 4.0 } else { 0.5 }).collect();

    let cfg = OcclusionConfig::with_range(5);
    let mask = build_occlusion_mask(k, &cfg, None).unwrap();
    println!("range 5 mask   {mask:?}");
    println!("loss {:.4}", occlusion_loss(&sigma, &mask).unwrap());

    let cfg = OcclusionConfig { bw_prior_enabled: true, bw_range: 10, ..cfg };
    let colors: Vec<[f64; 3]> = (0..k).map(|i| if i % 2 == 0 { [0.98; 3] } else { [0.5; 3] }).collect();
    let mask = build_occlusion_mask(k, &cfg, Some(&colors)).unwrap();
    println!("with b&w prior {mask:?}");
    println!("loss {:.4}", occlusion_loss(&sigma, &mask).unwrap());
}
