//! PSNR, SSIM and the averaged error on synthetic images.

use fieldforge::metrics::{average_metric, psnr, ssim};
use fieldforge::rendering::Image;

fn gradient(offset: f64) -> Image {
    let data = (0..32u32).flat_map(|y| (0..32u32).flat_map(move |x| [((x + y) as f64 / 62.0 + offset).min(1.0); 3])).collect();
    Image::new(32, 32, data)
}

fn main() {
    let reference = gradient(0.0);
    for offset in [0.0, 0.01, 0.05, 0.2] {
        let img = gradient(offset);
        let p = psnr(&img, &reference, None).unwrap();
        let s = ssim(&img, &reference).unwrap();
        let avg = if p.is_finite() { average_metric(p, s, None).unwrap() } else { 0.0 };
        println!("offset {offset:.2}  psnr {p:7.3}  ssim {s:.4}  avg {avg:.4}");
    }
}
