//! Static frequency-mask study through the command layer.
//!
//! `cargo run --release --example mask_study -- [out_dir]`

use fieldforge::cli::{cmd_mask_study, resolve};

fn main() -> anyhow::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "runs/mask-study".into());
    let flags: Vec<(String, String)> = [
        ("total_iters", "1500"),
        ("batch_size", "64"),
        ("samples", "32"),
        ("occ.range", "10"),
        ("field.trunk_width", "64"),
        ("field.head_width", "32"),
    ]
    .iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect();
    let spec = resolve(Some("fixture3"), &[], &flags)?;
    for (ratio, psnr) in cmd_mask_study(&spec, &[0.1, 0.5, 1.0], out.as_ref())? {
        println!("visible {:>4.0}%  held-out psnr {psnr:.3} dB", ratio * 100.0);
    }
    Ok(())
}
