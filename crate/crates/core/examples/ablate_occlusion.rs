//! Occlusion term on and off across near bounds through the command layer.
//!
//! `cargo run --release --example ablate_occlusion -- [out_dir]`

use fieldforge::cli::{cmd_ablate_occ, resolve};

fn main() -> anyhow::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "runs/ablate-occ".into());
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
    println!("near  range  psnr     density");
    for r in cmd_ablate_occ(&spec, &[5, 10], &[1.0, 1.5], out.as_ref())? {
        let m = r.range.map_or("off".into(), |m| m.to_string());
        println!("{:<5} {m:<6} {:<8.3} {:.4}", r.near, r.psnr, r.near_density);
    }
    Ok(())
}
