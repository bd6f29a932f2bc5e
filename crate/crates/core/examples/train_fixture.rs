//! Trains a small model on a three-view fixture and compares the plain and
//! regularized configurations on held-out views.
//!
//! `cargo run --release --example train_fixture -- [iterations] [fixture]`

use fieldforge::scenes::make_fixture;
use fieldforge::trainer::{TrainConfig, Trainer};

fn train(regularized: bool, iters: u64, fixture: &str) -> anyhow::Result<(f64, f64)> {
    let fx = make_fixture(fixture, 3, 32, 0)?;
    let mut cfg = TrainConfig {
        total_iters: iters,
        batch_size: 64,
        samples: 32,
        log_every: 0,
        ..TrainConfig::default()
    };
    cfg.field.trunk_width = 64;
    cfg.field.head_width = 32;
    cfg.occlusion.range = 10;
    if !regularized {
        cfg.curriculum_fraction = 0.0;
        cfg.occlusion.weight = 0.0;
    }
    let mut trainer = Trainer::new(cfg, fx.views, fx.scene.bounds)?;
    trainer.run(&mut ())?;
    let test = trainer.evaluate(&trainer.views.test.clone())?;
    Ok((test.mean_psnr(), trainer.mean_near_density(10)?))
}

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let iters = args.next().map_or(Ok(2000), |s| s.parse())?;
    let fixture = args.next().unwrap_or_else(|| "three-spheres".into());
    for regularized in [false, true] {
        let (psnr, density) = train(regularized, iters, &fixture)?;
        let name = if regularized { "regularized" } else { "plain" };
        println!("{name:12} held-out psnr {psnr:6.3} dB, near-camera density {density:.4}");
    }
    Ok(())
}
