//! Interrupts training, saves a checkpoint and resumes to the same result.

use fieldforge::autodiff::Checkpoint;
use fieldforge::scenes::make_fixture;
use fieldforge::trainer::{TrainConfig, Trainer};

fn main() -> anyhow::Result<()> {
    let fx = make_fixture("three-spheres", 3, 16, 1)?;
    let mut cfg = TrainConfig {
        total_iters: 60,
        batch_size: 64,
        samples: 16,
        log_every: 0,
        ..TrainConfig::default()
    };
    cfg.field.trunk_width = 32;
    cfg.field.head_width = 16;
    cfg.occlusion.range = 5;

    let mut straight = Trainer::new(cfg.clone(), fx.views.clone(), fx.scene.bounds)?;
    straight.run(&mut ())?;

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("half.ffck");
    let mut first = Trainer::new(cfg.clone(), fx.views.clone(), fx.scene.bounds)?;
    for _ in 0..30 {
        first.step()?;
    }
    first.to_checkpoint().save(&path)?;
    let mut resumed = Trainer::from_checkpoint(&Checkpoint::load(&path)?, cfg, fx.views, fx.scene.bounds)?;
    resumed.run(&mut ())?;

    let same = resumed.to_checkpoint().to_bytes() == straight.to_checkpoint().to_bytes();
    println!("checkpoint {} bytes, resumed run identical: {same}", std::fs::metadata(&path)?.len());
    Ok(())
}
