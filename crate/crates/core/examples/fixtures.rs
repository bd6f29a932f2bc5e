//! Writes the procedural fixtures' input views as PNG files.

use std::path::PathBuf;

use fieldforge::scenes::{make_fixture, FIXTURE_NAMES};

fn main() -> anyhow::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fixtures".into()));
    std::fs::create_dir_all(&out)?;
    for name in FIXTURE_NAMES {
        let fx = make_fixture(name, 3, 64, 0)?;
        for (i, v) in fx.views.views.iter().enumerate() {
            let split = if fx.views.train.contains(&i) { "train" } else { "test" };
            v.image.save_png(&out.join(format!("{name}_{split}_{i:02}.png")))?;
        }
        println!("{name}: {} primitives, {} views", fx.scene.primitives.len(), fx.views.len());
    }
    println!("written to {}", out.display());
    Ok(())
}
