use std::path::Path;
use std::process::{Command, Output};

use fieldforge::cli::{cmd_ablate_occ, cmd_eval, cmd_mask_study, cmd_render, cmd_train, resolve, EvalSplit, RunManifest, RunSpec, TrainOptions};
use fieldforge::rendering::Image;
use tempfile::tempdir;

const TINY: &[(&str, &str)] = &[
    ("total_iters", "40"),
    ("batch_size", "48"),
    ("samples", "12"),
    ("shard_rays", "16"),
    ("log_every", "10"),
    ("field.trunk_depth", "3"),
    ("field.trunk_width", "16"),
    ("field.skip_layer", "2"),
    ("field.head_width", "8"),
    ("field.coord_bands", "6"),
    ("field.dir_bands", "2"),
    ("occ.range", "4"),
    ("scene.image_size", "12"),
];

fn tiny_spec(extra: &[(&str, &str)]) -> RunSpec {
    let pairs: Vec<(String, String)> = TINY.iter().chain(extra).map(|(k, v)| (k.to_string(), v.to_string())).collect();
    resolve(None, &[], &pairs).unwrap()
}

fn quiet() -> TrainOptions {
    TrainOptions {
        skip_renders: true,
        ..TrainOptions::default()
    }
}

fn bin(args: &[&str], tiny: bool) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fieldforge"));
    cmd.args(args);
    if tiny {
        for (k, v) in TINY {
            cmd.arg("--set").arg(format!("{k}={v}"));
        }
    }
    cmd.output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn repeated_training_gives_identical_checkpoints() {
    let dir = tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = bin(&["train", "--quiet", "--out", path(out)], true);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(std::fs::read(a.join("model.ffck")).unwrap(), std::fs::read(b.join("model.ffck")).unwrap());
    assert_eq!(std::fs::read(a.join("progress.tsv")).unwrap(), std::fs::read(b.join("progress.tsv")).unwrap());
    let m = RunManifest::load(&a.join("manifest.json")).unwrap();
    assert_eq!(m.command, "train");
    assert_eq!(m.outputs["checkpoint"], "model.ffck");
    assert!(a.join("renders/view_003.png").exists());
}

#[test]
fn disabled_regularizers_are_labelled_plain() {
    let dir = tempdir().unwrap();
    let o = bin(&["train", "--quiet", "--curriculum", "0", "--occ-weight", "0", "--out", path(dir.path())], true);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("plain run:"));
    assert_eq!(RunManifest::load(&dir.path().join("manifest.json")).unwrap().label, "plain");
}

#[test]
fn view_count_selects_the_curriculum() {
    let spec = resolve(None, &[], &[("scene.views".into(), "3".into())]).unwrap();
    assert_eq!(spec.train.curriculum_fraction, 0.9);
    let spec = resolve(Some("dtu9"), &[], &[("scene.views".into(), "6".into())]).unwrap();
    assert_eq!(spec.train.curriculum_fraction, 0.7);
    let spec = resolve(None, &[], &[("scene.views".into(), "3".into()), ("curriculum_fraction".into(), "0.5".into())]).unwrap();
    assert_eq!(spec.train.curriculum_fraction, 0.5);
}

#[test]
fn exit_codes_follow_failure_class() {
    let dir = tempdir().unwrap();
    let o = bin(&["train", "--set", "occ.wieght=1", "--out", path(dir.path())], false);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("occ.weight") && err.contains("scene.fixture"), "{err}");

    let o = bin(&["render", path(&dir.path().join("missing.ffck"))], false);
    assert_eq!(o.status.code(), Some(4));

    let o = bin(&["train", "--quiet", "--set", "lr.start=1e38", "--set", "clip.value=0", "--set", "clip.norm=0", "--out", path(dir.path())], true);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("nonfinite_batch.json").exists());
}

#[test]
fn eval_and_render_from_checkpoint() {
    let dir = tempdir().unwrap();
    let mut spec = tiny_spec(&[]);
    spec.train.total_iters = 400;
    let run = cmd_train(&spec, &dir.path().join("run"), &quiet()).unwrap();

    let plain = cmd_eval(&run.checkpoint, &dir.path().join("e1"), &EvalSplit::Test, false).unwrap();
    let masked = cmd_eval(&run.checkpoint, &dir.path().join("e2"), &EvalSplit::Test, true).unwrap();
    assert!(masked.masked);
    assert_eq!(plain.views.iter().map(|v| v.psnr).collect::<Vec<_>>(), masked.views.iter().map(|v| v.psnr).collect::<Vec<_>>());
    assert_eq!(plain.mean_psnr(), run.test_report.mean_psnr());

    let train = cmd_eval(&run.checkpoint, &dir.path().join("e3"), &EvalSplit::Train, false).unwrap();
    assert!(train.mean_psnr() > plain.mean_psnr(), "train {} vs test {}", train.mean_psnr(), plain.mean_psnr());

    let paths = cmd_render(&run.checkpoint, &dir.path().join("r"), &EvalSplit::Ids(vec![0]), 2.0).unwrap();
    let img = Image::load_png(&paths[0], [1.0; 3]).unwrap();
    assert_eq!((img.width, img.height), (24, 24));
}

#[test]
fn full_ratio_mask_study_equals_plain_training() {
    let dir = tempdir().unwrap();
    let spec = tiny_spec(&[]);
    let rows = cmd_mask_study(&spec, &[0.5, 1.0], &dir.path().join("study")).unwrap();
    let mut plain = spec.clone();
    plain.train.curriculum_fraction = 0.0;
    plain.train.occlusion.weight = 0.0;
    let base = cmd_train(&plain, &dir.path().join("plain"), &quiet()).unwrap();
    assert_eq!(rows[1], (1.0, base.test_report.mean_psnr()));
    let csv = std::fs::read_to_string(dir.path().join("study/mask_study.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    let strip = Image::load_png(&dir.path().join("study/strips/view_003.png"), [1.0; 3]).unwrap();
    assert_eq!(strip.width, 36);
    assert!(cmd_mask_study(&spec, &[0.0], &dir.path().join("bad")).is_err());
}

#[test]
fn zero_range_ablation_matches_disabled_term() {
    let dir = tempdir().unwrap();
    let spec = tiny_spec(&[]);
    let rows = cmd_ablate_occ(&spec, &[0, 2], &[1.0], dir.path()).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0].range, None);
    assert_eq!(rows[1].range, Some(0));
    assert_eq!(rows[0].psnr, rows[1].psnr);
    assert_eq!(rows[0].near_density, rows[1].near_density);
    assert!(cmd_ablate_occ(&spec, &[13], &[1.0], &dir.path().join("bad")).is_err());
}
