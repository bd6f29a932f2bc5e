use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{write_atomic, CliError, LoadedScene, RunManifest, RunSpec};
use crate::autodiff::Checkpoint;
use crate::metrics::MetricReport;
use crate::rendering::{write_pfm, Image};
use crate::trainer::{LogRow, TrainError, TrainObserver, Trainer};

/// Which views a render or eval command covers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EvalSplit {
    Train,
    Test,
    All,
    Ids(Vec<usize>),
}

impl EvalSplit {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        match text.trim() {
            "train" => Ok(EvalSplit::Train),
            "test" => Ok(EvalSplit::Test),
            "all" => Ok(EvalSplit::All),
            list => list
                .split(',')
                .map(|s| s.trim().parse::<usize>().map_err(|_| CliError::Config(format!("bad view list {text:?}"))))
                .collect::<Result<_, _>>()
                .map(EvalSplit::Ids),
        }
    }

    fn ids(&self, trainer: &Trainer) -> Vec<usize> {
        match self {
            EvalSplit::Train => trainer.views.train.clone(),
            EvalSplit::Test => trainer.views.test.clone(),
            EvalSplit::All => (0..trainer.views.len()).collect(),
            EvalSplit::Ids(ids) => ids.clone(),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Checkpoint to continue from.
    pub resume: Option<PathBuf>,
    /// Echo progress lines to stderr.
    pub verbose: bool,
    /// Skip writing held-out renders.
    pub skip_renders: bool,
}

pub struct TrainSummary {
    pub run_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub label: String,
    pub log: Vec<LogRow>,
    /// Held-out metrics of the final model.
    pub test_report: MetricReport,
    /// Final held-out renders by view id.
    pub renders: Vec<(usize, Image)>,
    pub trainer: Trainer,
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

fn checkpoint_with_scene(trainer: &Trainer, spec: &RunSpec) -> Checkpoint<f32> {
    let mut ck = trainer.to_checkpoint();
    for (k, v) in spec.scene.to_pairs() {
        ck.metadata.insert(k, v);
    }
    ck
}

struct RunObserver<'a> {
    spec: &'a RunSpec,
    progress: BufWriter<File>,
    checkpoints: PathBuf,
    verbose: bool,
    rows: Vec<LogRow>,
}

impl TrainObserver for RunObserver<'_> {
    fn on_log(&mut self, row: &LogRow) -> Result<(), TrainError> {
        let line = row.to_tsv();
        writeln!(self.progress, "{line}").and_then(|_| self.progress.flush()).map_err(|e| TrainError::Io(e.to_string()))?;
        if self.verbose {
            eprintln!("{line}");
        }
        self.rows.push(*row);
        Ok(())
    }

    fn on_checkpoint(&mut self, trainer: &Trainer) -> Result<(), TrainError> {
        let path = self.checkpoints.join(format!("iter_{:07}.ffck", trainer.iteration));
        checkpoint_with_scene(trainer, self.spec).save(&path)?;
        Ok(())
    }
}

fn view_name(id: usize) -> String {
    format!("view_{id:03}")
}

/// Renders `ids` into `dir` as PNG plus depth PFM; returns the images.
fn render_views(trainer: &Trainer, ids: &[usize], dir: &Path, scale: f64) -> Result<Vec<(usize, Image)>, CliError> {
    create_dir(dir)?;
    let mut out = Vec::with_capacity(ids.len());
    for &id in ids {
        let view = trainer
            .views
            .views
            .get(id)
            .ok_or_else(|| CliError::Config(format!("view {id} out of range for {} views", trainer.views.len())))?;
        let camera = if scale == 1.0 { view.camera.clone() } else { view.camera.scaled(scale) };
        let r = trainer.render(&camera)?;
        r.image.save_png(&dir.join(format!("{}.png", view_name(id))))?;
        write_pfm(&dir.join(format!("{}_depth.pfm", view_name(id))), camera.width, camera.height, &r.depth)?;
        out.push((id, r.image));
    }
    Ok(out)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    write_atomic(path, text.as_bytes())
}

/// Trains one model into `out`: manifest, progress log, checkpoints, final
/// model, held-out renders and metrics.
pub fn cmd_train(spec: &RunSpec, out: &Path, opts: &TrainOptions) -> Result<TrainSummary, CliError> {
    spec.validate()?;
    let mut manifest = RunManifest::new("train", spec);
    create_dir(out)?;
    let checkpoints = out.join("checkpoints");
    create_dir(&checkpoints)?;
    let LoadedScene { views, bounds, .. } = spec.scene.load(spec.train.seed, spec.train.background)?;

    let mut trainer = match &opts.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            Trainer::from_checkpoint(&ck, spec.train.clone(), views, bounds)?
        }
        None => Trainer::new(spec.train.clone(), views, bounds)?,
    };
    manifest.threads = trainer.threads();
    let progress_path = out.join("progress.tsv");
    let progress = if opts.resume.is_some() && progress_path.exists() {
        OpenOptions::new().append(true).open(&progress_path)?
    } else {
        let mut f = File::create(&progress_path)?;
        writeln!(f, "{}", LogRow::HEADER)?;
        f
    };
    let mut observer = RunObserver {
        spec,
        progress: BufWriter::new(progress),
        checkpoints: checkpoints.clone(),
        verbose: opts.verbose,
        rows: Vec::new(),
    };
    if let Err(e) = trainer.run(&mut observer) {
        if let TrainError::NonFinite { dump, .. } = &e {
            let path = out.join("nonfinite_batch.json");
            let text = serde_json::to_string_pretty(dump).map_err(|e| CliError::Io(e.to_string()))?;
            write_text(&path, &text)?;
            return Err(CliError::Numeric(format!("{e}; batch written to {}", path.display())));
        }
        return Err(e.into());
    }
    let log = observer.rows;

    let model = out.join("model.ffck");
    checkpoint_with_scene(&trainer, spec).save(&model)?;
    let test_ids = trainer.views.test.clone();
    let renders = if opts.skip_renders {
        let mut v = Vec::new();
        for &id in &test_ids {
            v.push((id, trainer.render(&trainer.views.views[id].camera)?.image));
        }
        v
    } else {
        render_views(&trainer, &test_ids, &out.join("renders"), 1.0)?
    };
    let mut test_report = MetricReport::default();
    for (id, img) in &renders {
        let v = &trainer.views.views[*id];
        test_report.views.push(MetricReport::evaluate(*id, img, &v.image, None, spec.train.background)?);
    }
    write_text(&out.join("metrics.csv"), &test_report.to_csv())?;

    manifest.outputs.insert("checkpoint".into(), "model.ffck".into());
    manifest.outputs.insert("checkpoints".into(), "checkpoints".into());
    manifest.outputs.insert("progress".into(), "progress.tsv".into());
    manifest.outputs.insert("metrics".into(), "metrics.csv".into());
    if !opts.skip_renders {
        manifest.outputs.insert("renders".into(), "renders".into());
    }
    if let Some(r) = &opts.resume {
        manifest.outputs.insert("resumed_from".into(), r.display().to_string());
    }
    manifest.finish(out)?;
    Ok(TrainSummary {
        run_dir: out.to_path_buf(),
        checkpoint: model,
        label: spec.label().into(),
        log,
        test_report,
        renders,
        trainer,
    })
}

/// A trained model with the spec and views it was trained on.
pub struct LoadedRun {
    pub spec: RunSpec,
    pub trainer: Trainer,
}

/// Restores a checkpoint written by [`cmd_train`].
pub fn load_run(checkpoint: &Path) -> Result<LoadedRun, CliError> {
    let ck = Checkpoint::load(checkpoint)?;
    let mut spec = RunSpec {
        train: Trainer::config_from_checkpoint(&ck)?,
        ..RunSpec::default()
    };
    for (k, v) in ck.metadata.iter().filter(|(k, _)| k.starts_with("scene.")) {
        spec.scene.set(k, v).map_err(CliError::Config)?;
    }
    let LoadedScene { views, bounds, .. } = spec.scene.load(spec.train.seed, spec.train.background)?;
    let trainer = Trainer::from_checkpoint(&ck, spec.train.clone(), views, bounds)?;
    Ok(LoadedRun { spec, trainer })
}

/// Deterministic renders (PNG and depth PFM) of `views` at `scale` times the
/// stored resolution.
pub fn cmd_render(checkpoint: &Path, out: &Path, views: &EvalSplit, scale: f64) -> Result<Vec<PathBuf>, CliError> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(CliError::Config(format!("scale must be positive, got {scale}")));
    }
    let run = load_run(checkpoint)?;
    let mut manifest = RunManifest::new("render", &run.spec);
    let ids = views.ids(&run.trainer);
    render_views(&run.trainer, &ids, out, scale)?;
    manifest.outputs.insert("checkpoint".into(), checkpoint.display().to_string());
    manifest.outputs.insert("scale".into(), scale.to_string());
    manifest.finish(out)?;
    Ok(ids.iter().map(|&id| out.join(format!("{}.png", view_name(id)))).collect())
}

/// Metrics of a checkpoint on `views`, written to `out/metrics.csv`.
pub fn cmd_eval(checkpoint: &Path, out: &Path, views: &EvalSplit, use_masks: bool) -> Result<MetricReport, CliError> {
    let run = load_run(checkpoint)?;
    create_dir(out)?;
    let mut manifest = RunManifest::new("eval", &run.spec);
    let ids = views.ids(&run.trainer);
    let report = run.trainer.evaluate_masked(&ids, use_masks)?;
    write_text(&out.join("metrics.csv"), &report.to_csv())?;
    manifest.outputs.insert("checkpoint".into(), checkpoint.display().to_string());
    manifest.outputs.insert("metrics".into(), "metrics.csv".into());
    manifest.outputs.insert("masked".into(), use_masks.to_string());
    manifest.finish(out)?;
    Ok(report)
}

fn quiet() -> TrainOptions {
    TrainOptions {
        skip_renders: true,
        ..TrainOptions::default()
    }
}

/// One static-mask run per visible ratio; writes `mask_study.csv` with
/// `ratio,psnr` and one comparison strip per held-out view (target first).
pub fn cmd_mask_study(spec: &RunSpec, ratios: &[f64], out: &Path) -> Result<Vec<(f64, f64)>, CliError> {
    if ratios.is_empty() {
        return Err(CliError::Config("mask study needs at least one ratio".into()));
    }
    if let Some(r) = ratios.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
        return Err(CliError::Config(format!("ratios must lie in (0, 1], got {r}")));
    }
    spec.validate()?;
    create_dir(out)?;
    let mut manifest = RunManifest::new("mask-study", spec);
    let mut rows = Vec::with_capacity(ratios.len());
    let mut strips: Vec<(usize, Vec<Image>)> = Vec::new();
    for &ratio in ratios {
        let mut run = spec.clone();
        run.train.curriculum_fraction = 0.0;
        run.train.occlusion.weight = 0.0;
        run.train.static_ratio = (ratio < 1.0).then_some(ratio);
        let name = format!("ratio_{ratio:.3}");
        let summary = cmd_train(&run, &out.join(&name), &quiet())?;
        rows.push((ratio, summary.test_report.mean_psnr()));
        if strips.is_empty() {
            strips = summary.renders.iter().map(|(id, _)| (*id, vec![summary.trainer.views.views[*id].image.clone()])).collect();
        }
        for ((_, images), (_, img)) in strips.iter_mut().zip(summary.renders) {
            images.push(img);
        }
        manifest.outputs.insert(name.clone(), name);
    }
    let strip_dir = out.join("strips");
    create_dir(&strip_dir)?;
    for (id, images) in &strips {
        let refs: Vec<&Image> = images.iter().collect();
        Image::hstack(&refs).save_png(&strip_dir.join(format!("{}.png", view_name(*id))))?;
    }
    let mut csv = String::from("ratio,psnr\n");
    for (r, p) in &rows {
        writeln!(csv, "{r},{p:.6}").expect("write to string");
    }
    write_text(&out.join("mask_study.csv"), &csv)?;
    manifest.outputs.insert("csv".into(), "mask_study.csv".into());
    manifest.outputs.insert("strips".into(), "strips".into());
    manifest.finish(out)?;
    Ok(rows)
}

/// One row of the occlusion ablation grid.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub near: f64,
    /// Regularization range; `None` for the run without the occlusion term.
    pub range: Option<usize>,
    pub psnr: f64,
    /// Mean density over the first `density_range` samples of training rays.
    pub near_density: f64,
}

/// Grid over near bounds and regularization ranges with the occlusion term on
/// and off. Densities are measured over the first `occ.range` samples of the
/// base config for every row. Writes `ablate_occ.csv`.
pub fn cmd_ablate_occ(spec: &RunSpec, ranges: &[usize], nears: &[f64], out: &Path) -> Result<Vec<AblationRow>, CliError> {
    if ranges.is_empty() || nears.is_empty() {
        return Err(CliError::Config("ablation needs at least one range and one near bound".into()));
    }
    let k = spec.train.penalized_samples();
    if let Some(m) = ranges.iter().find(|&&m| m > k) {
        return Err(CliError::Config(format!("regularization range {m} exceeds {k} samples per ray")));
    }
    spec.validate()?;
    create_dir(out)?;
    let mut manifest = RunManifest::new("ablate-occ", spec);
    let density_range = spec.train.occlusion.range.max(1);
    let weight = if spec.train.occlusion.weight > 0.0 { spec.train.occlusion.weight } else { 0.01 };
    let mut rows = Vec::new();
    for &near in nears {
        let settings = std::iter::once(None).chain(ranges.iter().map(|&m| Some(m)));
        for range in settings {
            let mut run = spec.clone();
            run.scene.near = Some(near);
            match range {
                None => run.train.occlusion.weight = 0.0,
                Some(m) => {
                    run.train.occlusion.weight = weight;
                    run.train.occlusion.range = m;
                    run.train.occlusion.bw_range = run.train.occlusion.bw_range.max(m).min(k);
                }
            }
            let name = match range {
                None => format!("near_{near}_off"),
                Some(m) => format!("near_{near}_m{m}"),
            };
            let summary = cmd_train(&run, &out.join(&name), &quiet())?;
            rows.push(AblationRow {
                near,
                range,
                psnr: summary.test_report.mean_psnr(),
                near_density: summary.trainer.mean_near_density(density_range)?,
            });
            manifest.outputs.insert(name.clone(), name);
        }
    }
    let mut csv = String::from("near,range,occ,psnr,near_density\n");
    for r in &rows {
        let (m, on) = match r.range {
            None => ("-".to_string(), "off"),
            Some(m) => (m.to_string(), "on"),
        };
        writeln!(csv, "{},{m},{on},{:.6},{:.6}", r.near, r.psnr, r.near_density).expect("write to string");
    }
    write_text(&out.join("ablate_occ.csv"), &csv)?;
    manifest.outputs.insert("csv".into(), "ablate_occ.csv".into());
    manifest.finish(out)?;
    Ok(rows)
}
