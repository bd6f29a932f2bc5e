//! The training loop: ray batches, frequency curriculum, loss, clipped Adam,
//! checkpoints and held-out evaluation.

mod config;
mod shard;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

pub use self::config::{
    curriculum_fraction_for_views, lr_at, LrSchedule, TrainConfig, CONFIG_KEYS, NINE_VIEW_ALT_FRACTION, RESUMABLE_KEYS,
};
use self::shard::{shard_pass, ShardJob, ShardOutput};
use crate::autodiff::{adam_step, clip_gradients_in_place, AdamState, AutodiffError, Checkpoint, CheckpointError, FlushDenormals, Tensor};
use crate::encoding::{frequency_mask, hard_mask_cutoff, FrequencyMask};
use crate::field::{FieldError, RadianceField};
use crate::losses::LossError;
use crate::metrics::{MetricError, MetricReport};
use crate::rendering::{render_view, stratified_samples, Camera, Ray, RenderError, RenderOutput, RenderSettings, SceneBounds};
use crate::scenes::ViewSet;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "FIELDFORGE_THREADS";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite {what} at iteration {iteration}")]
    NonFinite {
        iteration: u64,
        what: String,
        dump: Box<BatchDump>,
    },
    #[error("cannot resume: {0}")]
    Resume(String),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("{0}")]
    Io(String),
}

/// The batch that produced a non-finite value.
#[derive(Clone, Debug, Default, Serialize)]
pub struct BatchDump {
    pub iteration: u64,
    pub lr: f64,
    pub mse: f64,
    pub occ: f64,
    pub view_ids: Vec<usize>,
    pub pixels: Vec<(u32, u32)>,
    pub detail: String,
}

/// Losses of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    /// Iteration the step was taken at (before the increment).
    pub iteration: u64,
    pub mse: f64,
    pub occ: f64,
    pub loss: f64,
    pub lr: f64,
    pub visible_bands: usize,
}

/// One progress line.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub iter: u64,
    pub mse: f64,
    pub occ: f64,
    pub lr: f64,
    pub visible_bands: usize,
    pub psnr_holdout: Option<f64>,
}

impl LogRow {
    pub const HEADER: &'static str = "iter\tmse\tocc\tlr\tvisible_bands\tpsnr_holdout";

    pub fn to_tsv(&self) -> String {
        format!(
            "{}\t{:.8e}\t{:.8e}\t{:.6e}\t{}\t{}",
            self.iter,
            self.mse,
            self.occ,
            self.lr,
            self.visible_bands,
            self.psnr_holdout.map_or("nan".into(), |p| format!("{p:.4}"))
        )
    }
}

/// Hooks called by [`Trainer::run`].
pub trait TrainObserver {
    fn on_log(&mut self, _row: &LogRow) -> Result<(), TrainError> {
        Ok(())
    }

    fn on_checkpoint(&mut self, _trainer: &Trainer) -> Result<(), TrainError> {
        Ok(())
    }
}

impl TrainObserver for () {}

/// Collects every log row.
impl TrainObserver for Vec<LogRow> {
    fn on_log(&mut self, row: &LogRow) -> Result<(), TrainError> {
        self.push(*row);
        Ok(())
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed of an independent random stream keyed by `(seed, parts...)`.
pub(crate) fn stream_seed(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix(seed), |acc, &p| splitmix(acc ^ splitmix(p)))
}

const INIT_STREAM: u64 = u64::MAX;

/// Masks for positions and directions at iteration `t`.
pub fn frequency_masks(cfg: &TrainConfig, t: u64) -> (FrequencyMask, FrequencyMask) {
    let enc = cfg.field.encoding;
    match cfg.static_ratio {
        Some(r) => (
            FrequencyMask::static_ratio(enc.coord_bands, r),
            FrequencyMask::static_ratio(enc.dir_bands, r),
        ),
        None => {
            let end = cfg.curriculum_end();
            (frequency_mask(t, end, enc.coord_bands), frequency_mask(t, end, enc.dir_bands))
        }
    }
}

/// Hard visible-entry count of the position mask at iteration `t` (raw block included).
pub fn visible_bands(cfg: &TrainConfig, t: u64) -> usize {
    let bands = cfg.field.encoding.coord_bands;
    match cfg.static_ratio {
        Some(r) => ((bands as f64 * r).floor() as usize).min(bands) + 3,
        None => hard_mask_cutoff(t, cfg.curriculum_end(), bands),
    }
}

/// Worker count after applying [`THREADS_ENV`].
pub fn resolve_threads(requested: usize) -> usize {
    let cap = std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()).filter(|&n| n > 0);
    let n = if requested == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        requested
    };
    cap.map_or(n, |c| n.min(c)).max(1)
}

/// Owns the model, optimizer state and training views.
pub struct Trainer {
    pub config: TrainConfig,
    pub coarse: RadianceField<f32>,
    pub fine: Option<RadianceField<f32>>,
    pub adam: AdamState<f32>,
    pub iteration: u64,
    /// Exponential moving average of the photometric loss.
    pub mse_ema: f64,
    pub views: ViewSet,
    pub bounds: SceneBounds,
    pool: Option<rayon::ThreadPool>,
}

impl Trainer {
    pub fn new(config: TrainConfig, views: ViewSet, bounds: SceneBounds) -> Result<Self, TrainError> {
        config.validate().map_err(TrainError::Config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, &[INIT_STREAM]));
        let coarse = RadianceField::new(config.field, &mut rng)?;
        let fine = if config.two_stage {
            Some(RadianceField::new(config.field, &mut rng)?)
        } else {
            None
        };
        let shapes: Vec<Vec<usize>> = coarse
            .tensors()
            .into_iter()
            .chain(fine.iter().flat_map(|f| f.tensors()))
            .map(|t| t.shape().to_vec())
            .collect();
        let adam = AdamState::new(shapes.iter().map(Vec::as_slice));
        Self::assemble(config, coarse, fine, adam, 0, f64::NAN, views, bounds)
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        config: TrainConfig,
        coarse: RadianceField<f32>,
        fine: Option<RadianceField<f32>>,
        adam: AdamState<f32>,
        iteration: u64,
        mse_ema: f64,
        views: ViewSet,
        bounds: SceneBounds,
    ) -> Result<Self, TrainError> {
        if views.train.is_empty() {
            return Err(TrainError::Config("at least one training view is required".into()));
        }
        let threads = resolve_threads(config.threads);
        let pool = if threads > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build()
                    .map_err(|e| TrainError::Config(format!("thread pool: {e}")))?,
            )
        } else {
            None
        };
        Ok(Trainer {
            config,
            coarse,
            fine,
            adam,
            iteration,
            mse_ema,
            views,
            bounds,
            pool,
        })
    }

    pub fn threads(&self) -> usize {
        self.pool.as_ref().map_or(1, |p| p.current_num_threads())
    }

    /// Parameter names in optimizer order.
    pub fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.coarse.param_names().into_iter().map(|n| format!("coarse.{n}")).collect();
        if let Some(f) = &self.fine {
            names.extend(f.param_names().into_iter().map(|n| format!("fine.{n}")));
        }
        names
    }

    pub fn masks(&self) -> (FrequencyMask, FrequencyMask) {
        frequency_masks(&self.config, self.iteration)
    }

    pub fn is_done(&self) -> bool {
        self.iteration >= self.config.total_iters
    }

    /// One optimizer step on a fresh random batch.
    pub fn step(&mut self) -> Result<StepStats, TrainError> {
        let _ftz = FlushDenormals::enable();
        let cfg = &self.config;
        let t = self.iteration;
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, &[t]));

        let first = &self.views.views[self.views.train[0]];
        let (w, h) = (first.image.width, first.image.height);
        let per_view = (w * h) as usize;
        let total_px = per_view * self.views.train.len();
        let mut view_ids = Vec::with_capacity(cfg.batch_size);
        let mut pixels = Vec::with_capacity(cfg.batch_size);
        let mut rays: Vec<Ray> = Vec::with_capacity(cfg.batch_size);
        let mut targets = Vec::with_capacity(cfg.batch_size * 3);
        for _ in 0..cfg.batch_size {
            let g = rng.gen_range(0..total_px);
            let view = self.views.train[g / per_view];
            let (x, y) = ((g % per_view) as u32 % w, (g % per_view) as u32 / w);
            let v = &self.views.views[view];
            rays.push(v.camera.ray(x, y)?);
            targets.extend(v.image.pixel(x, y));
            view_ids.push(view);
            pixels.push((x, y));
        }
        let t_values: Vec<Vec<f64>> = rays.iter().map(|r| stratified_samples(r, cfg.samples, Some(&mut rng))).collect();
        let (mask_x, mask_d) = frequency_masks(cfg, t);
        let lr = lr_at(t, cfg.total_iters, &cfg.lr);

        let jobs: Vec<ShardJob> = (0..cfg.batch_size)
            .step_by(cfg.shard_rays)
            .enumerate()
            .map(|(i, start)| {
                let end = (start + cfg.shard_rays).min(cfg.batch_size);
                ShardJob {
                    rays: &rays[start..end],
                    t_values: &t_values[start..end],
                    targets: &targets[3 * start..3 * end],
                    seed: stream_seed(cfg.seed, &[t, i as u64 + 1]),
                }
            })
            .collect();
        let run = |job: &ShardJob| {
            let _ftz = FlushDenormals::enable();
            shard_pass(&self.coarse, self.fine.as_ref(), cfg, &self.bounds, (&mask_x, &mask_d), job)
        };
        let outputs: Vec<Result<ShardOutput, TrainError>> = match &self.pool {
            Some(pool) => {
                use rayon::prelude::*;
                pool.install(|| jobs.par_iter().map(run).collect())
            }
            None => jobs.iter().map(run).collect(),
        };

        let dump = |what: &str, detail: String, mse: f64, occ: f64| TrainError::NonFinite {
            iteration: t,
            what: what.into(),
            dump: Box::new(BatchDump {
                iteration: t,
                lr,
                mse,
                occ,
                view_ids: view_ids.clone(),
                pixels: pixels.clone(),
                detail,
            }),
        };

        // fixed-order reduction
        let mut grads: Option<Vec<Tensor<f32>>> = None;
        let (mut mse, mut occ) = (0.0f64, 0.0f64);
        for out in outputs {
            let out = match out {
                Ok(o) => o,
                Err(TrainError::Autodiff(e)) => return Err(dump("forward value", e.to_string(), f64::NAN, f64::NAN)),
                Err(TrainError::Field(FieldError::Layer { layer, source })) => {
                    return Err(dump("forward value", format!("layer {layer}: {source}"), f64::NAN, f64::NAN))
                }
                Err(e) => return Err(e),
            };
            mse += out.mse;
            occ += out.occ;
            match &mut grads {
                None => grads = Some(out.grads),
                Some(acc) => {
                    for (a, g) in acc.iter_mut().zip(&out.grads) {
                        a.add_assign(g);
                    }
                }
            }
        }
        let mut grads = grads.expect("batch has at least one shard");
        let loss = mse + cfg.occlusion.weight * occ;
        if !loss.is_finite() {
            return Err(dump("loss", format!("mse {mse}, occ {occ}"), mse, occ));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(dump("gradient", format!("parameter {}", self.param_names()[i]), mse, occ));
        }
        let clip_value = if cfg.clip_value > 0.0 { cfg.clip_value } else { f64::INFINITY };
        let clip_norm = if cfg.clip_norm > 0.0 { cfg.clip_norm } else { f64::INFINITY };
        clip_gradients_in_place(&mut grads, clip_value, clip_norm);

        let mut params: Vec<&mut Tensor<f32>> = self.coarse.tensors_mut();
        if let Some(f) = &mut self.fine {
            params.extend(f.tensors_mut());
        }
        adam_step(&mut params, &grads, &mut self.adam, lr)?;

        let visible = visible_bands(&self.config, t);
        self.mse_ema = if self.mse_ema.is_nan() { mse } else { 0.99 * self.mse_ema + 0.01 * mse };
        self.iteration += 1;
        Ok(StepStats {
            iteration: t,
            mse,
            occ,
            loss,
            lr,
            visible_bands: visible,
        })
    }

    /// Trains to `total_iters`, logging every `log_every` steps and at the end.
    pub fn run(&mut self, observer: &mut dyn TrainObserver) -> Result<(), TrainError> {
        while !self.is_done() {
            let stats = self.step()?;
            let it = self.iteration;
            let cfg = &self.config;
            let last = it == cfg.total_iters;
            let eval = !self.views.test.is_empty() && ((cfg.eval_every > 0 && it % cfg.eval_every == 0) || (last && cfg.eval_every > 0));
            let log = (cfg.log_every > 0 && it % cfg.log_every == 0) || last || eval;
            if log {
                let psnr_holdout = if eval { Some(self.evaluate(&self.views.test.clone())?.mean_psnr()) } else { None };
                observer.on_log(&LogRow {
                    iter: it,
                    mse: stats.mse,
                    occ: stats.occ,
                    lr: stats.lr,
                    visible_bands: stats.visible_bands,
                    psnr_holdout,
                })?;
            }
            if (self.config.checkpoint_every > 0 && it % self.config.checkpoint_every == 0) || last {
                observer.on_checkpoint(self)?;
            }
        }
        Ok(())
    }

    pub fn render_settings(&self) -> RenderSettings {
        RenderSettings {
            samples: self.config.samples,
            fine_samples: self.config.fine_samples,
            background: self.config.background,
            chunk_rays: self.config.eval_chunk_rays,
            ..RenderSettings::default()
        }
    }

    /// Deterministic render with the masks of the current iteration.
    pub fn render(&self, camera: &Camera) -> Result<RenderOutput, TrainError> {
        let _ftz = FlushDenormals::enable();
        let (mx, md) = self.masks();
        Ok(render_view(&self.coarse, self.fine.as_ref(), camera, &self.bounds, (&mx, &md), &self.render_settings())?)
    }

    /// Metrics of the listed views against their images.
    pub fn evaluate(&self, view_ids: &[usize]) -> Result<MetricReport, TrainError> {
        self.evaluate_masked(view_ids, false)
    }

    /// Like [`Trainer::evaluate`]; with `use_masks` each view's mask (full frame
    /// when absent) restricts the metrics.
    pub fn evaluate_masked(&self, view_ids: &[usize], use_masks: bool) -> Result<MetricReport, TrainError> {
        let mut report = MetricReport {
            masked: use_masks,
            ..MetricReport::default()
        };
        for &id in view_ids {
            let v = self.views.views.get(id).ok_or(TrainError::Config(format!("view {id} out of range for {} views", self.views.len())))?;
            let out = self.render(&v.camera)?;
            let full;
            let mask = match (&v.mask, use_masks) {
                (_, false) => None,
                (Some(m), true) => Some(m.as_slice()),
                (None, true) => {
                    full = vec![true; v.image.pixel_count()];
                    Some(full.as_slice())
                }
            };
            report.views.push(MetricReport::evaluate(id, &out.image, &v.image, mask, self.config.background)?);
        }
        Ok(report)
    }

    /// Mean predicted density over the first `m` deterministic samples of every
    /// training-view ray.
    pub fn mean_near_density(&self, m: usize) -> Result<f64, TrainError> {
        let _ftz = FlushDenormals::enable();
        let field = self.fine.as_ref().unwrap_or(&self.coarse);
        let (mx, md) = self.masks();
        let m = m.min(self.config.samples);
        let mut total = 0.0;
        let mut count = 0usize;
        for v in self.views.train_views() {
            let cam = &v.camera;
            let rays: Vec<Ray> = (0..cam.height).flat_map(|y| (0..cam.width).map(move |x| (x, y))).map(|(x, y)| cam.ray(x, y)).collect::<Result<_, _>>()?;
            for chunk in rays.chunks(self.config.eval_chunk_rays.max(1)) {
                let t: Vec<Vec<f64>> = chunk
                    .iter()
                    .map(|r| stratified_samples(r, self.config.samples, None::<&mut ChaCha8Rng>)[..m].to_vec())
                    .collect();
                let (pos, dirs) = crate::rendering::sample_points(chunk, &t, &self.bounds);
                let (sigma, _) = field.evaluate(&pos, &dirs, &mx, &md)?;
                total += sigma.iter().map(|&s| s as f64).sum::<f64>();
                count += sigma.len();
            }
        }
        Ok(if count == 0 { 0.0 } else { total / count as f64 })
    }

    /// Model, optimizer and config in one checkpoint.
    pub fn to_checkpoint(&self) -> Checkpoint<f32> {
        let mut ck = Checkpoint::default();
        self.coarse.write_checkpoint("coarse.", &mut ck);
        if let Some(f) = &self.fine {
            f.write_checkpoint("fine.", &mut ck);
        }
        ck.push_adam(&self.param_names(), &self.adam);
        self.config.field.to_metadata(&mut ck.metadata);
        for (k, v) in self.config.to_pairs() {
            ck.metadata.insert(format!("cfg.{k}"), v);
        }
        ck.metadata.insert("train.iteration".into(), self.iteration.to_string());
        ck.metadata.insert("train.mse_ema".into(), self.mse_ema.to_string());
        ck
    }

    /// Config stored in a checkpoint.
    pub fn config_from_checkpoint(ck: &Checkpoint<f32>) -> Result<TrainConfig, TrainError> {
        let mut cfg = TrainConfig::default();
        for (k, v) in ck.metadata.iter().filter_map(|(k, v)| k.strip_prefix("cfg.").map(|k| (k, v))) {
            cfg.set(k, v).map_err(TrainError::Resume)?;
        }
        Ok(cfg)
    }

    /// Restores model and optimizer state. `config` must match the stored one
    /// except for [`RESUMABLE_KEYS`].
    pub fn from_checkpoint(ck: &Checkpoint<f32>, config: TrainConfig, views: ViewSet, bounds: SceneBounds) -> Result<Self, TrainError> {
        config.validate().map_err(TrainError::Config)?;
        let stored = Self::config_from_checkpoint(ck)?.to_pairs();
        let wanted = config.to_pairs();
        let mismatched: BTreeMap<&String, (&String, &String)> = wanted
            .iter()
            .filter(|(k, _)| !RESUMABLE_KEYS.contains(&k.as_str()))
            .filter_map(|(k, v)| match stored.get(k) {
                Some(s) if s == v => None,
                Some(s) => Some((k, (s, v))),
                None => None,
            })
            .collect();
        if !mismatched.is_empty() {
            let list: Vec<String> = mismatched.iter().map(|(k, (s, v))| format!("{k}: checkpoint {s}, requested {v}")).collect();
            return Err(TrainError::Resume(list.join("; ")));
        }
        let coarse = RadianceField::read_checkpoint(config.field, "coarse.", ck)?;
        let fine = if config.two_stage {
            Some(RadianceField::read_checkpoint(config.field, "fine.", ck)?)
        } else {
            None
        };
        let mut names: Vec<String> = coarse.param_names().into_iter().map(|n| format!("coarse.{n}")).collect();
        if let Some(f) = &fine {
            names.extend(f.param_names().into_iter().map(|n| format!("fine.{n}")));
        }
        let adam = ck.adam(&names)?;
        let iteration: u64 = ck.meta_parse("train.iteration")?;
        if iteration > config.total_iters {
            return Err(TrainError::Resume(format!("checkpoint is at iteration {iteration}, past total_iters {}", config.total_iters)));
        }
        let mse_ema: f64 = ck.meta_parse("train.mse_ema")?;
        Self::assemble(config, coarse, fine, adam, iteration, mse_ema, views, bounds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stream_seeds_differ() {
        assert_ne!(stream_seed(1, &[0]), stream_seed(1, &[1]));
        assert_ne!(stream_seed(1, &[0]), stream_seed(2, &[0]));
        assert_ne!(stream_seed(1, &[0, 1]), stream_seed(1, &[1, 0]));
        assert_eq!(stream_seed(7, &[3]), stream_seed(7, &[3]));
    }

    #[test]
    fn visible_band_count() {
        let cfg = TrainConfig {
            total_iters: 100,
            curriculum_fraction: 0.5,
            ..Default::default()
        };
        assert_eq!(visible_bands(&cfg, 0), 3);
        assert_eq!(visible_bands(&cfg, 25), 11);
        assert_eq!(visible_bands(&cfg, 50), 19);
        let fixed = TrainConfig {
            static_ratio: Some(0.1),
            ..cfg
        };
        assert_eq!(visible_bands(&fixed, 0), 4);
        assert_eq!(visible_bands(&fixed, 99), 4);
    }

    #[test]
    fn log_row_format() {
        let row = LogRow {
            iter: 10,
            mse: 0.5,
            occ: 0.0,
            lr: 1e-3,
            visible_bands: 5,
            psnr_holdout: None,
        };
        let line = row.to_tsv();
        assert_eq!(line.split('\t').count(), LogRow::HEADER.split('\t').count());
        assert!(line.ends_with("\tnan"));
    }
}
