use std::collections::BTreeMap;
use std::str::FromStr;

use crate::field::FieldConfig;
use crate::losses::OcclusionConfig;

/// Exponential decay from `start` to `end` with a linear warm-up multiplier.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub start: f64,
    pub end: f64,
    pub warmup_steps: u64,
    pub warmup_multiplier: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            start: 2e-3,
            end: 2e-5,
            warmup_steps: 512,
            warmup_multiplier: 0.01,
        }
    }
}

/// Learning rate at iteration `t` of `total`.
pub fn lr_at(t: u64, total: u64, s: &LrSchedule) -> f64 {
    let p = if total == 0 { 1.0 } else { (t as f64 / total as f64).clamp(0.0, 1.0) };
    let base = if p >= 1.0 {
        s.end
    } else {
        ((1.0 - p) * s.start.ln() + p * s.end.ln()).exp()
    };
    if s.warmup_steps > 0 && t < s.warmup_steps {
        base * (s.warmup_multiplier + (1.0 - s.warmup_multiplier) * (t as f64 / s.warmup_steps as f64))
    } else {
        base
    }
}

/// Fraction of training over which the frequency mask opens, by input-view
/// count: 3 -> 0.9, 6 -> 0.7, 9 -> 0.2, other counts use the nearest of those.
pub fn curriculum_fraction_for_views(n_views: usize) -> f64 {
    match n_views {
        0..=4 => 0.9,
        5..=7 => 0.7,
        _ => 0.2,
    }
}

/// Alternative nine-view schedule.
pub const NINE_VIEW_ALT_FRACTION: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub total_iters: u64,
    /// Rays per iteration.
    pub batch_size: usize,
    /// Stratified samples per ray (coarse stage).
    pub samples: usize,
    /// Importance samples per ray for the second stage.
    pub fine_samples: usize,
    pub two_stage: bool,
    pub curriculum_fraction: f64,
    /// Fixed fraction of visible bands for the whole run; overrides the curriculum.
    pub static_ratio: Option<f64>,
    pub lr: LrSchedule,
    /// Elementwise gradient clip (0 disables).
    pub clip_value: f64,
    /// Global-norm gradient clip (0 disables).
    pub clip_norm: f64,
    pub occlusion: OcclusionConfig,
    pub field: FieldConfig,
    pub seed: u64,
    /// Held-out evaluation cadence in iterations (0 disables).
    pub eval_every: u64,
    pub log_every: u64,
    /// Checkpoint cadence in iterations (0 disables).
    pub checkpoint_every: u64,
    /// Rays per gradient shard; fixes the reduction order.
    pub shard_rays: usize,
    /// Worker threads (0 = one per core, capped by `FIELDFORGE_THREADS`).
    pub threads: usize,
    pub background: [f64; 3],
    /// Rays per chunk when rendering held-out views.
    pub eval_chunk_rays: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            total_iters: 5000,
            batch_size: 512,
            samples: 64,
            fine_samples: 64,
            two_stage: false,
            curriculum_fraction: 0.9,
            static_ratio: None,
            lr: LrSchedule::default(),
            clip_value: 0.1,
            clip_norm: 0.1,
            occlusion: OcclusionConfig::default(),
            field: FieldConfig::default(),
            seed: 0,
            eval_every: 0,
            log_every: 100,
            checkpoint_every: 0,
            shard_rays: 64,
            threads: 0,
            background: [1.0; 3],
            eval_chunk_rays: 1024,
        }
    }
}

impl TrainConfig {
    /// Iteration at which the frequency mask is fully open.
    pub fn curriculum_end(&self) -> u64 {
        (self.curriculum_fraction * self.total_iters as f64).floor() as u64
    }

    /// Samples per ray seen by the occlusion penalty.
    pub fn penalized_samples(&self) -> usize {
        if self.two_stage {
            self.samples + self.fine_samples
        } else {
            self.samples
        }
    }

    /// No curriculum, no static mask and no occlusion term.
    pub fn is_plain(&self) -> bool {
        self.curriculum_end() == 0 && self.static_ratio.is_none_or(|r| r >= 1.0) && !self.occlusion.active()
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.curriculum_fraction) {
            return Err(format!("curriculum fraction must lie in [0, 1], got {}", self.curriculum_fraction));
        }
        if let Some(r) = self.static_ratio {
            if !(r > 0.0 && r <= 1.0) {
                return Err(format!("static ratio must lie in (0, 1], got {r}"));
            }
        }
        if self.batch_size == 0 {
            return Err("batch size must be at least 1".into());
        }
        if self.samples < 2 {
            return Err(format!("need at least 2 samples per ray, got {}", self.samples));
        }
        if self.two_stage && self.fine_samples == 0 {
            return Err("two-stage training needs fine samples".into());
        }
        if self.shard_rays == 0 {
            return Err("shard size must be at least 1".into());
        }
        let lr = &self.lr;
        if !(lr.start > 0.0 && lr.end > 0.0 && lr.warmup_multiplier > 0.0 && lr.warmup_multiplier <= 1.0) {
            return Err(format!("invalid learning-rate schedule {lr:?}"));
        }
        if !(self.clip_value >= 0.0 && self.clip_norm >= 0.0) {
            return Err("clip thresholds must be >= 0".into());
        }
        self.occlusion.validate(self.penalized_samples()).map_err(|e| e.to_string())?;
        self.field.validate().map_err(|e| e.to_string())?;
        Ok(())
    }
}

/// Every key accepted by [`TrainConfig::set`], in serialization order.
pub const CONFIG_KEYS: &[&str] = &[
    "total_iters",
    "batch_size",
    "samples",
    "fine_samples",
    "two_stage",
    "curriculum_fraction",
    "static_ratio",
    "lr.start",
    "lr.end",
    "lr.warmup_steps",
    "lr.warmup_multiplier",
    "clip.value",
    "clip.norm",
    "occ.weight",
    "occ.range",
    "occ.bw_prior",
    "occ.bw_range",
    "occ.bw_low",
    "occ.bw_high",
    "field.coord_bands",
    "field.dir_bands",
    "field.trunk_depth",
    "field.trunk_width",
    "field.skip_layer",
    "field.head_width",
    "seed",
    "eval_every",
    "log_every",
    "checkpoint_every",
    "shard_rays",
    "threads",
    "background",
    "eval_chunk_rays",
];

/// Keys that may differ between a checkpoint and the run resuming from it.
pub const RESUMABLE_KEYS: &[&str] = &["eval_every", "log_every", "checkpoint_every", "threads", "eval_chunk_rays"];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, String> {
    value.trim().parse().map_err(|_| format!("{key}: cannot parse {value:?}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, String> {
    match value.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(format!("{key}: expected a boolean, got {value:?}")),
    }
}

impl TrainConfig {
    /// Sets one dotted key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v = value;
        match key {
            "total_iters" => self.total_iters = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "samples" => self.samples = parse(key, v)?,
            "fine_samples" => self.fine_samples = parse(key, v)?,
            "two_stage" => self.two_stage = parse_bool(key, v)?,
            "curriculum_fraction" => self.curriculum_fraction = parse(key, v)?,
            "static_ratio" => {
                self.static_ratio = match v.trim() {
                    "none" | "" => None,
                    other => Some(parse(key, other)?),
                }
            }
            "lr.start" => self.lr.start = parse(key, v)?,
            "lr.end" => self.lr.end = parse(key, v)?,
            "lr.warmup_steps" => self.lr.warmup_steps = parse(key, v)?,
            "lr.warmup_multiplier" => self.lr.warmup_multiplier = parse(key, v)?,
            "clip.value" => self.clip_value = parse(key, v)?,
            "clip.norm" => self.clip_norm = parse(key, v)?,
            "occ.weight" => self.occlusion.weight = parse(key, v)?,
            "occ.range" => self.occlusion.range = parse(key, v)?,
            "occ.bw_prior" => self.occlusion.bw_prior_enabled = parse_bool(key, v)?,
            "occ.bw_range" => self.occlusion.bw_range = parse(key, v)?,
            "occ.bw_low" => self.occlusion.bw_low = parse(key, v)?,
            "occ.bw_high" => self.occlusion.bw_high = parse(key, v)?,
            "field.coord_bands" => self.field.encoding.coord_bands = parse(key, v)?,
            "field.dir_bands" => self.field.encoding.dir_bands = parse(key, v)?,
            "field.trunk_depth" => self.field.trunk_depth = parse(key, v)?,
            "field.trunk_width" => self.field.trunk_width = parse(key, v)?,
            "field.skip_layer" => {
                let s: usize = parse(key, v)?;
                self.field.skip_layer = (s > 0).then_some(s);
            }
            "field.head_width" => self.field.head_width = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "eval_every" => self.eval_every = parse(key, v)?,
            "log_every" => self.log_every = parse(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "shard_rays" => self.shard_rays = parse(key, v)?,
            "threads" => self.threads = parse(key, v)?,
            "background" => {
                let parts: Vec<f64> = v.split(',').map(|p| parse(key, p)).collect::<Result<_, _>>()?;
                self.background = parts
                    .try_into()
                    .map_err(|_| format!("{key}: expected three comma-separated values, got {v:?}"))?;
            }
            "eval_chunk_rays" => self.eval_chunk_rays = parse(key, v)?,
            _ => return Err(format!("unknown key {key:?}; valid keys: {}", CONFIG_KEYS.join(", "))),
        }
        Ok(())
    }

    /// Text form of every key; `set` on each pair reproduces the config exactly.
    pub fn to_pairs(&self) -> BTreeMap<String, String> {
        let o = &self.occlusion;
        let f = &self.field;
        let bg = self.background;
        let pairs: Vec<(&str, String)> = vec![
            ("total_iters", self.total_iters.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("samples", self.samples.to_string()),
            ("fine_samples", self.fine_samples.to_string()),
            ("two_stage", self.two_stage.to_string()),
            ("curriculum_fraction", self.curriculum_fraction.to_string()),
            ("static_ratio", self.static_ratio.map_or("none".into(), |r| r.to_string())),
            ("lr.start", self.lr.start.to_string()),
            ("lr.end", self.lr.end.to_string()),
            ("lr.warmup_steps", self.lr.warmup_steps.to_string()),
            ("lr.warmup_multiplier", self.lr.warmup_multiplier.to_string()),
            ("clip.value", self.clip_value.to_string()),
            ("clip.norm", self.clip_norm.to_string()),
            ("occ.weight", o.weight.to_string()),
            ("occ.range", o.range.to_string()),
            ("occ.bw_prior", o.bw_prior_enabled.to_string()),
            ("occ.bw_range", o.bw_range.to_string()),
            ("occ.bw_low", o.bw_low.to_string()),
            ("occ.bw_high", o.bw_high.to_string()),
            ("field.coord_bands", f.encoding.coord_bands.to_string()),
            ("field.dir_bands", f.encoding.dir_bands.to_string()),
            ("field.trunk_depth", f.trunk_depth.to_string()),
            ("field.trunk_width", f.trunk_width.to_string()),
            ("field.skip_layer", f.skip_layer.unwrap_or(0).to_string()),
            ("field.head_width", f.head_width.to_string()),
            ("seed", self.seed.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("log_every", self.log_every.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("shard_rays", self.shard_rays.to_string()),
            ("threads", self.threads.to_string()),
            ("background", format!("{},{},{}", bg[0], bg[1], bg[2])),
            ("eval_chunk_rays", self.eval_chunk_rays.to_string()),
        ];
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_examples() {
        let s = LrSchedule::default();
        assert!((lr_at(0, 5000, &s) - 2e-3 * 0.01).abs() < 1e-18);
        assert_eq!(lr_at(5000, 5000, &s), 2e-5);
        assert!((lr_at(2500, 5000, &s) - 2e-4).abs() < 1e-15);
        // half way through warm-up
        let base = lr_at(256, 5000, &LrSchedule { warmup_steps: 0, ..s });
        assert!((lr_at(256, 5000, &s) - base * 0.505).abs() < 1e-15);
    }

    #[test]
    fn view_fractions() {
        assert_eq!(curriculum_fraction_for_views(3), 0.9);
        assert_eq!(curriculum_fraction_for_views(6), 0.7);
        assert_eq!(curriculum_fraction_for_views(9), 0.2);
        assert_eq!(curriculum_fraction_for_views(1), 0.9);
        assert_eq!(curriculum_fraction_for_views(4), 0.9);
        assert_eq!(curriculum_fraction_for_views(5), 0.7);
        assert_eq!(curriculum_fraction_for_views(8), 0.2);
        assert_eq!(curriculum_fraction_for_views(20), 0.2);
    }

    #[test]
    fn curriculum_end_is_floored() {
        let cfg = TrainConfig {
            total_iters: 999,
            curriculum_fraction: 0.9,
            ..Default::default()
        };
        assert_eq!(cfg.curriculum_end(), 899);
    }

    #[test]
    fn pairs_round_trip() {
        let mut cfg = TrainConfig {
            static_ratio: Some(0.1),
            seed: 42,
            background: [0.0, 0.5, 1.0],
            ..Default::default()
        };
        cfg.field.skip_layer = None;
        cfg.occlusion.bw_prior_enabled = true;
        let mut back = TrainConfig::default();
        for (k, v) in cfg.to_pairs() {
            back.set(&k, &v).unwrap();
        }
        assert_eq!(back, cfg);
        assert_eq!(cfg.to_pairs().len(), CONFIG_KEYS.len());
        assert!(back.set("occ.wieght", "1").unwrap_err().contains("valid keys"));
    }

    #[test]
    fn validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            samples: 8,
            ..Default::default()
        };
        assert!(bad.validate().unwrap_err().contains("exceeds"));
        assert!(TrainConfig {
            curriculum_fraction: 1.5,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
