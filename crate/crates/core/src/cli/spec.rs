use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::CliError;
use crate::rendering::SceneBounds;
use crate::scenes::{
    load_pose_file, make_fixture, select_views, Fixture, PoseFileOptions, Protocol, SceneError, View, ViewSet, FIXTURE_NAMES,
};
use crate::trainer::{curriculum_fraction_for_views, TrainConfig, CONFIG_KEYS, NINE_VIEW_ALT_FRACTION};

/// Scene keys accepted next to [`CONFIG_KEYS`].
pub const SCENE_KEYS: &[&str] = &[
    "scene.fixture",
    "scene.image_size",
    "scene.poses",
    "scene.test_poses",
    "scene.protocol",
    "scene.downsample",
    "scene.views",
    "scene.near",
    "scene.far",
    "scene.bound",
];

/// Every named preset.
pub const PRESET_NAMES: &[&str] = &[
    "fixture3", "fixture6", "fixture9", "fixture9-alt", "blender8", "dtu3", "dtu6", "dtu9", "dtu3-long", "llff3", "llff6", "llff9",
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ProtocolKind {
    Blender,
    Dtu,
    Llff,
    Explicit(Vec<usize>),
}

impl ProtocolKind {
    fn parse(v: &str) -> Result<Self, String> {
        match v.trim() {
            "blender" => Ok(ProtocolKind::Blender),
            "dtu" => Ok(ProtocolKind::Dtu),
            "llff" => Ok(ProtocolKind::Llff),
            other => match other.strip_prefix("explicit:") {
                Some(list) => list
                    .split(',')
                    .map(|s| s.trim().parse::<usize>().map_err(|_| format!("scene.protocol: bad view id {s:?}")))
                    .collect::<Result<_, _>>()
                    .map(ProtocolKind::Explicit),
                None => Err(format!("scene.protocol: expected blender, dtu, llff or explicit:<ids>, got {other:?}")),
            },
        }
    }

    fn text(&self) -> String {
        match self {
            ProtocolKind::Blender => "blender".into(),
            ProtocolKind::Dtu => "dtu".into(),
            ProtocolKind::Llff => "llff".into(),
            ProtocolKind::Explicit(ids) => {
                format!("explicit:{}", ids.iter().map(usize::to_string).collect::<Vec<_>>().join(","))
            }
        }
    }
}

/// Where the views come from. A pose file takes precedence over the fixture.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub fixture: String,
    pub image_size: u32,
    pub poses: Option<PathBuf>,
    /// Separate test split (Blender layout).
    pub test_poses: Option<PathBuf>,
    pub protocol: ProtocolKind,
    pub downsample: u32,
    pub views: usize,
    /// Overrides every camera's near bound.
    pub near: Option<f64>,
    pub far: Option<f64>,
    /// Half extent of the cube mapped onto the encoding domain (pose files only).
    pub bound: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            fixture: FIXTURE_NAMES[0].into(),
            image_size: 32,
            poses: None,
            test_poses: None,
            protocol: ProtocolKind::Dtu,
            downsample: 1,
            views: 3,
            near: None,
            far: None,
            bound: 1.5,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
    v.trim().parse().map_err(|_| format!("{key}: cannot parse {v:?}"))
}

fn parse_opt_f64(key: &str, v: &str) -> Result<Option<f64>, String> {
    match v.trim() {
        "" | "none" => Ok(None),
        s => parse_num(key, s).map(Some),
    }
}

fn opt_text(v: Option<f64>) -> String {
    v.map_or("none".into(), |x| x.to_string())
}

impl SceneSpec {
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        match key {
            "scene.fixture" => self.fixture = v.trim().into(),
            "scene.image_size" => self.image_size = parse_num(key, v)?,
            "scene.poses" => self.poses = (!v.trim().is_empty() && v.trim() != "none").then(|| PathBuf::from(v.trim())),
            "scene.test_poses" => self.test_poses = (!v.trim().is_empty() && v.trim() != "none").then(|| PathBuf::from(v.trim())),
            "scene.protocol" => self.protocol = ProtocolKind::parse(v)?,
            "scene.downsample" => self.downsample = parse_num(key, v)?,
            "scene.views" => self.views = parse_num(key, v)?,
            "scene.near" => self.near = parse_opt_f64(key, v)?,
            "scene.far" => self.far = parse_opt_f64(key, v)?,
            "scene.bound" => self.bound = parse_num(key, v)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> BTreeMap<String, String> {
        let path = |p: &Option<PathBuf>| p.as_ref().map_or("none".into(), |p| p.display().to_string());
        [
            ("scene.fixture", self.fixture.clone()),
            ("scene.image_size", self.image_size.to_string()),
            ("scene.poses", path(&self.poses)),
            ("scene.test_poses", path(&self.test_poses)),
            ("scene.protocol", self.protocol.text()),
            ("scene.downsample", self.downsample.to_string()),
            ("scene.views", self.views.to_string()),
            ("scene.near", opt_text(self.near)),
            ("scene.far", opt_text(self.far)),
            ("scene.bound", self.bound.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.views == 0 {
            return Err("scene.views must be at least 1".into());
        }
        if self.poses.is_none() && !FIXTURE_NAMES.contains(&self.fixture.as_str()) {
            return Err(format!("unknown fixture {:?} (known: {})", self.fixture, FIXTURE_NAMES.join(", ")));
        }
        if self.image_size == 0 || self.downsample == 0 {
            return Err("image size and downsample factor must be positive".into());
        }
        if !(self.bound > 0.0 && self.bound.is_finite()) {
            return Err(format!("scene.bound must be positive, got {}", self.bound));
        }
        if let (Some(n), Some(f)) = (self.near, self.far) {
            if !(0.0 <= n && n < f) {
                return Err(format!("need 0 <= near < far, got {n} and {f}"));
            }
        }
        if self.protocol == ProtocolKind::Blender && self.poses.is_some() && self.test_poses.is_none() {
            return Err("the blender protocol needs scene.test_poses".into());
        }
        Ok(())
    }
}

/// Views, bounds and (for fixtures) the analytic scene.
pub struct LoadedScene {
    pub views: ViewSet,
    pub bounds: SceneBounds,
    pub fixture: Option<Fixture>,
}

fn override_bounds(views: &mut [View], near: Option<f64>, far: Option<f64>) -> Result<(), CliError> {
    for v in views {
        if let Some(n) = near {
            v.camera.near = n;
        }
        if let Some(f) = far {
            v.camera.far = f;
        }
        v.camera.validate().map_err(|e| CliError::Config(e.to_string()))?;
    }
    Ok(())
}

impl SceneSpec {
    /// Loads the views; `seed` picks the fixture rig.
    pub fn load(&self, seed: u64, background: [f64; 3]) -> Result<LoadedScene, CliError> {
        self.validate().map_err(CliError::Config)?;
        let mut loaded = match &self.poses {
            None => {
                let fx = make_fixture(&self.fixture, self.views, self.image_size, seed)?;
                LoadedScene {
                    views: fx.views.clone(),
                    bounds: fx.scene.bounds,
                    fixture: Some(fx),
                }
            }
            Some(path) => {
                let defaults = PoseFileOptions::default();
                let opts = PoseFileOptions {
                    downsample: self.downsample,
                    background,
                    near: self.near.unwrap_or(defaults.near),
                    far: self.far.unwrap_or(defaults.far),
                };
                let views = match (&self.protocol, &self.test_poses) {
                    (ProtocolKind::Blender, Some(test_path)) => {
                        let train = load_pose_file(path, &opts)?;
                        let test = load_pose_file(test_path, &opts)?;
                        let split = select_views(train.len(), self.views, &Protocol::Blender { test_images: test.len() })?;
                        let offset = train.len();
                        let mut all = train.views;
                        all.extend(test.views);
                        let split = crate::scenes::Split {
                            train: split.train,
                            test: split.test.into_iter().map(|i| i + offset).collect(),
                        };
                        ViewSet::new(all)?.with_split(split)?
                    }
                    (ProtocolKind::Blender, None) => return Err(CliError::Config("the blender protocol needs scene.test_poses".into())),
                    (kind, _) => {
                        let set = load_pose_file(path, &opts)?;
                        let protocol = match kind {
                            ProtocolKind::Dtu => Protocol::Dtu,
                            ProtocolKind::Llff => Protocol::Llff,
                            ProtocolKind::Explicit(ids) => Protocol::Explicit(ids.clone()),
                            ProtocolKind::Blender => unreachable!("handled above"),
                        };
                        let split = select_views(set.len(), self.views, &protocol)?;
                        set.with_split(split)?
                    }
                };
                LoadedScene {
                    views,
                    bounds: SceneBounds::cube(self.bound),
                    fixture: None,
                }
            }
        };
        override_bounds(&mut loaded.views.views, self.near, self.far)?;
        Ok(loaded)
    }
}

/// Training config plus scene selection; everything a run depends on.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunSpec {
    pub train: TrainConfig,
    pub scene: SceneSpec,
}

/// Every key a config file or `--set` flag may use.
pub fn valid_keys() -> Vec<&'static str> {
    CONFIG_KEYS.iter().chain(SCENE_KEYS).copied().collect()
}

impl RunSpec {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let key = key.trim();
        let res = if key.starts_with("scene.") && SCENE_KEYS.contains(&key) {
            self.scene.set(key, value)
        } else if CONFIG_KEYS.contains(&key) {
            self.train.set(key, value)
        } else {
            return Err(CliError::Config(format!("unknown key {key:?}; valid keys: {}", valid_keys().join(", "))));
        };
        res.map_err(CliError::Config)
    }

    pub fn to_pairs(&self) -> BTreeMap<String, String> {
        let mut pairs = self.train.to_pairs();
        pairs.extend(self.scene.to_pairs());
        pairs
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self, CliError> {
        let mut spec = RunSpec::default();
        for (k, v) in pairs {
            spec.set(k, v)?;
        }
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.train.validate().map_err(CliError::Config)?;
        self.scene.validate().map_err(CliError::Config)
    }

    /// Short name of the method this config amounts to.
    pub fn label(&self) -> &'static str {
        let t = &self.train;
        if t.is_plain() {
            "plain"
        } else if t.static_ratio.is_some() {
            "static-mask"
        } else if t.curriculum_end() > 0 && t.occlusion.active() {
            "freenerf"
        } else if t.curriculum_end() > 0 {
            "frequency-reg"
        } else {
            "occlusion-reg"
        }
    }
}

/// Parses `key=value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("line {}: expected key=value, got {raw:?}", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Reads a `key=value` file, or the config section of a run manifest (`.json`).
pub fn read_config_file(path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    if path.extension().is_some_and(|e| e == "json") {
        let manifest: super::RunManifest =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        return Ok(manifest.config.into_iter().collect());
    }
    parse_config_text(&text)
}

fn pairs(items: &[(&str, &str)]) -> Vec<(String, String)> {
    items.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

fn fixture_preset(views: usize, fraction: f64) -> Vec<(String, String)> {
    let mut p = pairs(&[("scene.fixture", FIXTURE_NAMES[0])]);
    p.push(("scene.views".into(), views.to_string()));
    p.push(("curriculum_fraction".into(), fraction.to_string()));
    p
}

fn paper_field(coord_bands: usize) -> Vec<(String, String)> {
    let mut p = pairs(&[
        ("field.trunk_depth", "8"),
        ("field.trunk_width", "256"),
        ("field.skip_layer", "5"),
        ("field.head_width", "128"),
        ("field.dir_bands", "4"),
        ("two_stage", "true"),
    ]);
    p.push(("field.coord_bands".into(), coord_bands.to_string()));
    p
}

fn dtu_preset(views: usize, iters: u64) -> Vec<(String, String)> {
    let mut p = paper_field(16);
    p.extend(pairs(&[
        ("scene.protocol", "dtu"),
        ("batch_size", "4096"),
        ("samples", "128"),
        ("fine_samples", "128"),
        ("occ.range", "10"),
        ("occ.bw_prior", "true"),
        ("occ.bw_range", "15"),
        ("scene.near", "0.5"),
        ("scene.far", "3.5"),
        ("scene.bound", "1.5"),
    ]));
    p.push(("scene.views".into(), views.to_string()));
    p.push(("total_iters".into(), iters.to_string()));
    p.push(("curriculum_fraction".into(), curriculum_fraction_for_views(views).to_string()));
    p
}

fn llff_preset(views: usize, iters: u64) -> Vec<(String, String)> {
    let mut p = paper_field(16);
    p.extend(pairs(&[
        ("scene.protocol", "llff"),
        ("batch_size", "4096"),
        ("samples", "128"),
        ("fine_samples", "128"),
        ("occ.range", "20"),
        ("scene.near", "1"),
        ("scene.far", "20"),
        ("scene.bound", "20"),
    ]));
    p.push(("scene.views".into(), views.to_string()));
    p.push(("total_iters".into(), iters.to_string()));
    p.push(("curriculum_fraction".into(), curriculum_fraction_for_views(views).to_string()));
    p
}

/// Key/value pairs of a named preset, applied on top of the defaults.
pub fn preset(name: &str) -> Result<Vec<(String, String)>, CliError> {
    let p = match name {
        "fixture3" => fixture_preset(3, curriculum_fraction_for_views(3)),
        "fixture6" => fixture_preset(6, curriculum_fraction_for_views(6)),
        "fixture9" => fixture_preset(9, curriculum_fraction_for_views(9)),
        "fixture9-alt" => fixture_preset(9, NINE_VIEW_ALT_FRACTION),
        "blender8" => {
            let mut p = paper_field(9);
            p.extend(pairs(&[
                ("scene.protocol", "blender"),
                ("scene.views", "8"),
                ("total_iters", "200000"),
                ("batch_size", "1024"),
                ("samples", "64"),
                ("fine_samples", "128"),
                ("lr.start", "5e-4"),
                ("lr.end", "5e-5"),
                ("lr.warmup_steps", "0"),
                ("lr.warmup_multiplier", "1"),
                ("occ.range", "20"),
                ("scene.near", "2"),
                ("scene.far", "6"),
            ]));
            p.push(("curriculum_fraction".into(), curriculum_fraction_for_views(8).to_string()));
            p
        }
        "dtu3" => dtu_preset(3, 44_000),
        "dtu6" => dtu_preset(6, 88_000),
        "dtu9" => dtu_preset(9, 132_000),
        "dtu3-long" => dtu_preset(3, 88_000),
        "llff3" => llff_preset(3, 70_000),
        "llff6" => llff_preset(6, 140_000),
        "llff9" => llff_preset(9, 210_000),
        _ => {
            return Err(CliError::Config(format!("unknown preset {name:?} (known: {})", PRESET_NAMES.join(", "))));
        }
    };
    Ok(p)
}

/// Builds a run spec with precedence flag > file > preset > default. When the
/// view count is given by file or flag and the curriculum is not, the
/// curriculum follows the view count.
pub fn resolve(preset_name: Option<&str>, file: &[(String, String)], flags: &[(String, String)]) -> Result<RunSpec, CliError> {
    let mut spec = RunSpec::default();
    if let Some(name) = preset_name {
        for (k, v) in preset(name)? {
            spec.set(&k, &v)?;
        }
    }
    for (k, v) in file.iter().chain(flags) {
        spec.set(k, v)?;
    }
    let given = |key: &str| file.iter().chain(flags).any(|(k, _)| k.trim() == key);
    if given("scene.views") && !given("curriculum_fraction") {
        spec.train.curriculum_fraction = curriculum_fraction_for_views(spec.scene.views);
    }
    spec.validate()?;
    Ok(spec)
}

impl From<SceneError> for CliError {
    fn from(e: SceneError) -> Self {
        match e {
            SceneError::Io(_) | SceneError::MissingImage(_) | SceneError::Malformed(_) => CliError::Io(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kv(items: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs(items)
    }

    #[test]
    fn precedence() {
        let file = kv(&[("seed", "3"), ("samples", "32")]);
        let flags = kv(&[("seed", "5")]);
        let spec = resolve(Some("fixture3"), &file, &flags).unwrap();
        assert_eq!(spec.train.seed, 5);
        assert_eq!(spec.train.samples, 32);
        assert_eq!(spec.scene.views, 3);
    }

    #[test]
    fn views_pick_curriculum() {
        let spec = resolve(None, &[], &kv(&[("scene.views", "3")])).unwrap();
        assert_eq!(spec.train.curriculum_fraction, 0.9);
        let spec = resolve(None, &[], &kv(&[("scene.views", "6")])).unwrap();
        assert_eq!(spec.train.curriculum_fraction, 0.7);
        let spec = resolve(None, &[], &kv(&[("scene.views", "9"), ("curriculum_fraction", "0.5")])).unwrap();
        assert_eq!(spec.train.curriculum_fraction, 0.5);
    }

    #[test]
    fn unknown_key_lists_valid_keys() {
        let err = resolve(None, &[], &kv(&[("occ.wieght", "1")])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("occ.weight") && msg.contains("scene.views"));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn plain_label() {
        let spec = resolve(Some("fixture3"), &[], &kv(&[("occ.weight", "0"), ("curriculum_fraction", "0")])).unwrap();
        assert_eq!(spec.label(), "plain");
        assert_eq!(resolve(Some("fixture3"), &[], &[]).unwrap().label(), "freenerf");
    }

    #[test]
    fn config_text() {
        let p = parse_config_text("# comment\nseed = 4\n\nocc.weight=0.02 # trailing\n").unwrap();
        assert_eq!(p, kv(&[("seed", "4"), ("occ.weight", "0.02")]));
        assert!(parse_config_text("seed 4").is_err());
    }

    #[test]
    fn pairs_round_trip() {
        for name in PRESET_NAMES {
            let spec = resolve(Some(name), &[], &[]).unwrap();
            let pairs = spec.to_pairs();
            let back = RunSpec::from_pairs(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str()))).unwrap();
            assert_eq!(spec, back, "{name}");
        }
    }

    #[test]
    fn protocol_text() {
        for text in ["blender", "dtu", "llff", "explicit:1,4,9"] {
            assert_eq!(ProtocolKind::parse(text).unwrap().text(), text);
        }
        assert!(ProtocolKind::parse("colmap").is_err());
    }
}
