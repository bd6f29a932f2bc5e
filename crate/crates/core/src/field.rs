//! The radiance field `(x, d) -> (sigma, rgb)`: a rectifier trunk over the
//! masked position encoding with one skip connection, a softplus density
//! output, and a small color head that alone sees the direction encoding.

use std::collections::BTreeMap;

use rand::Rng;
use thiserror::Error;

use crate::autodiff::{AutodiffError, Checkpoint, CheckpointError, Linear, LinearVars, Real, Tape, Tensor, Var};
use crate::encoding::{encode_batch, EncodingConfig, FrequencyMask};

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("layer {layer}: {source}")]
    Layer {
        layer: String,
        #[source]
        source: AutodiffError,
    },
    #[error("view direction has norm {norm}, expected 1")]
    DirectionNotUnit { norm: f64 },
    #[error("invalid field config: {0}")]
    Config(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FieldConfig {
    pub encoding: EncodingConfig,
    pub trunk_depth: usize,
    pub trunk_width: usize,
    /// 1-based trunk layer whose input is `[hidden, encoded position]`.
    pub skip_layer: Option<usize>,
    pub head_width: usize,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig {
            encoding: EncodingConfig::default(),
            trunk_depth: 4,
            trunk_width: 128,
            skip_layer: Some(3),
            head_width: 64,
        }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<(), FieldError> {
        if self.trunk_depth == 0 || self.trunk_width == 0 || self.head_width == 0 {
            return Err(FieldError::Config("depth and widths must be positive".into()));
        }
        if self.encoding.coord_bands == 0 {
            return Err(FieldError::Config("at least one coordinate band is required".into()));
        }
        if let Some(s) = self.skip_layer {
            if s < 2 || s > self.trunk_depth {
                return Err(FieldError::Config(format!(
                    "skip layer {s} outside 2..={}",
                    self.trunk_depth
                )));
            }
        }
        Ok(())
    }

    fn trunk_in(&self, layer: usize) -> usize {
        let pos = self.encoding.coord_width();
        match layer {
            0 => pos,
            l if Some(l + 1) == self.skip_layer => self.trunk_width + pos,
            _ => self.trunk_width,
        }
    }

    pub fn to_metadata(&self, out: &mut BTreeMap<String, String>) {
        out.insert("field.coord_bands".into(), self.encoding.coord_bands.to_string());
        out.insert("field.dir_bands".into(), self.encoding.dir_bands.to_string());
        out.insert("field.trunk_depth".into(), self.trunk_depth.to_string());
        out.insert("field.trunk_width".into(), self.trunk_width.to_string());
        out.insert("field.skip_layer".into(), self.skip_layer.unwrap_or(0).to_string());
        out.insert("field.head_width".into(), self.head_width.to_string());
    }

    pub fn from_metadata<R: Real>(ck: &Checkpoint<R>) -> Result<Self, FieldError> {
        let skip: usize = ck.meta_parse("field.skip_layer")?;
        let cfg = FieldConfig {
            encoding: EncodingConfig {
                coord_bands: ck.meta_parse("field.coord_bands")?,
                dir_bands: ck.meta_parse("field.dir_bands")?,
            },
            trunk_depth: ck.meta_parse("field.trunk_depth")?,
            trunk_width: ck.meta_parse("field.trunk_width")?,
            skip_layer: (skip > 0).then_some(skip),
            head_width: ck.meta_parse("field.head_width")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RadianceField<R> {
    pub config: FieldConfig,
    trunk: Vec<Linear<R>>,
    sigma: Linear<R>,
    feature: Linear<R>,
    color_hidden: Linear<R>,
    color_out: Linear<R>,
}

/// Tape handles for every parameter of one field, in [`RadianceField::param_names`] order.
#[derive(Clone, Debug)]
pub struct FieldVars {
    trunk: Vec<LinearVars>,
    sigma: LinearVars,
    feature: LinearVars,
    color_hidden: LinearVars,
    color_out: LinearVars,
}

impl FieldVars {
    pub fn all(&self) -> Vec<Var> {
        self.trunk
            .iter()
            .chain([&self.sigma, &self.feature, &self.color_hidden, &self.color_out])
            .flat_map(|l| [l.weight, l.bias])
            .collect()
    }
}

/// Per-sample outputs: `sigma` is `[N, 1]`, `rgb` is `[N, 3]`.
#[derive(Clone, Copy, Debug)]
pub struct FieldOutput {
    pub sigma: Var,
    pub rgb: Var,
}

fn layer_err(layer: impl Into<String>) -> impl FnOnce(AutodiffError) -> FieldError {
    let layer = layer.into();
    move |source| FieldError::Layer { layer, source }
}

impl<R: Real> RadianceField<R> {
    pub fn new(config: FieldConfig, rng: &mut impl Rng) -> Result<Self, FieldError> {
        config.validate()?;
        let w = config.trunk_width;
        let trunk = (0..config.trunk_depth).map(|l| Linear::init(config.trunk_in(l), w, rng)).collect();
        Ok(RadianceField {
            config,
            trunk,
            sigma: Linear::init(w, 1, rng),
            feature: Linear::init(w, w, rng),
            color_hidden: Linear::init(w + config.encoding.dir_width(), config.head_width, rng),
            color_out: Linear::init(config.head_width, 3, rng),
        })
    }

    fn layers(&self) -> Vec<(String, &Linear<R>)> {
        let mut out: Vec<(String, &Linear<R>)> =
            self.trunk.iter().enumerate().map(|(i, l)| (format!("trunk.{i}"), l)).collect();
        out.push(("sigma".into(), &self.sigma));
        out.push(("feature".into(), &self.feature));
        out.push(("color_hidden".into(), &self.color_hidden));
        out.push(("color_out".into(), &self.color_out));
        out
    }

    pub fn param_names(&self) -> Vec<String> {
        self.layers()
            .into_iter()
            .flat_map(|(n, _)| [format!("{n}.weight"), format!("{n}.bias")])
            .collect()
    }

    pub fn tensors(&self) -> Vec<&Tensor<R>> {
        self.layers().into_iter().flat_map(|(_, l)| [&l.weight, &l.bias]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<R>> {
        self.trunk
            .iter_mut()
            .chain([&mut self.sigma, &mut self.feature, &mut self.color_hidden, &mut self.color_out])
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Registers parameters as differentiable leaves.
    pub fn register(&self, tape: &mut Tape<R>) -> FieldVars {
        self.register_with(tape, true)
    }

    /// Registers parameters as constants (inference only).
    pub fn register_frozen(&self, tape: &mut Tape<R>) -> FieldVars {
        self.register_with(tape, false)
    }

    fn register_with(&self, tape: &mut Tape<R>, grad: bool) -> FieldVars {
        let mut reg = |l: &Linear<R>| {
            if grad {
                l.register(tape)
            } else {
                LinearVars {
                    weight: tape.constant(l.weight.clone()),
                    bias: tape.constant(l.bias.clone()),
                }
            }
        };
        FieldVars {
            trunk: self.trunk.iter().map(&mut reg).collect(),
            sigma: reg(&self.sigma),
            feature: reg(&self.feature),
            color_hidden: reg(&self.color_hidden),
            color_out: reg(&self.color_out),
        }
    }

    /// Batched forward pass over already-masked encodings.
    pub fn forward(
        &self,
        tape: &mut Tape<R>,
        vars: &FieldVars,
        pos_enc: Var,
        dir_enc: Var,
    ) -> Result<FieldOutput, FieldError> {
        let mut h = pos_enc;
        for (i, lv) in vars.trunk.iter().enumerate() {
            let name = || format!("trunk.{i}");
            if Some(i + 1) == self.config.skip_layer {
                h = tape.concat_cols(&[h, pos_enc]).map_err(layer_err(name()))?;
            }
            h = lv.forward(tape, h).map_err(layer_err(name()))?;
            h = tape.relu(h).map_err(layer_err(name()))?;
        }
        let raw_sigma = vars.sigma.forward(tape, h).map_err(layer_err("sigma"))?;
        let sigma = tape.softplus(raw_sigma).map_err(layer_err("sigma"))?;

        let feat = vars.feature.forward(tape, h).map_err(layer_err("feature"))?;
        let head_in = tape.concat_cols(&[feat, dir_enc]).map_err(layer_err("color_hidden"))?;
        let hidden = vars.color_hidden.forward(tape, head_in).map_err(layer_err("color_hidden"))?;
        let hidden = tape.relu(hidden).map_err(layer_err("color_hidden"))?;
        let raw_rgb = vars.color_out.forward(tape, hidden).map_err(layer_err("color_out"))?;
        let rgb = tape.sigmoid(raw_rgb).map_err(layer_err("color_out"))?;
        Ok(FieldOutput { sigma, rgb })
    }

    /// Inference over row-major point/direction lists (positions already in the
    /// field's normalized frame). Returns `(sigma[N], rgb[N*3])`.
    pub fn evaluate(
        &self,
        positions: &[f64],
        directions: &[f64],
        mask_x: &FrequencyMask,
        mask_d: &FrequencyMask,
    ) -> Result<(Vec<R>, Vec<R>), FieldError> {
        let mut tape = Tape::new();
        let vars = self.register_frozen(&mut tape);
        let enc = self.config.encoding;
        let px = tape.constant(encode_batch(positions, 3, enc.coord_bands, Some(mask_x)));
        let pd = tape.constant(encode_batch(directions, 3, enc.dir_bands, Some(mask_d)));
        let out = self.forward(&mut tape, &vars, px, pd)?;
        Ok((
            tape.value(out.sigma).data().to_vec(),
            tape.value(out.rgb).data().to_vec(),
        ))
    }

    /// Single-point query.
    pub fn query(
        &self,
        x: [f64; 3],
        d: [f64; 3],
        mask_x: &FrequencyMask,
        mask_d: &FrequencyMask,
    ) -> Result<(f64, [f64; 3]), FieldError> {
        let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(FieldError::DirectionNotUnit { norm });
        }
        let (s, c) = self.evaluate(&x, &d, mask_x, mask_d)?;
        let f = |v: R| v.to_f64().unwrap_or(f64::NAN);
        Ok((f(s[0]), [f(c[0]), f(c[1]), f(c[2])]))
    }

    pub fn write_checkpoint(&self, prefix: &str, ck: &mut Checkpoint<R>) {
        for (name, t) in self.param_names().into_iter().zip(self.tensors()) {
            ck.push(format!("{prefix}{name}"), t.clone());
        }
    }

    pub fn read_checkpoint(config: FieldConfig, prefix: &str, ck: &Checkpoint<R>) -> Result<Self, FieldError> {
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let mut field = Self::new(config, &mut rng)?;
        let names = field.param_names();
        for (name, slot) in names.iter().zip(field.tensors_mut()) {
            let key = format!("{prefix}{name}");
            let t = ck.tensor(&key)?;
            if t.shape() != slot.shape() {
                return Err(CheckpointError::Shape {
                    name: key,
                    found: t.shape().to_vec(),
                    expected: slot.shape().to_vec(),
                }
                .into());
            }
            *slot = t.clone();
        }
        Ok(field)
    }
}
