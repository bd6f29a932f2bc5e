#![allow(dead_code)]

use fieldforge::autodiff::{AutodiffError, Tape, Tensor, Var};
use fieldforge::encoding::{encode_batch, frequency_mask, EncodingConfig, FrequencyMask};
use fieldforge::field::{FieldConfig, RadianceField};
use fieldforge::losses::{build_occlusion_mask, occlusion_loss_on_tape, photometric_loss_on_tape, OcclusionConfig};
use fieldforge::rendering::{composite_on_tape, deltas, sample_points, stratified_samples, Ray, SceneBounds, TERMINAL_DELTA};
use fieldforge::scenes::{make_fixture, ViewSet};
use fieldforge::trainer::{TrainConfig, Trainer};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GRAD_TOL: f64 = 1e-4;
/// Denominator floor of the relative error.
pub const GRAD_FLOOR: f64 = 1e-5;
const FD_STEP: f64 = 1e-5;

pub type OpFn = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var, AutodiffError>>;

pub struct OpCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor<f64>>,
    pub f: OpFn,
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Entries in `[-1, 1]` kept away from zero so rectifier kinks stay clear of
/// the finite-difference stencil.
pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(0.05..1.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(GRAD_FLOOR)
}

/// Central difference of `eval` in coordinate `(i, j)`, retried with smaller
/// steps when the first one straddles a kink.
fn checked_difference(analytic: f64, mut eval: impl FnMut(usize, f64) -> f64, j: usize, x: f64) -> f64 {
    let mut best = f64::INFINITY;
    for scale in [1.0, 0.1, 0.01] {
        let h = FD_STEP * scale * (1.0 + x.abs());
        let n = (eval(j, x + h) - eval(j, x - h)) / (2.0 * h);
        best = best.min(relative_error(analytic, n));
        if best < GRAD_TOL {
            break;
        }
    }
    best
}

/// Worst relative error between reverse-mode and finite-difference gradients
/// of `sum(w * f(inputs))` for a random projection `w`.
pub fn op_gradient_error(case: &OpCase, rng: &mut ChaCha8Rng) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = case.inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let y = (case.f)(&mut tape, &vars).unwrap();
    let w = random_tensor(rng, tape.value(y).shape());
    let wc = tape.constant(w.clone());
    let prod = tape.mul(y, wc).unwrap();
    let root = tape.sum(prod).unwrap();
    let grads = tape.backward(root).unwrap();

    let eval = |inputs: &[Tensor<f64>]| {
        let mut t = Tape::new();
        let vs: Vec<Var> = inputs.iter().map(|x| t.leaf(x.clone())).collect();
        let y = (case.f)(&mut t, &vs).unwrap();
        t.value(y).data().iter().zip(w.data()).map(|(a, b)| a * b).sum::<f64>()
    };
    let mut worst = 0.0f64;
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(case.inputs[i].shape()));
        for j in 0..case.inputs[i].len() {
            let x = case.inputs[i].data()[j];
            let err = checked_difference(
                analytic.data()[j],
                |j, value| {
                    let mut inputs = case.inputs.clone();
                    inputs[i].data_mut()[j] = value;
                    eval(&inputs)
                },
                j,
                x,
            );
            worst = worst.max(err);
        }
    }
    worst
}

/// Every differentiable op with random shapes.
pub fn op_cases(rng: &mut ChaCha8Rng) -> Vec<OpCase> {
    let r = rng.gen_range(1..5);
    let c = rng.gen_range(1..5);
    let k = rng.gen_range(1..5);
    let mut t = |shape: &[usize]| random_tensor(rng, shape);
    let s = 0.7;
    vec![
        OpCase { name: "matmul", inputs: vec![t(&[r, k]), t(&[k, c])], f: Box::new(|tp, v| tp.matmul(v[0], v[1])) },
        OpCase { name: "add", inputs: vec![t(&[r, c]), t(&[r, c])], f: Box::new(|tp, v| tp.add(v[0], v[1])) },
        OpCase { name: "add_row", inputs: vec![t(&[r, c]), t(&[1, c])], f: Box::new(|tp, v| tp.add(v[0], v[1])) },
        OpCase { name: "sub", inputs: vec![t(&[r, c]), t(&[r, c])], f: Box::new(|tp, v| tp.sub(v[0], v[1])) },
        OpCase { name: "sub_row", inputs: vec![t(&[r, c]), t(&[1, c])], f: Box::new(|tp, v| tp.sub(v[0], v[1])) },
        OpCase { name: "mul", inputs: vec![t(&[r, c]), t(&[r, c])], f: Box::new(|tp, v| tp.mul(v[0], v[1])) },
        OpCase { name: "mul_row", inputs: vec![t(&[r, c]), t(&[1, c])], f: Box::new(|tp, v| tp.mul(v[0], v[1])) },
        OpCase { name: "mul_self", inputs: vec![t(&[r, c])], f: Box::new(|tp, v| tp.mul(v[0], v[0])) },
        OpCase { name: "scale", inputs: vec![t(&[r, c])], f: Box::new(move |tp, v| tp.scale(v[0], s)) },
        OpCase { name: "add_scalar", inputs: vec![t(&[r, c])], f: Box::new(move |tp, v| tp.add_scalar(v[0], s)) },
        OpCase { name: "neg", inputs: vec![t(&[r, c])], f: Box::new(|tp, v| tp.neg(v[0])) },
        OpCase { name: "exp", inputs: vec![t(&[r, c])], f: Box::new(|tp, v| tp.exp(v[0])) },
        OpCase { name: "sin", inputs: vec![t(&[r, c])], f: Box::new(|tp, v| tp.sin(v[0])) },
        OpCase { name: "cos", inputs: vec![t(&[r, c])], f: Box::new(|tp, v| tp.cos(v[0])) },
        OpCase { name: "relu", inputs: vec![t(&[r, c])], f: Box::new(|tp, v| tp.relu(v[0])) },
        OpCase { name: "sigmoid", inputs: vec![t(&[r, c])], f: Box::new(|tp, v| tp.sigmoid(v[0])) },
        OpCase { name: "softplus", inputs: vec![t(&[r, c])], f: Box::new(|tp, v| tp.softplus(v[0])) },
        OpCase { name: "sum", inputs: vec![t(&[r, c])], f: Box::new(|tp, v| tp.sum(v[0])) },
        OpCase { name: "mean", inputs: vec![t(&[r, c])], f: Box::new(|tp, v| tp.mean(v[0])) },
        OpCase { name: "sum_cols", inputs: vec![t(&[r, c])], f: Box::new(|tp, v| tp.sum_cols(v[0])) },
        OpCase {
            name: "concat_cols",
            inputs: vec![t(&[r, c]), t(&[r, k])],
            f: Box::new(|tp, v| tp.concat_cols(&[v[0], v[1], v[0]])),
        },
        OpCase {
            name: "slice_cols",
            inputs: vec![t(&[r, c + 2])],
            f: Box::new(move |tp, v| tp.slice_cols(v[0], 1, c + 1)),
        },
        OpCase { name: "reshape", inputs: vec![t(&[r, c])], f: Box::new(move |tp, v| tp.reshape(v[0], &[c, r])) },
        OpCase { name: "exclusive_cumsum", inputs: vec![t(&[r, c])], f: Box::new(|tp, v| tp.exclusive_cumsum(v[0])) },
        OpCase {
            name: "segment_weighted_sum",
            inputs: vec![t(&[r, k]), t(&[r * k, c])],
            f: Box::new(|tp, v| tp.segment_weighted_sum(v[0], v[1])),
        },
        OpCase {
            name: "linear",
            inputs: vec![t(&[r, k]), t(&[k, c]), t(&[1, c])],
            f: Box::new(|tp, v| {
                let lv = fieldforge::autodiff::LinearVars { weight: v[1], bias: v[2] };
                lv.forward(tp, v[0])
            }),
        },
    ]
}

/// A small field, random rays and a partially open mask.
pub struct PipelineCase {
    pub field: RadianceField<f64>,
    pub rays: Vec<Ray>,
    pub t_values: Vec<Vec<f64>>,
    pub target: Tensor<f64>,
    pub masks: (FrequencyMask, FrequencyMask),
    pub occlusion: OcclusionConfig,
    pub bounds: SceneBounds,
}

pub fn pipeline_case(seed: u64) -> PipelineCase {
    let mut rng = rng(seed);
    let config = FieldConfig {
        encoding: EncodingConfig { coord_bands: 3, dir_bands: 2 },
        trunk_depth: 3,
        trunk_width: 8,
        skip_layer: Some(2),
        head_width: 4,
    };
    let mut field = RadianceField::<f64>::new(config, &mut rng).unwrap();
    for b in field.tensors_mut() {
        if b.rows() == 1 {
            let n = b.len();
            b.data_mut().copy_from_slice(&(0..n).map(|_| rng.gen_range(-0.3..0.3)).collect::<Vec<_>>());
        }
    }
    let n_rays = 3;
    let samples = 6;
    let rays: Vec<Ray> = (0..n_rays)
        .map(|_| {
            let origin = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 2.0);
            let target = Vector3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), 0.0);
            Ray { origin, direction: (target - origin).normalize(), near: 0.5, far: 3.5 }
        })
        .collect();
    let t_values = rays.iter().map(|r| stratified_samples(r, samples, Some(&mut rng))).collect();
    let target = Tensor::new(vec![n_rays, 3], (0..3 * n_rays).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
    let t = rng.gen_range(0..100);
    let masks = (frequency_mask(t, 100, config.encoding.coord_bands), frequency_mask(t, 100, config.encoding.dir_bands));
    PipelineCase {
        field,
        rays,
        t_values,
        target,
        masks,
        occlusion: OcclusionConfig { weight: 0.5, ..OcclusionConfig::with_range(2) },
        bounds: SceneBounds::cube(1.5),
    }
}

/// Render-then-loss value of the case, and with `grads` the gradient of every
/// field parameter.
pub fn pipeline_loss(case: &PipelineCase, field: &RadianceField<f64>, grads: bool) -> (f64, Vec<Tensor<f64>>) {
    let mut tape = Tape::<f64>::new();
    let vars = field.register(&mut tape);
    let enc = field.config.encoding;
    let (pos, dirs) = sample_points(&case.rays, &case.t_values, &case.bounds);
    let px = tape.constant(encode_batch(&pos, 3, enc.coord_bands, Some(&case.masks.0)));
    let pd = tape.constant(encode_batch(&dirs, 3, enc.dir_bands, Some(&case.masks.1)));
    let out = field.forward(&mut tape, &vars, px, pd).unwrap();
    let k = case.t_values[0].len();
    let d: Vec<f64> = case.t_values.iter().flat_map(|t| deltas(t, TERMINAL_DELTA)).collect();
    let d = Tensor::new(vec![case.rays.len(), k], d).unwrap();
    let comp = composite_on_tape(&mut tape, out.sigma, out.rgb, &d, [1.0, 1.0, 1.0]).unwrap();
    let mse = photometric_loss_on_tape(&mut tape, comp.color, &case.target).unwrap();
    let row = build_occlusion_mask(k, &case.occlusion, None).unwrap();
    let mask: Vec<f64> = (0..case.rays.len()).flat_map(|_| row.clone()).collect();
    let occ = occlusion_loss_on_tape(&mut tape, comp.sigma, &Tensor::new(vec![case.rays.len(), k], mask).unwrap()).unwrap();
    let occ = tape.scale(occ, case.occlusion.weight).unwrap();
    let loss = tape.add(mse, occ).unwrap();
    let value = tape.value(loss).data()[0];
    if !grads {
        return (value, Vec::new());
    }
    let mut g = tape.backward(loss).unwrap();
    let grads = vars.all().into_iter().zip(field.tensors()).map(|(v, p)| g.take_or_zeros(v, p.shape())).collect();
    (value, grads)
}

/// Worst relative error over every parameter of the pipeline case.
pub fn pipeline_gradient_error(seed: u64) -> f64 {
    let case = pipeline_case(seed);
    let (_, analytic) = pipeline_loss(&case, &case.field, true);
    let mut worst = 0.0f64;
    for (p, g) in analytic.iter().enumerate() {
        for j in 0..g.len() {
            let x = case.field.tensors()[p].data()[j];
            let err = checked_difference(
                g.data()[j],
                |j, value| {
                    let mut field = case.field.clone();
                    field.tensors_mut()[p].data_mut()[j] = value;
                    pipeline_loss(&case, &field, false).0
                },
                j,
                x,
            );
            worst = worst.max(err);
        }
    }
    worst
}

/// Methods compared by the training studies.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Method {
    Plain,
    StaticMask(f64),
    FrequencyOnly,
    OcclusionOnly,
    Full,
}

/// Compact training scale used by the trend studies.
pub const STUDY_ITERS: u64 = 5000;
pub const STUDY_WIDTH: usize = 64;
pub const STUDY_BATCH: usize = 64;
pub const STUDY_SAMPLES: usize = 32;
/// Twenty of sixty-four samples, kept at the same depth fraction.
pub const STUDY_RANGE: usize = 10;
pub const STUDY_IMAGE: u32 = 32;

pub fn study_config(method: Method, seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig {
        total_iters: STUDY_ITERS,
        batch_size: STUDY_BATCH,
        samples: STUDY_SAMPLES,
        shard_rays: STUDY_BATCH,
        seed,
        log_every: 0,
        ..TrainConfig::default()
    };
    cfg.field.trunk_width = STUDY_WIDTH;
    cfg.field.head_width = STUDY_WIDTH / 2;
    cfg.occlusion = OcclusionConfig::with_range(STUDY_RANGE);
    match method {
        Method::Plain => {
            cfg.curriculum_fraction = 0.0;
            cfg.occlusion.weight = 0.0;
        }
        Method::StaticMask(r) => {
            cfg.curriculum_fraction = 0.0;
            cfg.occlusion.weight = 0.0;
            cfg.static_ratio = Some(r);
        }
        Method::FrequencyOnly => cfg.occlusion.weight = 0.0,
        Method::OcclusionOnly => cfg.curriculum_fraction = 0.0,
        Method::Full => {}
    }
    cfg
}

#[derive(Clone, Copy, Debug)]
pub struct StudyOutcome {
    pub test_psnr: f64,
    pub train_psnr: f64,
    pub near_density: f64,
}

pub fn fixture_views(name: &str, seed: u64, near: Option<f64>) -> (ViewSet, SceneBounds) {
    let fx = make_fixture(name, 3, STUDY_IMAGE, seed).unwrap();
    let mut views = fx.views;
    if let Some(n) = near {
        for v in &mut views.views {
            v.camera.near = n;
        }
    }
    (views, fx.scene.bounds)
}

pub fn run_study(fixture: &str, method: Method, seed: u64, near: Option<f64>) -> StudyOutcome {
    let (views, bounds) = fixture_views(fixture, seed, near);
    let mut trainer = Trainer::new(study_config(method, seed), views, bounds).unwrap();
    trainer.run(&mut ()).unwrap();
    let test = trainer.evaluate(&trainer.views.test.clone()).unwrap();
    let train = trainer.evaluate(&trainer.views.train.clone()).unwrap();
    StudyOutcome {
        test_psnr: test.mean_psnr(),
        train_psnr: train.mean_psnr(),
        near_density: trainer.mean_near_density(STUDY_RANGE).unwrap(),
    }
}

/// Tiny run for the determinism and resume checks.
pub fn tiny_config(seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig {
        total_iters: 40,
        batch_size: 48,
        samples: 12,
        shard_rays: 16,
        seed,
        log_every: 1,
        ..TrainConfig::default()
    };
    cfg.field.trunk_width = 16;
    cfg.field.head_width = 8;
    cfg.field.trunk_depth = 3;
    cfg.field.encoding = EncodingConfig { coord_bands: 6, dir_bands: 2 };
    cfg.occlusion = OcclusionConfig::with_range(4);
    cfg.lr.warmup_steps = 8;
    cfg
}

pub fn tiny_views(seed: u64) -> (ViewSet, SceneBounds) {
    let fx = make_fixture("three-spheres", 3, 12, seed).unwrap();
    (fx.views, fx.scene.bounds)
}

pub fn checkpoint_bytes(trainer: &Trainer) -> Vec<u8> {
    trainer.to_checkpoint().to_bytes()
}
