use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{TrainConfig, TrainError};
use crate::autodiff::{Real, Tape, Tensor, Var};
use crate::encoding::{encode_batch, FrequencyMask};
use crate::field::{FieldVars, RadianceField};
use crate::losses::{build_occlusion_mask, occlusion_loss_on_tape, photometric_loss_on_tape};
use crate::rendering::{composite_on_tape, deltas, edges_around, merge_sorted, sample_pdf, sample_points, Ray, SceneBounds};

/// A contiguous slice of the batch handled on its own tape.
pub(super) struct ShardJob<'a> {
    pub rays: &'a [Ray],
    pub t_values: &'a [Vec<f64>],
    pub targets: &'a [f64],
    /// Seed for importance sampling in the second stage.
    pub seed: u64,
}

/// Gradients and loss terms already scaled to their share of the batch mean.
pub(super) struct ShardOutput {
    pub grads: Vec<Tensor<f32>>,
    pub mse: f64,
    pub occ: f64,
}

struct StageOut {
    mse: Var,
    sigma: Var,
    rgb: Var,
    weights: Var,
}

#[allow(clippy::too_many_arguments)]
fn stage(
    tape: &mut Tape<f32>,
    field: &RadianceField<f32>,
    vars: &FieldVars,
    rays: &[Ray],
    t_values: &[Vec<f64>],
    target: &Tensor<f32>,
    bounds: &SceneBounds,
    (mask_x, mask_d): (&FrequencyMask, &FrequencyMask),
    background: [f64; 3],
) -> Result<StageOut, TrainError> {
    let enc = field.config.encoding;
    let k = t_values[0].len();
    let (pos, dirs) = sample_points(rays, t_values, bounds);
    let px = tape.constant(encode_batch(&pos, 3, enc.coord_bands, Some(mask_x)));
    let pd = tape.constant(encode_batch(&dirs, 3, enc.dir_bands, Some(mask_d)));
    let out = field.forward(tape, vars, px, pd)?;
    let d: Vec<f64> = t_values.iter().flat_map(|t| deltas(t, crate::rendering::TERMINAL_DELTA)).collect();
    let d = Tensor::from_f64(&[rays.len(), k], &d)?;
    let comp = composite_on_tape(tape, out.sigma, out.rgb, &d, background)?;
    let mse = photometric_loss_on_tape(tape, comp.color, target)?;
    Ok(StageOut {
        mse,
        sigma: comp.sigma,
        rgb: out.rgb,
        weights: comp.weights,
    })
}

/// Occlusion mask for every ray of a stage, `[rays, k]`.
fn occlusion_mask(tape: &Tape<f32>, st: &StageOut, rays: usize, k: usize, cfg: &TrainConfig) -> Result<Tensor<f32>, TrainError> {
    let mut data = Vec::with_capacity(rays * k);
    if cfg.occlusion.bw_prior_enabled {
        let rgb = tape.value(st.rgb).data();
        for r in 0..rays {
            let colors: Vec<[f64; 3]> = (0..k)
                .map(|i| {
                    let o = 3 * (r * k + i);
                    [rgb[o] as f64, rgb[o + 1] as f64, rgb[o + 2] as f64]
                })
                .collect();
            data.extend(build_occlusion_mask(k, &cfg.occlusion, Some(&colors))?);
        }
    } else {
        let row = build_occlusion_mask(k, &cfg.occlusion, None)?;
        for _ in 0..rays {
            data.extend_from_slice(&row);
        }
    }
    Ok(Tensor::from_f64(&[rays, k], &data)?)
}

pub(super) fn shard_pass(
    coarse: &RadianceField<f32>,
    fine: Option<&RadianceField<f32>>,
    cfg: &TrainConfig,
    bounds: &SceneBounds,
    masks: (&FrequencyMask, &FrequencyMask),
    job: &ShardJob,
) -> Result<ShardOutput, TrainError> {
    let rays = job.rays.len();
    let share = rays as f64 / cfg.batch_size as f64;
    let target = Tensor::from_f64(&[rays, 3], job.targets)?;
    let mut tape = Tape::<f32>::new();
    let coarse_vars = coarse.register(&mut tape);
    let first = stage(&mut tape, coarse, &coarse_vars, job.rays, job.t_values, &target, bounds, masks, cfg.background)?;

    let (last, last_t, fine_vars) = match fine {
        Some(fine) => {
            let mut rng = ChaCha8Rng::seed_from_u64(job.seed);
            let w = tape.value(first.weights).data();
            let k = cfg.samples;
            let t_fine: Vec<Vec<f64>> = job
                .rays
                .iter()
                .zip(job.t_values)
                .enumerate()
                .map(|(r, (ray, t))| {
                    let weights: Vec<f64> = w[r * k..(r + 1) * k].iter().map(|&v| v as f64).collect();
                    let extra = sample_pdf(&edges_around(t, ray.near, ray.far), &weights, cfg.fine_samples, Some(&mut rng));
                    merge_sorted(t, &extra)
                })
                .collect();
            let vars = fine.register(&mut tape);
            let second = stage(&mut tape, fine, &vars, job.rays, &t_fine, &target, bounds, masks, cfg.background)?;
            (Some(second), t_fine, Some(vars))
        }
        None => (None, Vec::new(), None),
    };

    let scale = f32::of(share);
    let mut loss = tape.scale(first.mse, scale)?;
    let final_stage = last.as_ref().unwrap_or(&first);
    let final_mse = tape.value(final_stage.mse).data()[0] as f64 * share;
    if let Some(second) = &last {
        let m = tape.scale(second.mse, scale)?;
        loss = tape.add(loss, m)?;
    }
    let mut occ = 0.0;
    if cfg.occlusion.active() {
        let k = if last.is_some() { last_t[0].len() } else { cfg.samples };
        let mask = occlusion_mask(&tape, final_stage, rays, k, cfg)?;
        let term = occlusion_loss_on_tape(&mut tape, final_stage.sigma, &mask)?;
        occ = tape.value(term).data()[0] as f64 * share;
        let weighted = tape.scale(term, f32::of(cfg.occlusion.weight * share))?;
        loss = tape.add(loss, weighted)?;
    }

    let mut g = tape.backward(loss)?;
    let mut grads: Vec<Tensor<f32>> = coarse_vars
        .all()
        .into_iter()
        .zip(coarse.tensors())
        .map(|(v, p)| g.take_or_zeros(v, p.shape()))
        .collect();
    if let (Some(vars), Some(fine)) = (fine_vars, fine) {
        grads.extend(vars.all().into_iter().zip(fine.tensors()).map(|(v, p)| g.take_or_zeros(v, p.shape())));
    }
    Ok(ShardOutput {
        grads,
        mse: final_mse,
        occ,
    })
}
