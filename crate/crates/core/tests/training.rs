mod common;

use common::*;
use fieldforge::autodiff::{Checkpoint, Tape};
use fieldforge::encoding::{encode_batch, frequency_mask};
use fieldforge::field::RadianceField;
use fieldforge::losses::OcclusionConfig;
use fieldforge::trainer::{LogRow, Trainer};

fn trained(cfg: fieldforge::trainer::TrainConfig) -> Trainer {
    let (views, bounds) = tiny_views(cfg.seed);
    let mut t = Trainer::new(cfg, views, bounds).unwrap();
    t.run(&mut ()).unwrap();
    t
}

fn params(t: &Trainer) -> Vec<Vec<u32>> {
    t.coarse.tensors().iter().map(|p| p.data().iter().map(|v| v.to_bits()).collect()).collect()
}

#[test]
fn resume_matches_uninterrupted_run() {
    let cfg = tiny_config(3);
    let straight = trained(cfg.clone());

    let (views, bounds) = tiny_views(3);
    let mut first = Trainer::new(cfg.clone(), views.clone(), bounds).unwrap();
    for _ in 0..cfg.total_iters / 2 {
        first.step().unwrap();
    }
    let bytes = first.to_checkpoint().to_bytes();
    let ck = Checkpoint::from_bytes(&bytes).unwrap();
    let mut resumed = Trainer::from_checkpoint(&ck, cfg, views, bounds).unwrap();
    resumed.run(&mut ()).unwrap();

    assert_eq!(resumed.iteration, straight.iteration);
    assert_eq!(checkpoint_bytes(&resumed), checkpoint_bytes(&straight));
}

#[test]
fn resume_rejects_changed_config() {
    let cfg = tiny_config(3);
    let t = trained(cfg.clone());
    let mut other = cfg;
    other.batch_size += 1;
    let (views, bounds) = tiny_views(3);
    assert!(Trainer::from_checkpoint(&t.to_checkpoint(), other, views, bounds).is_err());
}

#[test]
fn inactive_regularizers_reduce_to_plain_training() {
    let mut zeroed = tiny_config(5);
    zeroed.curriculum_fraction = 0.0;
    zeroed.occlusion.weight = 0.0;
    let mut plain = zeroed.clone();
    plain.occlusion = OcclusionConfig::disabled();
    assert!(plain.is_plain() && zeroed.is_plain());
    assert_eq!(params(&trained(zeroed)), params(&trained(plain)));
}

#[test]
fn loss_trace_is_reproducible() {
    let run = || {
        let (views, bounds) = tiny_views(9);
        let mut t = Trainer::new(tiny_config(9), views, bounds).unwrap();
        let mut log: Vec<LogRow> = Vec::new();
        t.run(&mut log).unwrap();
        log.iter().map(|r| (r.mse.to_bits(), r.occ.to_bits())).collect::<Vec<_>>()
    };
    let a = run();
    assert_eq!(a.len(), 40);
    assert_eq!(a, run());
}

#[test]
fn masked_bands_receive_no_gradient_at_start() {
    let case = pipeline_case(11);
    let field: &RadianceField<f64> = &case.field;
    let bands = field.config.encoding.coord_bands;
    let mask = frequency_mask(0, 100, bands);
    let mut tape = Tape::<f64>::new();
    let vars = field.register(&mut tape);
    let points: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).sin()).collect();
    let px = tape.constant(encode_batch(&points, 3, bands, Some(&mask)));
    let pd = tape.constant(encode_batch(&points, 3, field.config.encoding.dir_bands, None));
    let out = field.forward(&mut tape, &vars, px, pd).unwrap();
    let s = tape.sum(out.sigma).unwrap();
    let c = tape.sum(out.rgb).unwrap();
    let root = tape.add(s, c).unwrap();
    let mut grads = tape.backward(root).unwrap();
    let first = vars.all()[0];
    let g = grads.take_or_zeros(first, field.tensors()[0].shape());
    let cols = g.cols();
    let (raw, masked) = g.data().split_at(3 * cols);
    assert!(masked.iter().all(|&v| v == 0.0), "masked band rows must have zero gradient");
    assert!(raw.iter().any(|&v| v != 0.0));
}

#[test]
fn thread_count_does_not_change_results() {
    let mut one = tiny_config(2);
    one.threads = 1;
    let mut three = one.clone();
    three.threads = 3;
    assert_eq!(params(&trained(one)), params(&trained(three)));
}
