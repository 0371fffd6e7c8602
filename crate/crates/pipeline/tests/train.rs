mod common;

use common::{small_dataset, tiny_model, tiny_train};
use osha_dataset::SampleRef;
use osha_nn::{Ablation, ModelConfig};
use osha_pipeline::{build_batch, majority_baseline, train, PipelineError, TrainConfig};

#[test]
fn one_epoch_lowers_validation_loss() {
    let data = small_dataset();
    let (_, report) = train(&tiny_train(1), data, None, &mut |_| {}).unwrap();
    assert!(report.train_samples > 1000, "{} samples", report.train_samples);
    assert!(report.val_samples > 0);
    let last = report.epochs.last().unwrap();
    assert!(last.val.total < report.initial_val.total, "{} !< {}", last.val.total, report.initial_val.total);
    assert!(last.train.total < report.step0.total);
    assert_eq!(report.best_epoch, 1);
}

#[test]
fn same_seed_gives_identical_checkpoints_and_logs() {
    let data = small_dataset();
    let cfg = tiny_train(1);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    train(&cfg, data, Some(a.path()), &mut |_| {}).unwrap();
    train(&cfg, data, Some(b.path()), &mut |_| {}).unwrap();
    for f in ["best.ckpt", "train_log.json"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs between runs");
    }
}

#[test]
fn aux_off_logs_have_no_aux_terms() {
    let data = small_dataset();
    let cfg = TrainConfig { model: Ablation::Transformer.config(&tiny_model()), ..tiny_train(1) };
    let dir = tempfile::tempdir().unwrap();
    let (_, report) = train(&cfg, data, Some(dir.path()), &mut |_| {}).unwrap();
    assert!(report.epochs[0].val.bezier.is_none());
    let log = std::fs::read_to_string(dir.path().join("train_log.json")).unwrap();
    assert!(!log.contains("bezier") && !log.contains("car_net"));

    let dir = tempfile::tempdir().unwrap();
    train(&tiny_train(1), data, Some(dir.path()), &mut |_| {}).unwrap();
    let log = std::fs::read_to_string(dir.path().join("train_log.json")).unwrap();
    assert!(log.contains("bezier") && log.contains("car_net"));
}

#[test]
fn mismatched_model_is_rejected_before_training() {
    let data = small_dataset();
    let mut calls = 0;
    let cfg = TrainConfig { model: ModelConfig { frame_features: 100, ..tiny_model() }, ..tiny_train(1) };
    let r = train(&cfg, data, None, &mut |_| calls += 1);
    assert!(matches!(r, Err(PipelineError::Config(_))));
    assert_eq!(calls, 0);

    let cfg = TrainConfig { batch_size: 0, ..tiny_train(1) };
    assert!(train(&cfg, data, None, &mut |_| {}).is_err());
}

#[test]
fn batch_layout_matches_samples() {
    let data = small_dataset();
    let refs = [SampleRef { episode: 0, anchor: 0 }, SampleRef { episode: 1, anchor: 5 }];
    let cfg = tiny_model();
    let b = build_batch(data, &refs, &cfg).unwrap();
    assert_eq!(b.size, 2);
    assert_eq!(b.frames.shape(), [2 * cfg.history, cfg.frame_features]);
    assert_eq!(b.lane.len(), 10);
    assert_eq!(b.points.shape(), [2, 10]);
    assert_eq!(b.distances.shape(), [2, 441]);
    assert_eq!(b.mask.len(), 2 * 441);
    let r = b.rasters.as_ref().unwrap();
    assert!(r.data.iter().all(|&p| (0.0..=1.0).contains(&p)));
    let s = data.sample(refs[1]);
    assert_eq!(&b.frames.row(cfg.history)[..], &s.history[0][..]);
    assert_eq!(b.velocities.row(1), &s.velocities[..]);
    assert_eq!(b.points.row(1)[2..4], [s.positions[1].0, s.positions[1].1]);
    assert_eq!(b.lane[5], s.lane[0].code() as usize);
}

#[test]
fn majority_baseline_is_a_valid_accuracy() {
    let data = small_dataset();
    let (train_refs, val_refs) = data.split(0.1);
    let (class, acc) = majority_baseline(data, &train_refs, &val_refs);
    assert_eq!(class, 0, "keep-lane dominates expert driving");
    assert!((0.0..=1.0).contains(&acc));
}
