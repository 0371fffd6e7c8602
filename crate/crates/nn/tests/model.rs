use osha_nn::gradcheck::{random_batch, suite};
use osha_nn::{decode_checkpoint, encode_checkpoint, Ablation, Batch, Model, ModelConfig, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small(ablation: Ablation) -> ModelConfig {
    let base = ModelConfig {
        d_embed: 8,
        heads_feature: 2,
        vision_widths: [2, 2, 2],
        mlp_hidden: vec![16, 8],
        head_hidden: 8,
        ..ModelConfig::default()
    };
    ablation.config(&base)
}

fn batch(cfg: &ModelConfig, size: usize, seed: u64) -> Batch {
    random_batch(&mut ChaCha8Rng::seed_from_u64(seed), cfg, size)
}

#[test]
fn ablation_flags_round_trip() {
    for a in Ablation::ALL {
        assert_eq!(small(a).ablation(), Some(a));
        assert_eq!(Ablation::from_slug(a.slug()), Some(a));
        Model::new(small(a), 1).unwrap();
    }
    let bad = ModelConfig { mlp_baseline: true, use_swap: true, ..ModelConfig::default() };
    assert!(bad.validate().is_err());
    let odd = ModelConfig { blocks: 3, ..ModelConfig::default() };
    assert!(Model::new(odd, 1).is_err());
}

#[test]
fn car_net_is_symmetric_with_zero_diagonal() {
    let cfg = small(Ablation::TransformerSwapAux);
    let m = Model::new(cfg.clone(), 2).unwrap();
    let b = batch(&cfg, 3, 2);
    let out = m.predict(&b.frames, b.rasters.as_ref(), 3).unwrap();
    for o in &out {
        assert_eq!(o.car_net.len(), 441);
        for i in 0..21 {
            assert_eq!(o.car_net[i * 21 + i], 0.0);
            for j in 0..21 {
                assert_eq!(o.car_net[i * 21 + j], o.car_net[j * 21 + i]);
            }
        }
        for k in 0..5 {
            assert!((o.lane_probs(k).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn outputs_do_not_mix_samples() {
    for a in Ablation::ALL {
        let cfg = small(a);
        let m = Model::new(cfg.clone(), 3).unwrap();
        let b = batch(&cfg, 4, 3);
        let out = m.predict(&b.frames, b.rasters.as_ref(), 4).unwrap();
        let perm = [2, 0, 3, 1];
        let mut frames = Vec::new();
        let mut rasters = Vec::new();
        for &p in &perm {
            frames.extend_from_slice(&b.frames.data[p * 10 * 134..(p + 1) * 10 * 134]);
            rasters.extend_from_slice(b.rasters.as_ref().unwrap().row(p));
        }
        let frames = Tensor::from_vec(40, 134, frames).unwrap();
        let rasters = Tensor::from_vec(4, 5000, rasters).unwrap();
        let permuted = m.predict(&frames, Some(&rasters), 4).unwrap();
        for (k, &p) in perm.iter().enumerate() {
            let (x, y) = (&permuted[k], &out[p]);
            for s in 0..5 {
                assert!((x.velocities[s] - y.velocities[s]).abs() < 1e-12, "{a:?}");
                for c in 0..4 {
                    assert!((x.lane_logits[s][c] - y.lane_logits[s][c]).abs() < 1e-12, "{a:?}");
                }
            }
        }
    }
}

#[test]
fn aux_heads_get_no_gradient_without_aux() {
    let cfg = small(Ablation::TransformerSwap);
    let m = Model::new(cfg.clone(), 4).unwrap();
    let (loss, grads) = m.loss_and_grads(&batch(&cfg, 2, 4)).unwrap();
    assert!(loss.bezier.is_none() && loss.car_net.is_none());
    assert!((loss.total - loss.lane - loss.velocity).abs() < 1e-12);
    for (name, g) in m.params.names.iter().zip(&grads) {
        let zero = g.data.iter().all(|&v| v == 0.0);
        if name.starts_with("head.bezier") || name.starts_with("head.car_net") {
            assert!(zero, "{name} has gradient");
        } else if name.ends_with(".w") {
            assert!(!zero, "{name} has no gradient");
        }
    }

    let cfg = small(Ablation::TransformerSwapAux);
    let m = Model::new(cfg.clone(), 4).unwrap();
    let (loss, _) = m.loss_and_grads(&batch(&cfg, 2, 4)).unwrap();
    let sum = loss.lane + loss.velocity + loss.bezier.unwrap() + loss.car_net.unwrap();
    assert!((loss.total - sum).abs() < 1e-9 * sum);
}

#[test]
fn checkpoint_round_trip_and_seed_determinism() {
    let cfg = small(Ablation::TransformerSwapAux);
    let a = Model::new(cfg.clone(), 5).unwrap();
    let b = Model::new(cfg.clone(), 5).unwrap();
    let c = Model::new(cfg.clone(), 6).unwrap();
    let bytes = encode_checkpoint(&a);
    assert_eq!(bytes, encode_checkpoint(&b));
    assert_ne!(bytes, encode_checkpoint(&c));
    let back = decode_checkpoint(&bytes).unwrap();
    assert_eq!(back.config, a.config);
    assert_eq!(back.params, a.params);
    assert_eq!(encode_checkpoint(&back), bytes);

    assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(decode_checkpoint(&extra).is_err());
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(decode_checkpoint(&magic).is_err());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    osha_nn::save_checkpoint(&a, &path).unwrap();
    assert_eq!(osha_nn::load_checkpoint(&path).unwrap().params, a.params);
}

#[test]
fn mismatched_batch_is_rejected() {
    let cfg = small(Ablation::Transformer);
    let m = Model::new(cfg.clone(), 7).unwrap();
    let mut b = batch(&cfg, 2, 7);
    b.rasters = None;
    assert!(m.loss_and_grads(&b).is_err());
    assert!(m.predict(&Tensor::zeros(19, 134), None, 2).is_err());
}

#[test]
fn gradient_suite_on_a_few_configs() {
    let results = suite(11, 3, 4).unwrap();
    for (cfg, checks) in results {
        assert_eq!(checks.len(), 14);
        for c in checks {
            assert!(c.passed(), "{cfg:?} {} rel {} abs {}", c.name, c.max_rel_err, c.max_abs_err);
            assert!(c.checked > 0, "{}", c.name);
        }
    }
}
