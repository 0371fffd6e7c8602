use std::path::Path;

use osha_core::LaneChangeCommand;
use osha_dataset::{ProcessedDataset, SampleRef};
use osha_nn::{save_checkpoint, Adam, Batch, HeadOutputs, LossBreakdown, Model, ModelConfig, FUTURE_STEPS, LANE_CLASSES};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::batch::{build_batch, check_compatible};
use crate::PipelineError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Fixes initialization and every epoch's batch order.
    pub seed: u64,
    pub model: ModelConfig,
    /// Tail fraction of each episode held out for validation.
    pub val_fraction: f64,
    /// Write `epoch_NNN.ckpt` every this many epochs (0: never).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: osha_nn::optim::DEFAULT_LR,
            batch_size: 64,
            epochs: 10,
            seed: 0,
            model: ModelConfig::default(),
            val_fraction: 0.1,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    /// Reduced width and a larger step size so ten epochs over ~50k samples
    /// finish in minutes on one CPU core.
    pub fn desk() -> Self {
        Self {
            lr: 1e-3,
            model: ModelConfig { d_embed: 32, vision_widths: [4, 8, 8], head_hidden: 32, ..ModelConfig::default() },
            ..Self::default()
        }
    }
}

/// Loss components averaged over samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossMeans {
    pub lane: f64,
    pub velocity: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub bezier: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub car_net: Option<f64>,
    pub total: f64,
}

#[derive(Default)]
struct LossSum {
    n: usize,
    lane: f64,
    velocity: f64,
    bezier: Option<f64>,
    car_net: Option<f64>,
    total: f64,
}

impl LossSum {
    fn add(&mut self, l: &LossBreakdown, n: usize) {
        let w = n as f64;
        self.n += n;
        self.lane += l.lane * w;
        self.velocity += l.velocity * w;
        if let Some(b) = l.bezier {
            *self.bezier.get_or_insert(0.0) += b * w;
        }
        if let Some(c) = l.car_net {
            *self.car_net.get_or_insert(0.0) += c * w;
        }
        self.total += l.total * w;
    }

    fn mean(&self) -> LossMeans {
        let d = self.n.max(1) as f64;
        LossMeans {
            lane: self.lane / d,
            velocity: self.velocity / d,
            bezier: self.bezier.map(|v| v / d),
            car_net: self.car_net.map(|v| v / d),
            total: self.total / d,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train: LossMeans,
    pub val: LossMeans,
    pub val_lane_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub train_samples: usize,
    pub val_samples: usize,
    /// First training batch, before any update.
    pub step0: LossMeans,
    /// Validation split at initialization.
    pub initial_val: LossMeans,
    pub initial_val_lane_accuracy: f64,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    /// Most frequent lane label among training targets, and its accuracy on
    /// the validation targets.
    pub majority_class: usize,
    pub majority_accuracy: f64,
}

impl TrainReport {
    pub fn best(&self) -> Option<&EpochLog> {
        self.epochs.iter().find(|e| e.epoch == self.best_epoch)
    }

    pub fn render(&self) -> String {
        let mut s = format!(
            "train {} / val {} samples; majority class {} ({:.4})\n",
            self.train_samples, self.val_samples, self.majority_class, self.majority_accuracy
        );
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        s += "epoch  train_total  val_total  val_lane  val_velocity  val_bezier  val_car_net  val_acc\n";
        s += &format!(
            "{:>5}  {:>11.4}  {:>9.4}  {:>8.4}  {:>12.4}  {:>10}  {:>11}  {:>7.4}\n",
            0,
            self.step0.total,
            self.initial_val.total,
            self.initial_val.lane,
            self.initial_val.velocity,
            opt(self.initial_val.bezier),
            opt(self.initial_val.car_net),
            self.initial_val_lane_accuracy
        );
        for e in &self.epochs {
            s += &format!(
                "{:>5}  {:>11.4}  {:>9.4}  {:>8.4}  {:>12.4}  {:>10}  {:>11}  {:>7.4}{}\n",
                e.epoch,
                e.train.total,
                e.val.total,
                e.val.lane,
                e.val.velocity,
                opt(e.val.bezier),
                opt(e.val.car_net),
                e.val_lane_accuracy,
                if e.epoch == self.best_epoch { "  *" } else { "" }
            );
        }
        s
    }
}

/// Label counts per class over all five future steps of `refs`.
fn label_counts(data: &ProcessedDataset, refs: &[SampleRef]) -> [usize; LANE_CLASSES] {
    let mut c = [0; LANE_CLASSES];
    for &r in refs {
        for l in data.episodes[r.episode as usize].futures[r.anchor as usize].commands {
            c[l.code() as usize] += 1;
        }
    }
    c
}

/// Majority class of `train` and the accuracy of always predicting it on `val`.
pub fn majority_baseline(data: &ProcessedDataset, train: &[SampleRef], val: &[SampleRef]) -> (usize, f64) {
    let tc = label_counts(data, train);
    let class = osha_nn::argmax(&tc.map(|v| v as f64));
    let vc = label_counts(data, val);
    let total: usize = vc.iter().sum();
    (class, if total == 0 { 0.0 } else { vc[class] as f64 / total as f64 })
}

/// Correct lane-label predictions over all future steps.
pub fn lane_accuracy(outputs: &[HeadOutputs], batch: &Batch) -> usize {
    outputs
        .iter()
        .enumerate()
        .map(|(n, o)| (0..FUTURE_STEPS).filter(|&k| o.lane_class(k) == batch.lane[n * FUTURE_STEPS + k]).count())
        .sum()
}

fn validate(model: &Model, data: &ProcessedDataset, val: &[SampleRef], batch_size: usize) -> Result<(LossMeans, f64), PipelineError> {
    let mut sum = LossSum::default();
    let mut correct = 0;
    for chunk in val.chunks(batch_size) {
        let b = build_batch(data, chunk, &model.config)?;
        let (l, out) = model.evaluate_loss(&b)?;
        sum.add(&l, chunk.len());
        correct += lane_accuracy(&out, &b);
    }
    let labels = val.len() * FUTURE_STEPS;
    Ok((sum.mean(), if labels == 0 { 0.0 } else { correct as f64 / labels as f64 }))
}

fn means(l: &LossBreakdown) -> LossMeans {
    LossMeans { lane: l.lane, velocity: l.velocity, bezier: l.bezier, car_net: l.car_net, total: l.total }
}

/// Train with Adam on the per-episode split of `data`. Returns the model of
/// the epoch with the lowest validation total loss. With `out`, writes
/// `best.ckpt`, periodic `epoch_NNN.ckpt` and `train_log.json` there.
pub fn train(
    cfg: &TrainConfig,
    data: &ProcessedDataset,
    out: Option<&Path>,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<(Model, TrainReport), PipelineError> {
    check_compatible(data, &cfg.model)?;
    if cfg.batch_size == 0 || !(0.0..1.0).contains(&cfg.val_fraction) || !(cfg.lr > 0.0) {
        return Err(PipelineError::Config("batch size, validation fraction or learning rate out of range".into()));
    }
    let (mut train_refs, val_refs) = data.split(cfg.val_fraction);
    if train_refs.is_empty() {
        return Err(PipelineError::Config("no training samples".into()));
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(PipelineError::io(dir))?;
    }
    let mut model = Model::new(cfg.model.clone(), cfg.seed)?;
    let mut adam = Adam::new(cfg.lr);
    let (majority_class, majority_accuracy) = majority_baseline(data, &train_refs, &val_refs);
    let (initial_val, initial_acc) = validate(&model, data, &val_refs, cfg.batch_size)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut step0 = None;
    let mut best: Option<(f64, usize, Model)> = None;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        train_refs.shuffle(&mut rng);
        let mut sum = LossSum::default();
        for chunk in train_refs.chunks(cfg.batch_size) {
            let b = build_batch(data, chunk, &model.config)?;
            let (l, grads) = model.loss_and_grads(&b)?;
            step0.get_or_insert(means(&l));
            sum.add(&l, chunk.len());
            adam.step(&mut model.params, &grads)?;
        }
        let (val, acc) = if val_refs.is_empty() {
            (sum.mean(), f64::NAN)
        } else {
            validate(&model, data, &val_refs, cfg.batch_size)?
        };
        let log = EpochLog { epoch, train: sum.mean(), val, val_lane_accuracy: acc };
        on_epoch(&log);
        if best.as_ref().is_none_or(|b| val.total < b.0) {
            best = Some((val.total, epoch, model.clone()));
        }
        if let Some(dir) = out {
            if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
                save_checkpoint(&model, &dir.join(format!("epoch_{epoch:03}.ckpt")))?;
            }
        }
        epochs.push(log);
    }
    let (best_epoch, best_model) = match best {
        Some((_, e, m)) => (e, m),
        None => (0, model),
    };
    let report = TrainReport {
        config: cfg.clone(),
        train_samples: train_refs.len(),
        val_samples: val_refs.len(),
        step0: step0.unwrap_or(initial_val),
        initial_val,
        initial_val_lane_accuracy: initial_acc,
        epochs,
        best_epoch,
        majority_class,
        majority_accuracy,
    };
    if let Some(dir) = out {
        save_checkpoint(&best_model, &dir.join("best.ckpt"))?;
        let p = dir.join("train_log.json");
        std::fs::write(&p, serde_json::to_vec_pretty(&report)?).map_err(PipelineError::io(&p))?;
    }
    Ok((best_model, report))
}

/// Class names in index order, for reports.
pub fn class_name(i: usize) -> &'static str {
    match LaneChangeCommand::ALL.get(i) {
        Some(LaneChangeCommand::KeepLane) => "keep",
        Some(LaneChangeCommand::Left) => "left",
        Some(LaneChangeCommand::Right) => "right",
        Some(LaneChangeCommand::Transition) => "transition",
        None => "?",
    }
}
