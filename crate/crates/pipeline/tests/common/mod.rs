#![allow(dead_code)]

use std::sync::OnceLock;

use osha_dataset::{preprocess, ProcessedDataset};
use osha_nn::ModelConfig;
use osha_pipeline::{collect, CollectConfig, TrainConfig};

/// Two short expert episodes with rasters, recorded and processed once per
/// test binary.
pub fn small_dataset() -> &'static ProcessedDataset {
    static DATA: OnceLock<ProcessedDataset> = OnceLock::new();
    DATA.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let cfg = CollectConfig { episodes: 2, steps: 2400, seed: 3, ..CollectConfig::default() };
        collect(&cfg, dir.path()).unwrap();
        preprocess(dir.path()).unwrap()
    })
}

pub fn tiny_model() -> ModelConfig {
    ModelConfig {
        d_embed: 8,
        heads_feature: 2,
        heads_time: 2,
        ff_mult: 2,
        blocks: 2,
        vision_widths: [2, 2, 2],
        mlp_hidden: vec![16],
        head_hidden: 8,
        ..ModelConfig::default()
    }
}

pub fn tiny_train(epochs: usize) -> TrainConfig {
    TrainConfig { lr: 3e-3, batch_size: 32, epochs, seed: 5, model: tiny_model(), ..TrainConfig::default() }
}
