use std::path::{Path, PathBuf};

use osha_dataset::{record_episode, EpisodeSpec, EpisodeSummary};
use osha_sim::TrackId;
use serde::{Deserialize, Serialize};

use crate::PipelineError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectConfig {
    pub episodes: usize,
    /// Vehicles per km.
    pub density: f64,
    /// Episode `i` uses seed `seed + i`.
    pub seed: u64,
    pub track: TrackId,
    /// Sim steps per episode.
    pub steps: u32,
    pub rasters: bool,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self { episodes: 6, density: 15.0, seed: 0, track: TrackId::Training, steps: 20_000, rasters: true }
    }
}

pub fn episode_dir(out: &Path, seed: u64, density: f64) -> PathBuf {
    out.join(format!("ep_d{density:05.1}_s{seed:08}"))
}

/// Record expert episodes into `out/ep_*` directories.
pub fn collect(cfg: &CollectConfig, out: &Path) -> Result<Vec<EpisodeSummary>, PipelineError> {
    std::fs::create_dir_all(out).map_err(PipelineError::io(out))?;
    (0..cfg.episodes as u64)
        .map(|i| {
            let seed = cfg.seed + i;
            let mut spec = EpisodeSpec::new(cfg.track, cfg.density, seed);
            spec.steps = cfg.steps;
            spec.rasters = cfg.rasters;
            Ok(record_episode(&spec, &episode_dir(out, seed, cfg.density))?)
        })
        .collect()
}
