use osha_core::MATRIX_SLOTS;
use osha_dataset::{ProcessedDataset, SampleRef, FRAME_FEATURES, HISTORY_LEN, RASTER_BYTES};
use osha_nn::{Batch, ModelConfig, Tensor, FUTURE_STEPS, RASTER_PIXELS};

use crate::PipelineError;

/// Check that a model can consume samples of this dataset.
pub fn check_compatible(data: &ProcessedDataset, cfg: &ModelConfig) -> Result<(), PipelineError> {
    if cfg.frame_features != FRAME_FEATURES || cfg.history != HISTORY_LEN {
        return Err(PipelineError::Config(format!(
            "model expects {} frames of {} features, dataset provides {HISTORY_LEN} of {FRAME_FEATURES}",
            cfg.history, cfg.frame_features
        )));
    }
    if cfg.use_vision && !data.has_rasters {
        return Err(PipelineError::Config("model uses vision but the dataset has no rasters".into()));
    }
    if cfg.use_vision && RASTER_PIXELS != RASTER_BYTES {
        return Err(PipelineError::Config("raster size mismatch".into()));
    }
    Ok(())
}

/// Assemble model inputs and targets for `refs`.
pub fn build_batch(data: &ProcessedDataset, refs: &[SampleRef], cfg: &ModelConfig) -> Result<Batch, PipelineError> {
    check_compatible(data, cfg)?;
    let n = refs.len();
    let cells = MATRIX_SLOTS * MATRIX_SLOTS;
    let mut frames = Vec::with_capacity(n * HISTORY_LEN * FRAME_FEATURES);
    let mut rasters = Vec::with_capacity(if cfg.use_vision { n * RASTER_PIXELS } else { 0 });
    let mut lane = Vec::with_capacity(n * FUTURE_STEPS);
    let mut velocities = Vec::with_capacity(n * FUTURE_STEPS);
    let mut points = Vec::with_capacity(n * 10);
    let mut distances = Vec::with_capacity(n * cells);
    let mut mask = Vec::with_capacity(n * cells);
    for &r in refs {
        let s = data.sample(r);
        for f in &s.history {
            frames.extend_from_slice(f);
        }
        if cfg.use_vision {
            let px = s.raster.ok_or_else(|| PipelineError::Config("sample without raster".into()))?;
            rasters.extend(px.iter().map(|&p| p as f64 / 255.0));
        }
        lane.extend(s.lane.iter().map(|c| c.code() as usize));
        velocities.extend_from_slice(&s.velocities);
        points.extend(s.positions.iter().flat_map(|&(x, y)| [x, y]));
        distances.extend(s.distances.d.iter().flatten());
        mask.extend(s.distances.mask.iter().flatten());
    }
    Ok(Batch {
        size: n,
        frames: Tensor::from_vec(n * HISTORY_LEN, FRAME_FEATURES, frames)?,
        rasters: if cfg.use_vision { Some(Tensor::from_vec(n, RASTER_PIXELS, rasters)?) } else { None },
        lane,
        velocities: Tensor::from_vec(n, FUTURE_STEPS, velocities)?,
        points: Tensor::from_vec(n, 10, points)?,
        distances: Tensor::from_vec(n, cells, distances)?,
        mask,
    })
}
