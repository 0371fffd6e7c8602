//! Per-frame model input vector and sample assembly.
//!
//! Frame layout (134 values): ego block `v, s, lane one-hot(3), l, r,
//! TA-state one-hot(7)` followed by 20 object blocks `v, x, y, lane, m,
//! present`. Positions are scaled by 1/100 m, speeds by 1/22.2 m/s,
//! lengths by 1/10 m and lane ids by 1/2.

use osha_core::{build_distance_matrix, DistanceMatrix, LaneChangeCommand, Point, TaState, MAX_OBJECTS};

use crate::process::{history_indices, HISTORY_OFFSETS};
use crate::processed::{ProcessedDataset, SampleRef};
use crate::schema::RawRecord;

pub const POSITION_SCALE: f64 = 100.0;
pub const SPEED_SCALE: f64 = 22.2;
pub const LENGTH_SCALE: f64 = 10.0;
pub const LANES: usize = 3;
pub const EGO_FEATURES: usize = 2 + LANES + 2 + TaState::COUNT;
pub const OBJECT_FEATURES: usize = 6;
pub const FRAME_FEATURES: usize = EGO_FEATURES + MAX_OBJECTS * OBJECT_FEATURES;
pub const HISTORY_LEN: usize = HISTORY_OFFSETS.len();

pub fn frame_features(r: &RawRecord) -> [f64; FRAME_FEATURES] {
    let mut f = [0.0; FRAME_FEATURES];
    let e = &r.ego;
    f[0] = e.v / SPEED_SCALE;
    f[1] = e.speed_limit / SPEED_SCALE;
    f[2 + (e.lane_id as usize).min(LANES - 1)] = 1.0;
    f[2 + LANES] = e.left_avail as u8 as f64;
    f[3 + LANES] = e.right_avail as u8 as f64;
    f[4 + LANES + r.ta_state.code() as usize] = 1.0;
    for (k, o) in r.objects.iter().enumerate() {
        if !o.present {
            continue;
        }
        let b = EGO_FEATURES + k * OBJECT_FEATURES;
        f[b] = o.v / SPEED_SCALE;
        f[b + 1] = o.x / POSITION_SCALE;
        f[b + 2] = o.y / POSITION_SCALE;
        f[b + 3] = o.lane_id as f64 / (LANES - 1) as f64;
        f[b + 4] = o.length / LENGTH_SCALE;
        f[b + 5] = 1.0;
    }
    f
}

/// Everything one training example needs.
#[derive(Debug, Clone)]
pub struct Sample<'a> {
    /// `HISTORY_LEN` frames, oldest first.
    pub history: Vec<[f64; FRAME_FEATURES]>,
    /// Raster of the anchor frame, when the dataset has rasters.
    pub raster: Option<&'a [u8]>,
    pub lane: [LaneChangeCommand; 5],
    pub velocities: [f64; 5],
    pub positions: [Point; 5],
    pub distances: DistanceMatrix,
}

impl ProcessedDataset {
    pub fn sample(&self, s: SampleRef) -> Sample<'_> {
        let ep = &self.episodes[s.episode as usize];
        let t = s.anchor as usize;
        let fut = &ep.futures[t];
        let rec = &ep.records[t];
        Sample {
            history: history_indices(t).iter().map(|&i| frame_features(&ep.records[i])).collect(),
            raster: ep.raster(t),
            lane: fut.commands,
            velocities: fut.velocities,
            positions: fut.positions,
            distances: build_distance_matrix(&rec.ego, &rec.objects),
        }
    }
}
