//! Preprocessed dataset file: every kept record with its processed label
//! and raster, plus future labels for each anchor. Byte layout in
//! `SCHEMA.md`.

use std::fs;
use std::path::Path;

use osha_core::LaneChangeCommand;
use osha_sim::{TrackId, RASTER_HEIGHT, RASTER_WIDTH};

use crate::process::{augment_commands, extract_futures, prune_collisions, DropReason, Futures, TAIL_TRIM};
use crate::record::{list_episodes, Manifest, RawEpisode};
use crate::schema::{RawRecord, ROW_BYTES};
use crate::DatasetError;

pub const PROCESSED_MAGIC: &[u8; 8] = b"OSHAPROC";
pub const PROCESSED_VERSION: u32 = 1;
pub const RASTER_BYTES: usize = RASTER_WIDTH * RASTER_HEIGHT;
const FUTURE_BYTES: usize = 5 + 5 * 8 + 10 * 8;

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeMeta {
    pub seed: u64,
    pub density: f64,
    pub track: TrackId,
    pub raw_records: u32,
    pub raw_left: u32,
    pub raw_right: u32,
    /// Raw ego speed range, m/s (0 when empty).
    pub raw_v_min: f64,
    pub raw_v_max: f64,
    pub collided: bool,
    pub kept: u32,
    pub samples: u32,
    pub artificial: u32,
    pub transition_spans: u32,
    pub conflicts: u32,
    pub dropped: Option<DropReason>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessedEpisode {
    pub meta: EpisodeMeta,
    pub records: Vec<RawRecord>,
    pub labels: Vec<LaneChangeCommand>,
    /// `records.len() * RASTER_BYTES` bytes, or empty without rasters.
    pub rasters: Vec<u8>,
    /// One entry per anchor, `records.len() - TAIL_TRIM` of them.
    pub futures: Vec<Futures>,
}

impl ProcessedEpisode {
    pub fn raster(&self, record: usize) -> Option<&[u8]> {
        self.rasters.get(record * RASTER_BYTES..(record + 1) * RASTER_BYTES)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProcessedDataset {
    pub has_rasters: bool,
    pub episodes: Vec<ProcessedEpisode>,
}

/// A training sample: an anchor record of one episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SampleRef {
    pub episode: u32,
    pub anchor: u32,
}

fn dropped_meta(manifest: Option<&Manifest>, reason: DropReason) -> EpisodeMeta {
    EpisodeMeta {
        seed: manifest.map_or(0, |m| m.seed),
        density: manifest.map_or(0.0, |m| m.density),
        track: manifest.map_or(TrackId::Training, |m| m.track),
        raw_records: 0,
        raw_left: 0,
        raw_right: 0,
        raw_v_min: 0.0,
        raw_v_max: 0.0,
        collided: false,
        kept: 0,
        samples: 0,
        artificial: 0,
        transition_spans: 0,
        conflicts: 0,
        dropped: Some(reason),
    }
}

/// Prune, augment and extract futures for one loaded episode.
pub fn process_episode(raw: &RawEpisode) -> Result<ProcessedEpisode, DatasetError> {
    let m = &raw.manifest;
    let count = |c| raw.records.iter().filter(|r| r.command == c).count() as u32;
    let (v_min, v_max) = raw
        .records
        .iter()
        .map(|r| r.ego.v)
        .fold(None, |acc: Option<(f64, f64)>, v| Some(acc.map_or((v, v), |(a, b)| (a.min(v), b.max(v)))))
        .unwrap_or((0.0, 0.0));
    let prune = prune_collisions(raw.records.len(), &raw.events);
    let mut meta = EpisodeMeta {
        seed: m.seed,
        density: m.density,
        track: m.track,
        raw_records: raw.records.len() as u32,
        raw_left: count(LaneChangeCommand::Left),
        raw_right: count(LaneChangeCommand::Right),
        raw_v_min: v_min,
        raw_v_max: v_max,
        collided: m.collision_step.is_some(),
        kept: prune.kept as u32,
        samples: prune.samples as u32,
        artificial: 0,
        transition_spans: 0,
        conflicts: 0,
        dropped: prune.dropped,
    };
    if prune.dropped.is_some() {
        return Ok(ProcessedEpisode { meta, records: Vec::new(), labels: Vec::new(), rasters: Vec::new(), futures: Vec::new() });
    }
    let records = raw.records[..prune.kept].to_vec();
    let aug = augment_commands(&records, &raw.transitions);
    meta.artificial = aug.artificial as u32;
    meta.transition_spans = aug.transition_spans as u32;
    meta.conflicts = aug.conflicts as u32;
    let futures = (0..prune.samples).map(|t| extract_futures(&records, &aug.labels, t)).collect();
    let mut rasters = Vec::new();
    if m.rasters {
        rasters.reserve(records.len() * RASTER_BYTES);
        for i in 0..records.len() {
            rasters.extend_from_slice(&raw.raster_bytes(i)?);
        }
    }
    Ok(ProcessedEpisode { meta, records, labels: aug.labels, rasters, futures })
}

/// Process every episode directory under `root` (sorted by name).
pub fn preprocess(root: &Path) -> Result<ProcessedDataset, DatasetError> {
    let mut episodes = Vec::new();
    for dir in list_episodes(root)? {
        let ep = match RawEpisode::load(&dir) {
            Ok(raw) => process_episode(&raw)?,
            Err(_) => {
                let manifest = fs::read_to_string(dir.join("manifest.txt")).ok().and_then(|t| Manifest::parse(&t).ok());
                ProcessedEpisode {
                    meta: dropped_meta(manifest.as_ref(), DropReason::Invalid),
                    records: Vec::new(),
                    labels: Vec::new(),
                    rasters: Vec::new(),
                    futures: Vec::new(),
                }
            }
        };
        episodes.push(ep);
    }
    let kept: Vec<&ProcessedEpisode> = episodes.iter().filter(|e| e.meta.dropped.is_none()).collect();
    let has_rasters = !kept.is_empty() && kept.iter().all(|e| e.rasters.len() == e.records.len() * RASTER_BYTES);
    if !has_rasters {
        for e in &mut episodes {
            e.rasters.clear();
        }
    }
    Ok(ProcessedDataset { has_rasters, episodes })
}

impl ProcessedDataset {
    pub fn sample_count(&self) -> usize {
        self.episodes.iter().map(|e| e.futures.len()).sum()
    }

    /// All anchors, or a per-episode split where the last `val_fraction`
    /// of each episode's anchors is held out (contiguous, so validation
    /// frames never share history windows with training frames except at
    /// the boundary).
    pub fn split(&self, val_fraction: f64) -> (Vec<SampleRef>, Vec<SampleRef>) {
        let mut train = Vec::new();
        let mut val = Vec::new();
        for (e, ep) in self.episodes.iter().enumerate() {
            let n = ep.futures.len();
            let n_val = ((n as f64) * val_fraction).round() as usize;
            for a in 0..n {
                let s = SampleRef { episode: e as u32, anchor: a as u32 };
                if a >= n - n_val {
                    val.push(s);
                } else {
                    train.push(s);
                }
            }
        }
        (train, val)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(PROCESSED_MAGIC);
        out.extend_from_slice(&PROCESSED_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.episodes.len() as u32).to_le_bytes());
        out.push(self.has_rasters as u8);
        for ep in &self.episodes {
            let m = &ep.meta;
            out.extend_from_slice(&m.seed.to_le_bytes());
            out.extend_from_slice(&m.density.to_le_bytes());
            out.push(m.track.code());
            for v in [m.raw_records, m.raw_left, m.raw_right] {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(&m.raw_v_min.to_le_bytes());
            out.extend_from_slice(&m.raw_v_max.to_le_bytes());
            out.push(m.collided as u8);
            for v in [m.kept, m.samples, m.artificial, m.transition_spans, m.conflicts] {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.push(m.dropped.map_or(0, |d| d.code()));
            for r in &ep.records {
                r.encode(&mut out);
            }
            out.extend(ep.labels.iter().map(|l| l.code()));
            if self.has_rasters {
                out.extend_from_slice(&ep.rasters);
            }
            for f in &ep.futures {
                out.extend(f.commands.iter().map(|c| c.code()));
                for v in f.velocities {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                for (x, y) in f.positions {
                    out.extend_from_slice(&x.to_le_bytes());
                    out.extend_from_slice(&y.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DatasetError> {
        let mut c = Cursor { b: bytes, p: 0 };
        if c.take(8)? != PROCESSED_MAGIC {
            return Err(DatasetError::Format("not a processed dataset".into()));
        }
        let version = c.u32()?;
        if version != PROCESSED_VERSION {
            return Err(DatasetError::Format(format!("unsupported processed dataset version {version}")));
        }
        let n = c.u32()? as usize;
        let has_rasters = c.u8()? != 0;
        let mut episodes = Vec::with_capacity(n);
        for _ in 0..n {
            let seed = c.u64()?;
            let density = c.f64()?;
            let track = TrackId::from_code(c.u8()?).ok_or_else(|| DatasetError::Format("bad track code".into()))?;
            let (raw_records, raw_left, raw_right) = (c.u32()?, c.u32()?, c.u32()?);
            let (raw_v_min, raw_v_max) = (c.f64()?, c.f64()?);
            let collided = c.u8()? != 0;
            let (kept, samples, artificial, transition_spans, conflicts) = (c.u32()?, c.u32()?, c.u32()?, c.u32()?, c.u32()?);
            let dropped = DropReason::from_code(c.u8()?).ok_or_else(|| DatasetError::Format("bad drop code".into()))?;
            let meta = EpisodeMeta {
                seed,
                density,
                track,
                raw_records,
                raw_left,
                raw_right,
                raw_v_min,
                raw_v_max,
                collided,
                kept,
                samples,
                artificial,
                transition_spans,
                conflicts,
                dropped,
            };
            let kept = kept as usize;
            if samples as usize != kept.saturating_sub(TAIL_TRIM) && dropped.is_none() {
                return Err(DatasetError::Format("sample count disagrees with kept records".into()));
            }
            let records = (0..kept).map(|_| RawRecord::decode(c.take(ROW_BYTES)?)).collect::<Result<Vec<_>, _>>()?;
            let labels = c
                .take(kept)?
                .iter()
                .map(|&b| LaneChangeCommand::from_code(b))
                .collect::<Result<Vec<_>, _>>()?;
            let rasters = if has_rasters { c.take(kept * RASTER_BYTES)?.to_vec() } else { Vec::new() };
            let mut futures = Vec::with_capacity(samples as usize);
            for _ in 0..samples {
                let raw = c.take(FUTURE_BYTES)?;
                let mut f = Cursor { b: raw, p: 0 };
                let mut commands = [LaneChangeCommand::KeepLane; 5];
                for cmd in commands.iter_mut() {
                    *cmd = LaneChangeCommand::from_code(f.u8()?)?;
                }
                let mut velocities = [0.0; 5];
                for v in velocities.iter_mut() {
                    *v = f.f64()?;
                }
                let mut positions = [(0.0, 0.0); 5];
                for p in positions.iter_mut() {
                    *p = (f.f64()?, f.f64()?);
                }
                futures.push(Futures { commands, velocities, positions });
            }
            episodes.push(ProcessedEpisode { meta, records, labels, rasters, futures });
        }
        if c.p != bytes.len() {
            return Err(DatasetError::Format("trailing bytes after processed dataset".into()));
        }
        Ok(Self { has_rasters, episodes })
    }

    pub fn write(&self, path: &Path) -> Result<(), DatasetError> {
        fs::write(path, self.encode()).map_err(DatasetError::io(path))
    }

    pub fn read(path: &Path) -> Result<Self, DatasetError> {
        Self::decode(&fs::read(path).map_err(DatasetError::io(path))?)
    }
}

struct Cursor<'a> {
    b: &'a [u8],
    p: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DatasetError> {
        let end = self.p.checked_add(n).filter(|&e| e <= self.b.len());
        let end = end.ok_or_else(|| DatasetError::Format("truncated processed dataset".into()))?;
        let s = &self.b[self.p..end];
        self.p = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, DatasetError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, DatasetError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, DatasetError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, DatasetError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
