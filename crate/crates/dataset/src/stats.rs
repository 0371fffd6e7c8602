//! Raw vs processed corpus statistics.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use osha_core::LaneChangeCommand;
use serde::{Deserialize, Serialize};

use crate::processed::ProcessedDataset;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub episodes: u64,
    pub samples: u64,
    pub left: u64,
    pub right: u64,
    pub commands: u64,
    pub transition: u64,
    pub keep: u64,
    /// Ego speed range in m/s; both 0 when there are no samples.
    pub v_min: f64,
    pub v_max: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub raw: ColumnStats,
    pub processed: ColumnStats,
    pub samples_per_episode: f64,
    pub collided_episodes: u64,
    /// Drop reason name → episodes.
    pub dropped: BTreeMap<String, u64>,
}

fn widen(range: &mut Option<(f64, f64)>, lo: f64, hi: f64) {
    *range = Some(range.map_or((lo, hi), |(a, b)| (a.min(lo), b.max(hi))));
}

pub fn compute_stats(ds: &ProcessedDataset) -> DatasetStats {
    let mut s = DatasetStats::default();
    let mut raw_v = None;
    let mut proc_v = None;
    for ep in &ds.episodes {
        let m = &ep.meta;
        s.raw.episodes += 1;
        s.raw.samples += m.raw_records as u64;
        s.raw.left += m.raw_left as u64;
        s.raw.right += m.raw_right as u64;
        s.raw.keep += (m.raw_records - m.raw_left - m.raw_right) as u64;
        if m.raw_records > 0 {
            widen(&mut raw_v, m.raw_v_min, m.raw_v_max);
        }
        s.collided_episodes += m.collided as u64;
        if let Some(d) = m.dropped {
            *s.dropped.entry(d.name().to_string()).or_default() += 1;
            continue;
        }
        s.processed.episodes += 1;
        s.processed.samples += ep.futures.len() as u64;
        for (label, rec) in ep.labels.iter().zip(&ep.records).take(ep.futures.len()) {
            match label {
                LaneChangeCommand::KeepLane => s.processed.keep += 1,
                LaneChangeCommand::Left => s.processed.left += 1,
                LaneChangeCommand::Right => s.processed.right += 1,
                LaneChangeCommand::Transition => s.processed.transition += 1,
            }
            widen(&mut proc_v, rec.ego.v, rec.ego.v);
        }
    }
    s.raw.commands = s.raw.left + s.raw.right;
    s.processed.commands = s.processed.left + s.processed.right;
    (s.raw.v_min, s.raw.v_max) = raw_v.unwrap_or((0.0, 0.0));
    (s.processed.v_min, s.processed.v_max) = proc_v.unwrap_or((0.0, 0.0));
    if s.processed.episodes > 0 {
        s.samples_per_episode = s.processed.samples as f64 / s.processed.episodes as f64;
    }
    s
}

impl DatasetStats {
    /// Plain-text table, speeds in km/h.
    pub fn render(&self) -> String {
        let kmh = osha_core::units::ms_to_kmh;
        let mut out = String::new();
        let _ = writeln!(out, "{:<26}{:>14}{:>14}", "", "raw", "processed");
        let row = |out: &mut String, name: &str, a: String, b: String| {
            let _ = writeln!(out, "{name:<26}{a:>14}{b:>14}");
        };
        let (r, p) = (&self.raw, &self.processed);
        row(&mut out, "episodes", r.episodes.to_string(), p.episodes.to_string());
        row(&mut out, "samples", r.samples.to_string(), p.samples.to_string());
        row(&mut out, "lane-change commands", r.commands.to_string(), p.commands.to_string());
        row(&mut out, "  left", r.left.to_string(), p.left.to_string());
        row(&mut out, "  right", r.right.to_string(), p.right.to_string());
        row(&mut out, "transition labels", r.transition.to_string(), p.transition.to_string());
        row(&mut out, "keep-lane labels", r.keep.to_string(), p.keep.to_string());
        row(
            &mut out,
            "ego speed range (km/h)",
            format!("[{:.2}, {:.2}]", kmh(r.v_min), kmh(r.v_max)),
            format!("[{:.2}, {:.2}]", kmh(p.v_min), kmh(p.v_max)),
        );
        let _ = writeln!(out, "samples per episode: {:.1}", self.samples_per_episode);
        let _ = writeln!(out, "episodes with a collision: {}", self.collided_episodes);
        for (reason, n) in &self.dropped {
            let _ = writeln!(out, "dropped ({reason}): {n}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_dataset_is_all_zero() {
        let s = compute_stats(&ProcessedDataset::default());
        assert_eq!(s, DatasetStats::default());
        assert!(s.render().contains("samples"));
    }
}
