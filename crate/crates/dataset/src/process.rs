//! Collision pruning, transition-class augmentation and future extraction.
//!
//! Records are 25 Hz, so half-second offsets are not whole records; offset
//! k (k = 1..5) is rounded up to `ceil(12.5 k)` records.

use osha_control::travel_assist::{completed_changes, TransitionRecord};
use osha_core::{to_local_frame, LaneChangeCommand, Point};
use osha_sim::SimEvent;
use serde::{Deserialize, Serialize};

use crate::record::RECORD_EVERY;
use crate::schema::RawRecord;

/// Future label offsets in records: 0.5 s .. 2.5 s.
pub const FUTURE_OFFSETS: [usize; 5] = [13, 25, 38, 50, 63];
/// Records removed from the end so every kept anchor has all futures.
pub const TAIL_TRIM: usize = 63;
/// History frames, oldest first, as record offsets back from the anchor.
pub const HISTORY_OFFSETS: [usize; 10] = [113, 100, 88, 75, 63, 50, 38, 25, 13, 0];
/// Shortest episode (in records, after pruning) worth keeping.
pub const MIN_RECORDS: usize = HISTORY_OFFSETS[0] + TAIL_TRIM + 1;
/// Records before command receipt that receive the command label.
pub const AUGMENT_WINDOW: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DropReason {
    /// Too short once the collision and the tail were cut.
    CollisionTooShort,
    TooShort,
    /// Manifest not marked complete, or unreadable.
    Invalid,
}

impl DropReason {
    pub fn code(self) -> u8 {
        match self {
            DropReason::CollisionTooShort => 1,
            DropReason::TooShort => 2,
            DropReason::Invalid => 3,
        }
    }

    pub fn from_code(c: u8) -> Option<Option<Self>> {
        match c {
            0 => Some(None),
            1 => Some(Some(DropReason::CollisionTooShort)),
            2 => Some(Some(DropReason::TooShort)),
            3 => Some(Some(DropReason::Invalid)),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DropReason::CollisionTooShort => "collision_too_short",
            DropReason::TooShort => "too_short",
            DropReason::Invalid => "invalid",
        }
    }
}

/// Index of the first record at or after the sim step.
pub fn record_at_or_after(step: u64) -> usize {
    step.div_ceil(RECORD_EVERY as u64) as usize
}

/// First record showing an ego collision, if any.
pub fn collision_record(events: &[(u64, SimEvent)]) -> Option<usize> {
    events
        .iter()
        .filter(|(_, e)| matches!(e, SimEvent::EgoCollision { .. }))
        .map(|&(s, _)| record_at_or_after(s))
        .min()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PruneOutcome {
    /// Records retained (anchors plus the future tail).
    pub kept: usize,
    /// Usable anchors: `kept - TAIL_TRIM`.
    pub samples: usize,
    pub dropped: Option<DropReason>,
}

/// Cut everything at and after the first ego collision, then reserve the
/// last 2.5 s for future labels.
pub fn prune_collisions(records: usize, events: &[(u64, SimEvent)]) -> PruneOutcome {
    let collision = collision_record(events);
    let kept = collision.map_or(records, |c| c.min(records));
    if kept < MIN_RECORDS {
        let reason = if collision.is_some() { DropReason::CollisionTooShort } else { DropReason::TooShort };
        return PruneOutcome { kept: 0, samples: 0, dropped: Some(reason) };
    }
    PruneOutcome { kept, samples: kept - TAIL_TRIM, dropped: None }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Augmented {
    pub labels: Vec<LaneChangeCommand>,
    /// Records newly given a command label.
    pub artificial: usize,
    pub transition_spans: usize,
    /// Records whose label was overwritten by a later change.
    pub conflicts: usize,
}

/// Processed labels for the first `records.len()` records: each executed
/// change labels the 20 records before its receipt with the command and
/// the records of its lateral movement with `Transition`. Raw labels are
/// kept everywhere else; a later change overrides an earlier one.
pub fn augment_commands(records: &[RawRecord], transitions: &[TransitionRecord]) -> Augmented {
    let n = records.len();
    let mut labels: Vec<LaneChangeCommand> = records.iter().map(|r| r.command).collect();
    let mut touched = vec![false; n];
    let mut out = Augmented::default();
    for change in completed_changes(transitions) {
        let cmd = change.request().command();
        let receipt = record_at_or_after(change.received);
        if receipt >= n {
            continue;
        }
        for i in receipt.saturating_sub(AUGMENT_WINDOW)..receipt {
            if touched[i] && labels[i] != cmd {
                out.conflicts += 1;
            }
            if !labels[i].is_lane_change() {
                out.artificial += 1;
            }
            labels[i] = cmd;
            touched[i] = true;
        }
        let first = record_at_or_after(change.movement_start);
        let end = record_at_or_after(change.completed).min(n);
        if first < end {
            for i in first..end {
                if touched[i] && labels[i] != LaneChangeCommand::Transition {
                    out.conflicts += 1;
                }
                labels[i] = LaneChangeCommand::Transition;
                touched[i] = true;
            }
            out.transition_spans += 1;
        }
    }
    out.labels = labels;
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Futures {
    pub commands: [LaneChangeCommand; 5],
    /// m/s
    pub velocities: [f64; 5],
    /// Ego-local at the anchor, meters.
    pub positions: [Point; 5],
}

/// Future labels for the anchor record `t`; requires `t + 63 < len`.
pub fn extract_futures(records: &[RawRecord], labels: &[LaneChangeCommand], t: usize) -> Futures {
    assert!(t + TAIL_TRIM < records.len(), "anchor {t} lacks a 2.5 s future");
    let pose = records[t].ego.pose();
    let globals: Vec<Point> = FUTURE_OFFSETS.iter().map(|&k| (records[t + k].ego.x, records[t + k].ego.y)).collect();
    let local = to_local_frame(pose, &globals).expect("recorded poses are finite");
    let mut f = Futures {
        commands: [LaneChangeCommand::KeepLane; 5],
        velocities: [0.0; 5],
        positions: [(0.0, 0.0); 5],
    };
    for (i, &k) in FUTURE_OFFSETS.iter().enumerate() {
        f.commands[i] = labels[t + k];
        f.velocities[i] = records[t + k].ego.v;
        f.positions[i] = local[i];
    }
    f
}

/// History record indices for an anchor, oldest first, clamped at 0.
pub fn history_indices(t: usize) -> [usize; HISTORY_OFFSETS.len()] {
    HISTORY_OFFSETS.map(|o| t.saturating_sub(o))
}
