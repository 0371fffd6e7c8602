//! Episode metrics computed from the simulator's ground truth.

use std::collections::BTreeMap;

use osha_sim::World;
use serde::{Deserialize, Serialize};

/// Mean over steps of `|v - limit|`, from `(speed, limit)` pairs.
pub fn speed_difference(trace: &[(f64, f64)]) -> Option<f64> {
    if trace.is_empty() {
        return None;
    }
    Some(trace.iter().map(|(v, l)| (v - l).abs()).sum::<f64>() / trace.len() as f64)
}

/// Encounter and overtake thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OvertakeConfig {
    /// A lead counts when its gap is within this time headway at ego speed, s.
    pub headway: f64,
    /// ... and it drives at least this much below the local limit, m/s.
    pub speed_margin: f64,
    /// Gap behind the ego at which a passed vehicle counts as cleared, m.
    pub clearance: f64,
    /// Encounters further than this from the ego are abandoned, m.
    pub lost_range: f64,
}

impl Default for OvertakeConfig {
    fn default() -> Self {
        Self { headway: 3.0, speed_margin: 1.0, clearance: 20.0, lost_range: 150.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    /// Slow vehicle ahead in the ego lane.
    Behind,
    /// Ego moved left of it and has not yet passed.
    Beside,
    /// Ego is ahead, left of it; waits for a right return or clearance.
    Passed,
}

/// Counts encounters with slow leads and completed left overtakes of them.
///
/// An encounter starts when a vehicle in the ego lane is ahead within
/// `headway` seconds and slower than the limit by `speed_margin`. It
/// completes as an overtake once the ego has moved to a lane left of it,
/// passed it longitudinally, and then either returned right or left it
/// `clearance` meters behind. Passing on the right, falling back behind it
/// in its lane, or losing it beyond `lost_range` ends the encounter
/// without an overtake.
#[derive(Debug, Clone, PartialEq)]
pub struct OvertakeTracker {
    pub cfg: OvertakeConfig,
    pub encounters: u32,
    pub overtakes: u32,
    active: BTreeMap<u32, Phase>,
    last_lane: Option<usize>,
}

impl OvertakeTracker {
    pub fn new(cfg: OvertakeConfig) -> Self {
        Self { cfg, encounters: 0, overtakes: 0, active: BTreeMap::new(), last_lane: None }
    }

    /// `None` without encounters.
    pub fn ratio(&self) -> Option<f64> {
        (self.encounters > 0).then(|| self.overtakes as f64 / self.encounters as f64)
    }

    pub fn update(&mut self, world: &World) {
        let track = &world.track;
        let ego = &world.state.ego;
        let moved_right = self.last_lane.is_some_and(|l| ego.lane < l);
        self.last_lane = Some(ego.lane);

        // new encounter: the nearest vehicle ahead in the ego lane
        let lead = world
            .state
            .agents
            .iter()
            .filter(|a| a.lane == ego.lane)
            .map(|a| (track.ds_ahead(ego.s, a.s), a))
            .filter(|(d, _)| *d < track.length() / 2.0)
            .min_by(|a, b| a.0.total_cmp(&b.0));
        if let Some((d, a)) = lead {
            let gap = d - (a.length + ego.length) / 2.0;
            let limit = track.speed_limit(ego.s);
            if gap <= self.cfg.headway * ego.v.max(1.0) && a.v < limit - self.cfg.speed_margin && !self.active.contains_key(&a.id)
            {
                self.active.insert(a.id, Phase::Behind);
                self.encounters += 1;
            }
        }

        let mut done = Vec::new();
        for (&id, phase) in self.active.iter_mut() {
            let Some(a) = world.state.agents.iter().find(|a| a.id == id) else {
                done.push((id, false));
                continue;
            };
            let rel = track.ds(a.s, ego.s); // > 0: ego ahead
            if rel.abs() > self.cfg.lost_range {
                done.push((id, false));
                continue;
            }
            let ahead = rel > (a.length + ego.length) / 2.0;
            let left_of = ego.lane > a.lane;
            *phase = match *phase {
                Phase::Behind | Phase::Beside if ahead => {
                    if left_of {
                        Phase::Passed
                    } else {
                        done.push((id, false));
                        continue;
                    }
                }
                Phase::Behind if left_of => Phase::Beside,
                Phase::Beside if ego.lane == a.lane => Phase::Behind,
                Phase::Passed if moved_right || rel >= self.cfg.clearance + (a.length + ego.length) / 2.0 => {
                    done.push((id, true));
                    continue;
                }
                Phase::Passed if !ahead => {
                    // dropped back before finishing the manoeuvre
                    if left_of { Phase::Beside } else { Phase::Behind }
                }
                p => p,
            };
        }
        for (id, overtaken) in done {
            self.active.remove(&id);
            if overtaken {
                self.overtakes += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn speed_difference_examples() {
        assert_eq!(speed_difference(&[]), None);
        assert_eq!(speed_difference(&[(22.0, 22.0); 10]), Some(0.0));
        assert_eq!(speed_difference(&[(20.0, 22.0); 7]), Some(2.0));
        // 3 steps 1 below, 1 step 4 above
        let trace = [(19.0, 20.0), (19.0, 20.0), (19.0, 20.0), (24.0, 20.0)];
        assert_eq!(speed_difference(&trace), Some(7.0 / 4.0));
    }
}
