//! Rule-based expert driver. It looks at the six vehicles around the ego
//! (front and rear in the current, left and right lanes) and asks for a
//! lane change only when safety, speed gain and availability all hold.

use osha_core::{EgoState, ObjectState, TaState};
use osha_sim::world::EGO_LENGTH;
use osha_sim::DT;
use serde::{Deserialize, Serialize};

use crate::travel_assist::{ttc, LaneRequest, TaInput};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpertConfig {
    pub front_ttc: f64,
    pub rear_ttc: f64,
    /// Bumper gaps, m.
    pub front_gap: f64,
    pub rear_gap: f64,
    /// Blocked when the leader is slower than this fraction of the limit...
    pub blocked_speed_ratio: f64,
    /// ...and closer than this time headway, s.
    pub blocked_headway: f64,
    /// A front vehicle within limit * this many seconds caps the estimate.
    pub estimate_headway: f64,
    /// Minimum estimated gain for a left change, m/s.
    pub left_gain: f64,
    /// Right change allowed when the right lane is at most this much slower.
    pub right_tolerance: f64,
    /// Quiet period after the controller returns to `None`, s.
    pub cooldown: f64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            front_ttc: 3.0,
            rear_ttc: 2.0,
            front_gap: 10.0,
            rear_gap: 7.0,
            blocked_speed_ratio: 0.9,
            blocked_headway: 3.0,
            estimate_headway: 3.0,
            left_gain: 0.5,
            right_tolerance: 0.5,
            cooldown: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub x: f64,
    pub y: f64,
    pub v: f64,
    pub lane_id: u8,
    pub length: f64,
}

impl Neighbor {
    pub fn gap(&self) -> f64 {
        self.x.abs() - (self.length + EGO_LENGTH) / 2.0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Neighborhood {
    pub current_front: Option<Neighbor>,
    pub current_rear: Option<Neighbor>,
    pub left_front: Option<Neighbor>,
    pub left_rear: Option<Neighbor>,
    pub right_front: Option<Neighbor>,
    pub right_rear: Option<Neighbor>,
}

/// Nearest front/rear vehicle in the ego lane and each existing adjacent
/// lane. Vehicles two lanes away are not observed.
pub fn extract_neighborhood(ego: &EgoState, objects: &[ObjectState]) -> Neighborhood {
    let lane = ego.lane_id as i32;
    let mut n = Neighborhood::default();
    for o in objects.iter().filter(|o| o.present) {
        let rel = o.lane_id as i32 - lane;
        let slot = match (rel, o.x >= 0.0) {
            (0, true) => &mut n.current_front,
            (0, false) => &mut n.current_rear,
            (1, true) if ego.left_avail => &mut n.left_front,
            (1, false) if ego.left_avail => &mut n.left_rear,
            (-1, true) if ego.right_avail => &mut n.right_front,
            (-1, false) if ego.right_avail => &mut n.right_rear,
            _ => continue,
        };
        if slot.map_or(true, |s| o.x.abs() < s.x.abs()) {
            *slot = Some(Neighbor { x: o.x, y: o.y, v: o.v, lane_id: o.lane_id, length: o.length });
        }
    }
    n
}

/// Per-candidate-lane evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaneVerdict {
    pub availability: bool,
    pub safety: bool,
    pub speed_gain: bool,
    pub speed_estimate: f64,
}

impl LaneVerdict {
    pub fn all_hold(&self) -> bool {
        self.availability && self.safety && self.speed_gain
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuleVerdict {
    pub blocked: bool,
    pub current_estimate: f64,
    pub left: LaneVerdict,
    pub right: LaneVerdict,
    pub target: LaneRequest,
}

impl RuleVerdict {
    /// Conditions for the chosen target (all true for `KeepLane`).
    pub fn chosen(&self) -> Option<&LaneVerdict> {
        match self.target {
            LaneRequest::KeepLane => None,
            LaneRequest::Left => Some(&self.left),
            LaneRequest::Right => Some(&self.right),
        }
    }
}

/// Speed the ego could hold in a lane: the limit, unless a vehicle ahead
/// within the estimate headway is slower.
pub fn speed_estimate(cfg: &ExpertConfig, limit: f64, front: Option<&Neighbor>) -> f64 {
    match front {
        Some(f) if f.gap() < limit * cfg.estimate_headway => f.v.min(limit),
        _ => limit,
    }
}

fn lane_safe(cfg: &ExpertConfig, ego: &EgoState, front: Option<&Neighbor>, rear: Option<&Neighbor>) -> bool {
    let front_ok = front.map_or(true, |f| f.gap() >= cfg.front_gap && ttc(f.gap(), ego.v - f.v) > cfg.front_ttc);
    let rear_ok = rear.map_or(true, |r| r.gap() >= cfg.rear_gap && ttc(r.gap(), r.v - ego.v) > cfg.rear_ttc);
    front_ok && rear_ok
}

pub fn evaluate(cfg: &ExpertConfig, ego: &EgoState, nbh: &Neighborhood) -> RuleVerdict {
    let limit = ego.speed_limit;
    let current = speed_estimate(cfg, limit, nbh.current_front.as_ref());
    let blocked = nbh.current_front.is_some_and(|f| {
        f.v < cfg.blocked_speed_ratio * limit && f.gap() / ego.v.max(1.0) < cfg.blocked_headway
    });

    let left_est = speed_estimate(cfg, limit, nbh.left_front.as_ref());
    let left = LaneVerdict {
        availability: ego.left_avail,
        safety: ego.left_avail && lane_safe(cfg, ego, nbh.left_front.as_ref(), nbh.left_rear.as_ref()),
        speed_gain: blocked && left_est > current + cfg.left_gain,
        speed_estimate: left_est,
    };
    let right_est = speed_estimate(cfg, limit, nbh.right_front.as_ref());
    let right = LaneVerdict {
        availability: ego.right_avail,
        safety: ego.right_avail && lane_safe(cfg, ego, nbh.right_front.as_ref(), nbh.right_rear.as_ref()),
        speed_gain: right_est >= current - cfg.right_tolerance,
        speed_estimate: right_est,
    };
    let target = if left.all_hold() {
        LaneRequest::Left
    } else if right.all_hold() {
        LaneRequest::Right
    } else {
        LaneRequest::KeepLane
    };
    RuleVerdict { blocked, current_estimate: current, left, right, target }
}

/// Stateless decision: lane request plus the segment limit as target speed.
pub fn decide(ego: &EgoState, nbh: &Neighborhood) -> TaInput {
    let v = evaluate(&ExpertConfig::default(), ego, nbh);
    TaInput { lane_request: v.target, target_speed: ego.speed_limit }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionTrace {
    pub step: u64,
    pub verdict: RuleVerdict,
    pub issued: LaneRequest,
}

/// The expert with its one piece of state: a cooldown that starts when the
/// controller returns to `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expert {
    pub cfg: ExpertConfig,
    cooldown_steps: u32,
    last_ta: TaState,
    pub trace: Vec<DecisionTrace>,
    /// Keep every step in `trace`, not only the ones that issue a change.
    pub trace_all: bool,
}

impl Default for Expert {
    fn default() -> Self {
        Self::new(ExpertConfig::default())
    }
}

impl Expert {
    pub fn new(cfg: ExpertConfig) -> Self {
        Self { cfg, cooldown_steps: 0, last_ta: TaState::None, trace: Vec::new(), trace_all: false }
    }

    pub fn step(&mut self, step: u64, ego: &EgoState, objects: &[ObjectState], ta_state: TaState) -> TaInput {
        if ta_state == TaState::None && self.last_ta != TaState::None {
            self.cooldown_steps = (self.cfg.cooldown / DT).round() as u32;
        }
        self.last_ta = ta_state;
        let nbh = extract_neighborhood(ego, objects);
        let verdict = evaluate(&self.cfg, ego, &nbh);
        let ready = ta_state == TaState::None && self.cooldown_steps == 0;
        self.cooldown_steps = self.cooldown_steps.saturating_sub(1);
        let issued = if ready { verdict.target } else { LaneRequest::KeepLane };
        if self.trace_all || issued != LaneRequest::KeepLane {
            self.trace.push(DecisionTrace { step, verdict, issued });
        }
        TaInput { lane_request: issued, target_speed: ego.speed_limit }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LIMIT: f64 = 80.0 / 3.6;

    fn ego(lane: u8) -> EgoState {
        EgoState {
            v: LIMIT,
            speed_limit: LIMIT,
            lane_id: lane,
            left_avail: lane < 2,
            right_avail: lane > 0,
            ..Default::default()
        }
    }

    fn obj(x: f64, lane: u8, v: f64) -> ObjectState {
        ObjectState { v, x, y: 0.0, lane_id: lane, length: 4.5, present: true }
    }

    #[test]
    fn empty_road_has_empty_neighborhood() {
        assert_eq!(extract_neighborhood(&ego(1), &[]), Neighborhood::default());
    }

    #[test]
    fn nearest_front_wins() {
        let n = extract_neighborhood(&ego(1), &[obj(60.0, 1, 10.0), obj(30.0, 1, 10.0)]);
        assert_eq!(n.current_front.unwrap().x, 30.0);
    }

    #[test]
    fn unavailable_left_lane_stays_empty() {
        let mut e = ego(1);
        e.left_avail = false;
        let n = extract_neighborhood(&e, &[obj(20.0, 2, 10.0), obj(-20.0, 2, 10.0)]);
        assert!(n.left_front.is_none() && n.left_rear.is_none());
    }

    #[test]
    fn two_lanes_away_ignored() {
        let n = extract_neighborhood(&ego(0), &[obj(20.0, 2, 10.0)]);
        assert_eq!(n, Neighborhood::default());
    }

    #[test]
    fn slow_lead_with_clear_left_gives_left() {
        // ego at 15 m/s, lead 20 m ahead at 10 m/s, limit 22.2
        let mut e = ego(0);
        e.v = 15.0;
        let nbh = extract_neighborhood(&e, &[obj(20.0 + 4.5, 0, 10.0)]);
        let v = evaluate(&ExpertConfig::default(), &e, &nbh);
        assert!(v.blocked);
        assert_eq!(v.target, LaneRequest::Left);
        assert_eq!(decide(&e, &nbh).lane_request, LaneRequest::Left);
    }

    #[test]
    fn clear_right_after_overtake_gives_right() {
        // overtaken vehicle now well behind in the right lane
        let nbh = extract_neighborhood(&ego(1), &[obj(-60.0, 0, 12.0)]);
        assert_eq!(decide(&ego(1), &nbh).lane_request, LaneRequest::Right);
    }

    #[test]
    fn empty_road_in_right_lane_keeps() {
        let d = decide(&ego(0), &Neighborhood::default());
        assert_eq!(d.lane_request, LaneRequest::KeepLane);
        assert_eq!(d.target_speed, LIMIT);
    }

    #[test]
    fn occupied_left_blocks_overtake() {
        let mut e = ego(0);
        e.v = 15.0;
        let nbh = extract_neighborhood(&e, &[obj(24.5, 0, 10.0), obj(2.0, 1, 15.0)]);
        assert_eq!(decide(&e, &nbh).lane_request, LaneRequest::KeepLane);
    }

    #[test]
    fn cooldown_after_controller_returns_to_none() {
        let mut ex = Expert::default();
        let e = ego(1);
        assert_eq!(ex.step(0, &e, &[], TaState::None).lane_request, LaneRequest::Right);
        assert_eq!(ex.step(1, &e, &[], TaState::Instantiated).lane_request, LaneRequest::KeepLane);
        let quiet = (2.0 / DT) as u64;
        for k in 0..quiet {
            assert_eq!(ex.step(2 + k, &e, &[], TaState::None).lane_request, LaneRequest::KeepLane);
        }
        assert_eq!(ex.step(2 + quiet, &e, &[], TaState::None).lane_request, LaneRequest::Right);
    }
}
