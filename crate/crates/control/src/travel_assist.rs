//! Travel Assist: the lane-change state machine, ACC longitudinal control
//! and kinematic lateral execution. Both the expert and learned policies
//! drive the ego exclusively through this controller.

use std::f64::consts::PI;
use std::fmt::Write as _;

use osha_core::{EgoState, LaneChangeCommand, ObjectState, TaState};
use osha_sim::idm::{IdmParams, Leader};
use osha_sim::world::EGO_LENGTH;
use osha_sim::EgoControl;
use serde::{Deserialize, Serialize};

/// Turn-signal phase before the safety check, in sim steps (0.4 s).
pub const SIGNAL_STEPS: u32 = 20;
/// Lateral movement duration, in sim steps (2.0 s).
pub const MOVE_STEPS: u32 = 100;
pub const ACC_MIN: f64 = -4.0;
pub const ACC_MAX: f64 = 2.0;
/// Longitudinal clearance (bumper to bumper) the lane-change check requires.
pub const SAFETY_GAP: f64 = 5.0;
pub const SAFETY_TTC: f64 = 2.5;

/// Controller input lane request: only three values are meaningful here.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum LaneRequest {
    #[default]
    KeepLane,
    Left,
    Right,
}

impl LaneRequest {
    pub const ALL: [LaneRequest; 3] = [LaneRequest::KeepLane, LaneRequest::Left, LaneRequest::Right];

    /// `Transition` is a label, not a request; it maps to `None`.
    pub fn from_command(c: LaneChangeCommand) -> Option<Self> {
        match c {
            LaneChangeCommand::KeepLane => Some(LaneRequest::KeepLane),
            LaneChangeCommand::Left => Some(LaneRequest::Left),
            LaneChangeCommand::Right => Some(LaneRequest::Right),
            LaneChangeCommand::Transition => None,
        }
    }

    pub fn command(self) -> LaneChangeCommand {
        match self {
            LaneRequest::KeepLane => LaneChangeCommand::KeepLane,
            LaneRequest::Left => LaneChangeCommand::Left,
            LaneRequest::Right => LaneChangeCommand::Right,
        }
    }

    pub fn lane_delta(self) -> i32 {
        self.command().lane_delta()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaInput {
    pub lane_request: LaneRequest,
    /// m/s
    pub target_speed: f64,
}

impl TaInput {
    pub fn keep(target_speed: f64) -> Self {
        Self { lane_request: LaneRequest::KeepLane, target_speed }
    }
}

/// Everything the state machine's next-state decision depends on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TransitionInput {
    pub request: LaneRequest,
    /// The requested target lane exists.
    pub target_exists: bool,
    pub signal_done: bool,
    /// Result of the target-lane safety check.
    pub safe: bool,
    pub movement_done: bool,
}

impl TransitionInput {
    /// All 48 input combinations.
    pub fn all() -> Vec<TransitionInput> {
        let mut out = Vec::with_capacity(48);
        for request in LaneRequest::ALL {
            for bits in 0u8..16 {
                out.push(TransitionInput {
                    request,
                    target_exists: bits & 1 != 0,
                    signal_done: bits & 2 != 0,
                    safe: bits & 4 != 0,
                    movement_done: bits & 8 != 0,
                });
            }
        }
        out
    }
}

/// The flowchart. Requests are only accepted in `None`; `Interrupted`,
/// `Failed` and `Success` each last exactly one step.
pub fn next_state(state: TaState, input: TransitionInput) -> TaState {
    match state {
        TaState::None => match (input.request, input.target_exists) {
            (LaneRequest::KeepLane, _) => TaState::None,
            (_, true) => TaState::Instantiated,
            (_, false) => TaState::Failed,
        },
        TaState::Instantiated if input.signal_done => TaState::ReadyToChange,
        TaState::Instantiated => TaState::Instantiated,
        TaState::ReadyToChange if input.safe => TaState::StartMovement,
        TaState::ReadyToChange => TaState::Interrupted,
        TaState::StartMovement if input.movement_done => TaState::Success,
        TaState::StartMovement => TaState::StartMovement,
        TaState::Interrupted => TaState::Failed,
        TaState::Success | TaState::Failed => TaState::None,
    }
}

/// Edges of the flowchart, self-loops included.
pub fn is_allowed_edge(from: TaState, to: TaState) -> bool {
    use TaState::*;
    matches!(
        (from, to),
        (None, None)
            | (None, Instantiated)
            | (None, Failed)
            | (Instantiated, Instantiated)
            | (Instantiated, ReadyToChange)
            | (ReadyToChange, StartMovement)
            | (ReadyToChange, Interrupted)
            | (StartMovement, StartMovement)
            | (StartMovement, Success)
            | (Interrupted, Failed)
            | (Success, None)
            | (Failed, None)
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub step: u64,
    pub from: TaState,
    pub to: TaState,
    /// Reference lane at the time of the transition.
    pub lane: usize,
    pub target: Option<usize>,
}

/// Time to collision: gap over closing speed, infinite when opening.
pub fn ttc(gap: f64, closing_speed: f64) -> f64 {
    if closing_speed > 0.0 {
        gap.max(0.0) / closing_speed
    } else {
        f64::INFINITY
    }
}

fn bumper_gap(o: &ObjectState) -> f64 {
    o.x.abs() - (o.length + EGO_LENGTH) / 2.0
}

/// Target-lane check run in `ReadyToChange`: every vehicle in the target
/// lane must clear the gap threshold and the front/rear TTC threshold.
pub fn lane_change_safe(ego: &EgoState, objects: &[ObjectState], target_lane: usize) -> bool {
    objects.iter().filter(|o| o.present && o.lane_id as usize == target_lane).all(|o| {
        let gap = bumper_gap(o);
        if gap <= SAFETY_GAP {
            return false;
        }
        let closing = if o.x >= 0.0 { ego.v - o.v } else { o.v - ego.v };
        ttc(gap, closing) > SAFETY_TTC
    })
}

/// ACC parameters: an IDM law on a 1.5 s headway with the output clamped to
/// [-4, 2] and a hard-braking override when the stopping distance runs out.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccParams {
    pub idm: IdmParams,
    pub emergency_decel: f64,
}

impl Default for AccParams {
    fn default() -> Self {
        Self {
            idm: IdmParams {
                max_accel: ACC_MAX,
                comfort_decel: 2.0,
                max_decel: -ACC_MIN,
                headway: 1.5,
                min_gap: 2.0,
                delta: 4.0,
            },
            emergency_decel: -ACC_MIN,
        }
    }
}

pub fn acc_step(ego: &EgoState, lead: Option<&ObjectState>, target_speed: f64) -> f64 {
    acc_step_with(&AccParams::default(), ego, lead, target_speed)
}

pub fn acc_step_with(p: &AccParams, ego: &EgoState, lead: Option<&ObjectState>, target_speed: f64) -> f64 {
    let v = ego.v;
    let leader = lead.map(|o| Leader { gap: bumper_gap(o), v: o.v });
    let mut a = p.idm.accel(v, target_speed, leader);
    if let Some(l) = leader {
        let b = p.emergency_decel;
        let stopping = (v * v - l.v * l.v).max(0.0) / (2.0 * b);
        if v > l.v && l.gap <= stopping + p.idm.min_gap + v * osha_sim::DT {
            a = -b;
        }
    }
    a.clamp(ACC_MIN, ACC_MAX)
}

/// Nearest vehicle ahead among the given lanes.
pub fn lead_vehicle<'a>(objects: &'a [ObjectState], lanes: &[usize]) -> Option<&'a ObjectState> {
    objects
        .iter()
        .filter(|o| o.present && o.x > 0.0 && lanes.contains(&(o.lane_id as usize)))
        .min_by(|a, b| a.x.total_cmp(&b.x))
}

/// One controller instance per ego.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TravelAssist {
    pub state: TaState,
    /// Lane the ego is centered on (or departing from while moving).
    pub lane: usize,
    pub lane_count: usize,
    pub target: Option<usize>,
    timer: u32,
    pub acc: AccParams,
    pub log: Vec<TransitionRecord>,
}

impl TravelAssist {
    pub fn new(lane: usize, lane_count: usize) -> Self {
        Self {
            state: TaState::None,
            lane,
            lane_count,
            target: None,
            timer: 0,
            acc: AccParams::default(),
            log: Vec::new(),
        }
    }

    fn lateral_offset(&self) -> f64 {
        match (self.state, self.target) {
            (TaState::StartMovement, Some(t)) => {
                let p = self.timer as f64 / MOVE_STEPS as f64;
                let sign = if t > self.lane { 1.0 } else { -1.0 };
                sign * 0.5 * (1.0 - (PI * p).cos())
            }
            _ => 0.0,
        }
    }

    /// Advance one 20 ms step. `objects` is the ego-local object list.
    pub fn step(
        &mut self,
        step: u64,
        input: TaInput,
        ego: &EgoState,
        objects: &[ObjectState],
        lane_width: f64,
    ) -> EgoControl {
        let requested_target = match input.lane_request {
            LaneRequest::KeepLane => None,
            r => {
                let t = self.lane as i64 + r.lane_delta() as i64;
                (0..self.lane_count as i64).contains(&t).then_some(t as usize)
            }
        };
        let signal_done = self.state == TaState::Instantiated && self.timer + 1 >= SIGNAL_STEPS;
        let movement_done = self.state == TaState::StartMovement && self.timer + 1 >= MOVE_STEPS;
        let safe = match (self.state, self.target) {
            (TaState::ReadyToChange, Some(t)) => lane_change_safe(ego, objects, t),
            _ => false,
        };
        let t_in = TransitionInput {
            request: input.lane_request,
            target_exists: requested_target.is_some(),
            signal_done,
            safe,
            movement_done,
        };
        let next = next_state(self.state, t_in);

        match (self.state, next) {
            (TaState::None, TaState::Instantiated) => {
                self.target = requested_target;
                self.timer = 0;
            }
            (TaState::Instantiated, TaState::Instantiated) | (TaState::StartMovement, TaState::StartMovement) => {
                self.timer += 1;
            }
            (TaState::ReadyToChange, TaState::StartMovement) => self.timer = 0,
            (TaState::StartMovement, TaState::Success) => {
                if let Some(t) = self.target {
                    self.lane = t;
                }
            }
            (_, TaState::None) => self.target = None,
            _ => {}
        }
        if next != self.state {
            self.log.push(TransitionRecord { step, from: self.state, to: next, lane: self.lane, target: self.target });
        }
        self.state = next;

        let mut lanes = vec![self.lane];
        if let (TaState::StartMovement, Some(t)) = (self.state, self.target) {
            lanes.push(t);
        }
        let accel = acc_step_with(&self.acc, ego, lead_vehicle(objects, &lanes), input.target_speed);
        let moving = self.state == TaState::StartMovement;
        let signalling = matches!(self.state, TaState::Instantiated | TaState::ReadyToChange | TaState::StartMovement);
        EgoControl {
            accel,
            lane: self.lane,
            offset: self.lateral_offset() * lane_width,
            moving_to: if moving { self.target } else { None },
            signal_to: if signalling { self.target } else { None },
        }
    }
}

/// A lane change reconstructed from the transition log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LaneChangeSpan {
    /// Step the request was accepted (`None` -> `Instantiated`).
    pub received: u64,
    /// Step lateral movement began.
    pub movement_start: u64,
    /// Step the ego reached the target lane (`Success`).
    pub completed: u64,
    pub from_lane: usize,
    pub to_lane: usize,
}

impl LaneChangeSpan {
    pub fn latency(&self) -> u64 {
        self.movement_start - self.received
    }

    pub fn request(&self) -> LaneRequest {
        if self.to_lane > self.from_lane {
            LaneRequest::Left
        } else {
            LaneRequest::Right
        }
    }
}

/// Executed lane changes in log order. Attempts that end in `Failed`, or are
/// still in progress at the end of the log, are skipped.
pub fn completed_changes(log: &[TransitionRecord]) -> Vec<LaneChangeSpan> {
    let mut out = Vec::new();
    let mut received = None;
    let mut start = None;
    for r in log {
        match (r.from, r.to) {
            (TaState::None, TaState::Instantiated) => {
                received = Some((r.step, r.lane));
                start = None;
            }
            (TaState::ReadyToChange, TaState::StartMovement) => start = Some(r.step),
            (TaState::StartMovement, TaState::Success) => {
                if let (Some((rx, from)), Some(st)) = (received, start) {
                    out.push(LaneChangeSpan {
                        received: rx,
                        movement_start: st,
                        completed: r.step,
                        from_lane: from,
                        to_lane: r.lane,
                    });
                }
                received = None;
                start = None;
            }
            (_, TaState::Failed) => {
                received = None;
                start = None;
            }
            _ => {}
        }
    }
    out
}

/// One line per transition: `step from to lane target`.
pub fn format_transition_log(log: &[TransitionRecord]) -> String {
    let mut out = String::new();
    for r in log {
        let target = r.target.map_or("-".to_string(), |t| t.to_string());
        let _ = writeln!(out, "{} {} {} {} {}", r.step, r.from.name(), r.to.name(), r.lane, target);
    }
    out
}

pub fn parse_transition_log(text: &str) -> Result<Vec<TransitionRecord>, String> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 5 {
                return Err(format!("bad transition line: {line}"));
            }
            let state = |s: &str| TaState::from_name(s).ok_or_else(|| format!("unknown state {s}"));
            Ok(TransitionRecord {
                step: f[0].parse().map_err(|e| format!("{e}: {line}"))?,
                from: state(f[1])?,
                to: state(f[2])?,
                lane: f[3].parse().map_err(|e| format!("{e}: {line}"))?,
                target: if f[4] == "-" { None } else { Some(f[4].parse().map_err(|e| format!("{e}: {line}"))?) },
            })
        })
        .collect()
}
