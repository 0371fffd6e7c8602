use serde::{Deserialize, Serialize};

use crate::error::CoreError;

/// Object-list capacity per frame.
pub const MAX_OBJECTS: usize = 20;

/// Objects farther than this from the ego (meters) are not reported.
pub const OBSERVATION_RADIUS: f64 = 100.0;

/// Lane-change label space. The controller only ever receives the first
/// three; `Transition` exists only in processed labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum LaneChangeCommand {
    #[default]
    KeepLane,
    Left,
    Right,
    Transition,
}

impl LaneChangeCommand {
    pub const ALL: [LaneChangeCommand; 4] = [
        LaneChangeCommand::KeepLane,
        LaneChangeCommand::Left,
        LaneChangeCommand::Right,
        LaneChangeCommand::Transition,
    ];

    pub const COUNT: usize = 4;

    pub fn code(self) -> u8 {
        match self {
            LaneChangeCommand::KeepLane => 0,
            LaneChangeCommand::Left => 1,
            LaneChangeCommand::Right => 2,
            LaneChangeCommand::Transition => 3,
        }
    }

    pub fn from_code(code: u8) -> Result<Self, CoreError> {
        Self::ALL
            .get(code as usize)
            .copied()
            .ok_or(CoreError::UnknownCode { kind: "lane-change command", code })
    }

    /// Class index used by the classifier head.
    pub fn index(self) -> usize {
        self.code() as usize
    }

    pub fn is_lane_change(self) -> bool {
        matches!(self, LaneChangeCommand::Left | LaneChangeCommand::Right)
    }

    /// Lane index delta (+1 is one lane to the left).
    pub fn lane_delta(self) -> i32 {
        match self {
            LaneChangeCommand::Left => 1,
            LaneChangeCommand::Right => -1,
            _ => 0,
        }
    }
}

/// Travel Assist lane-change state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum TaState {
    #[default]
    None,
    Instantiated,
    ReadyToChange,
    StartMovement,
    Interrupted,
    Success,
    Failed,
}

impl TaState {
    pub const ALL: [TaState; 7] = [
        TaState::None,
        TaState::Instantiated,
        TaState::ReadyToChange,
        TaState::StartMovement,
        TaState::Interrupted,
        TaState::Success,
        TaState::Failed,
    ];

    pub const COUNT: usize = 7;

    pub fn code(self) -> u8 {
        match self {
            TaState::None => 0,
            TaState::Instantiated => 1,
            TaState::ReadyToChange => 2,
            TaState::StartMovement => 3,
            TaState::Interrupted => 4,
            TaState::Success => 5,
            TaState::Failed => 6,
        }
    }

    pub fn from_code(code: u8) -> Result<Self, CoreError> {
        Self::ALL
            .get(code as usize)
            .copied()
            .ok_or(CoreError::UnknownCode { kind: "travel-assist state", code })
    }

    pub fn name(self) -> &'static str {
        match self {
            TaState::None => "None",
            TaState::Instantiated => "Instantiated",
            TaState::ReadyToChange => "ReadyToChange",
            TaState::StartMovement => "StartMovement",
            TaState::Interrupted => "Interrupted",
            TaState::Success => "Success",
            TaState::Failed => "Failed",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|s| s.name() == name)
    }
}

/// Ego tuple `<v, s, lane, l, r, c>` plus the global pose.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EgoState {
    /// Speed, m/s.
    pub v: f64,
    /// Speed limit of the segment under the ego, m/s.
    pub speed_limit: f64,
    pub lane_id: u8,
    pub left_avail: bool,
    pub right_avail: bool,
    pub command: LaneChangeCommand,
    /// Global position, meters.
    pub x: f64,
    pub y: f64,
    /// Global heading, radians in (-pi, pi].
    pub heading: f64,
}

impl EgoState {
    pub fn pose(&self) -> crate::frame::Pose {
        crate::frame::Pose { x: self.x, y: self.y, heading: self.heading }
    }
}

/// One slot of the object list, in the ego-local frame (x forward, y left).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ObjectState {
    pub v: f64,
    pub x: f64,
    pub y: f64,
    pub lane_id: u8,
    pub length: f64,
    pub present: bool,
}

impl ObjectState {
    pub const ABSENT: ObjectState =
        ObjectState { v: 0.0, x: 0.0, y: 0.0, lane_id: 0, length: 0.0, present: false };

    pub fn distance(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_codes_round_trip() {
        for c in LaneChangeCommand::ALL {
            assert_eq!(LaneChangeCommand::from_code(c.code()).unwrap(), c);
        }
        assert!(LaneChangeCommand::from_code(4).is_err());
    }

    #[test]
    fn ta_codes_round_trip() {
        for s in TaState::ALL {
            assert_eq!(TaState::from_code(s.code()).unwrap(), s);
            assert_eq!(TaState::from_name(s.name()), Some(s));
        }
        assert!(TaState::from_code(7).is_err());
    }

    #[test]
    fn lane_deltas() {
        assert_eq!(LaneChangeCommand::Left.lane_delta(), 1);
        assert_eq!(LaneChangeCommand::Right.lane_delta(), -1);
        assert_eq!(LaneChangeCommand::Transition.lane_delta(), 0);
        assert!(!LaneChangeCommand::Transition.is_lane_change());
    }
}
