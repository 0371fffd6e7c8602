use osha_core::{EgoState, LaneChangeCommand, ObjectState, Pose, MAX_OBJECTS, OBSERVATION_RADIUS};

use crate::world::{TrafficAgent, World};

/// Agents further than this along the track are never candidates.
const ARCLENGTH_PREFILTER: f64 = 150.0;

impl World {
    /// Lateral offset of the ego from the reference line.
    pub fn ego_d(&self) -> f64 {
        let ego = &self.state.ego;
        self.track.lane_center(ego.lane) + ego.offset
    }

    pub fn ego_pose(&self) -> Pose {
        let ((x, y), heading) = self.track.to_global(self.state.ego.s, self.ego_d());
        Pose { x, y, heading }
    }

    /// Lane whose center is nearest to the ego's current lateral position.
    pub fn ego_observed_lane(&self) -> usize {
        let d = self.ego_d();
        (0..self.track.lane_count)
            .min_by(|&a, &b| {
                (self.track.lane_center(a) - d)
                    .abs()
                    .total_cmp(&(self.track.lane_center(b) - d).abs())
            })
            .unwrap_or(0)
    }

    pub fn agent_pose(&self, agent: &TrafficAgent) -> Pose {
        let ((x, y), heading) = self.track.to_global(agent.s, self.track.lane_center(agent.lane));
        Pose { x, y, heading }
    }
}

/// Ego tuple plus the 20 nearest agents within 100 m, nearest first.
/// The `command` field is left at `KeepLane`; the caller owns it.
pub fn observe(world: &World) -> (EgoState, [ObjectState; MAX_OBJECTS]) {
    let pose = world.ego_pose();
    let lane = world.ego_observed_lane();
    let ego = EgoState {
        v: world.state.ego.v,
        speed_limit: world.speed_limit_at_ego(),
        lane_id: lane as u8,
        left_avail: lane + 1 < world.track.lane_count,
        right_avail: lane > 0,
        command: LaneChangeCommand::KeepLane,
        x: pose.x,
        y: pose.y,
        heading: pose.heading,
    };

    let mut candidates: Vec<(f64, u32, ObjectState)> = world
        .state
        .agents
        .iter()
        .filter(|a| world.track.ds(world.state.ego.s, a.s).abs() <= ARCLENGTH_PREFILTER)
        .filter_map(|a| {
            let p = world.agent_pose(a);
            let (x, y) = pose.to_local((p.x, p.y));
            let dist = x.hypot(y);
            (dist <= OBSERVATION_RADIUS).then_some((
                dist,
                a.id,
                ObjectState { v: a.v, x, y, lane_id: a.lane as u8, length: a.length, present: true },
            ))
        })
        .collect();
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut objects = [ObjectState::ABSENT; MAX_OBJECTS];
    for (slot, (_, _, o)) in objects.iter_mut().zip(candidates) {
        *slot = o;
    }
    (ego, objects)
}
