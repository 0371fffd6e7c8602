use osha_core::{EgoState, ObjectState, MAX_OBJECTS};
use osha_sim::{observe, SimConfig, SimError, SimEvent, World};

use crate::expert::Expert;
use crate::travel_assist::{TaInput, TravelAssist};

/// A world plus the controller that actuates its ego.
#[derive(Debug, Clone)]
pub struct Drive {
    pub world: World,
    pub ta: TravelAssist,
}

impl Drive {
    pub fn new(world: World) -> Self {
        let ta = TravelAssist::new(world.state.ego.lane, world.track.lane_count);
        Self { world, ta }
    }

    pub fn step_count(&self) -> u64 {
        self.world.state.step
    }

    pub fn observe(&self) -> (EgoState, [ObjectState; MAX_OBJECTS]) {
        observe(&self.world)
    }

    /// Run the controller on an observation taken this step, then the world.
    pub fn step(&mut self, input: TaInput, ego: &EgoState, objects: &[ObjectState]) -> Vec<SimEvent> {
        let step = self.world.state.step;
        let control = self.ta.step(step, input, ego, objects, self.world.track.lane_width);
        self.world.step(&control)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpertEpisode {
    pub steps: u64,
    pub ego_collisions: usize,
    pub laps: u32,
    pub lane_changes: usize,
    /// Every issued change re-checked against its conditions.
    pub commands_valid: bool,
    pub min_latency: Option<u64>,
}

/// Drive the expert until `max_steps`, the first ego collision, or (when
/// `stop_at_lap`) the first completed lap.
pub fn run_expert_episode(cfg: &SimConfig, max_steps: u32, stop_at_lap: bool) -> Result<ExpertEpisode, SimError> {
    let mut drive = Drive::new(World::reset(cfg)?);
    let mut expert = Expert::default();
    let mut collisions = 0;
    for _ in 0..max_steps {
        let (ego, objects) = drive.observe();
        let step = drive.step_count();
        let input = expert.step(step, &ego, &objects, drive.ta.state);
        let events = drive.step(input, &ego, &objects);
        collisions += events.iter().filter(|e| matches!(e, SimEvent::EgoCollision { .. })).count();
        if collisions > 0 || (stop_at_lap && drive.world.state.ego.laps > 0) {
            break;
        }
    }
    let commands_valid = expert
        .trace
        .iter()
        .filter(|t| t.issued != crate::LaneRequest::KeepLane)
        .all(|t| t.verdict.chosen().is_some_and(|c| c.all_hold()) && t.verdict.target == t.issued);
    let changes = crate::travel_assist::completed_changes(&drive.ta.log);
    Ok(ExpertEpisode {
        steps: drive.step_count(),
        ego_collisions: collisions,
        laps: drive.world.state.ego.laps,
        lane_changes: changes.len(),
        commands_valid,
        min_latency: changes.iter().map(|c| c.latency()).min(),
    })
}
