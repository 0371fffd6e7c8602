use osha_core::units::MAX_EGO_SPEED;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::idm::{IdmParams, Leader};
use crate::track::{Track, TrackId};
use crate::SimError;

/// Fixed integration step (50 Hz).
pub const DT: f64 = 0.02;
pub const EGO_LENGTH: f64 = 4.5;
pub const VEHICLE_WIDTH: f64 = 1.8;
pub const MIN_AGENT_LENGTH: f64 = 4.0;
pub const MAX_AGENT_LENGTH: f64 = 5.0;
/// Spawn spacing between centers: bumper gap of at least twice a vehicle length.
pub const SPAWN_SPACING: f64 = 3.0 * MAX_AGENT_LENGTH;

const COURTESY_BLOCKED_SECS: f64 = 5.0;
const COURTESY_COOLDOWN_SECS: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub track: TrackId,
    /// Vehicles per km of road (all lanes).
    pub density: f64,
    pub seed: u64,
    pub max_steps: u32,
}

impl SimConfig {
    pub fn new(track: TrackId, density: f64, seed: u64) -> Self {
        Self { track, density, seed, max_steps: 20_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Behavior {
    Slow,
    Normal,
    Fast,
}

impl Behavior {
    /// Desired speed as a multiple of the local limit.
    pub fn factor(self) -> f64 {
        match self {
            Behavior::Slow => 0.8,
            Behavior::Normal => 1.0,
            Behavior::Fast => 1.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficAgent {
    pub id: u32,
    pub s: f64,
    pub lane: usize,
    pub v: f64,
    pub length: f64,
    pub behavior: Behavior,
    /// Optional hard cap on desired speed (scripted scenarios).
    pub speed_cap: Option<f64>,
    pub blocked_time: f64,
    pub cooldown: f64,
}

impl TrafficAgent {
    pub fn desired_speed(&self, track: &Track) -> f64 {
        let d = self.behavior.factor() * track.speed_limit(self.s);
        self.speed_cap.map_or(d, |c| d.min(c))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgoBody {
    pub s: f64,
    /// Lane the lateral offset is measured from.
    pub lane: usize,
    /// Lateral offset from `lane`'s center, m, left positive.
    pub offset: f64,
    /// Target lane while a lateral movement is in progress.
    pub moving_to: Option<usize>,
    /// Lane the turn signal points at.
    pub signal_to: Option<usize>,
    pub v: f64,
    pub length: f64,
    /// Arclength covered since reset.
    pub travelled: f64,
    pub laps: u32,
}

impl EgoBody {
    /// Lanes the ego body physically blocks.
    pub fn occupied_lanes(&self) -> impl Iterator<Item = usize> + '_ {
        std::iter::once(self.lane).chain(self.moving_to)
    }
}

/// Ego actuation for one step, produced by the lane-change controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgoControl {
    pub accel: f64,
    pub lane: usize,
    pub offset: f64,
    pub moving_to: Option<usize>,
    pub signal_to: Option<usize>,
}

impl EgoControl {
    pub fn keep(lane: usize, accel: f64) -> Self {
        Self { accel, lane, offset: 0.0, moving_to: None, signal_to: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SimEvent {
    EgoCollision { agent: u32 },
    AgentCollision { a: u32, b: u32 },
    LapCompleted { lap: u32 },
}

/// Serializable simulation snapshot. The track is referenced by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub track: TrackId,
    pub step: u64,
    pub density: f64,
    pub seed: u64,
    pub ego: EgoBody,
    pub agents: Vec<TrafficAgent>,
}

#[derive(Debug, Clone)]
pub struct World {
    pub track: Track,
    pub state: WorldState,
    pub idm: IdmParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Occupant {
    Agent(usize),
    Ego,
}

#[derive(Debug, Clone, Copy)]
pub struct LaneSlot {
    pub s: f64,
    pub length: f64,
    pub v: f64,
    pub who: Occupant,
}

/// Scripted ego placement.
#[derive(Debug, Clone, Copy)]
pub struct EgoSpawn {
    pub s: f64,
    pub lane: usize,
    pub v: f64,
}

/// Scripted agent placement.
#[derive(Debug, Clone, Copy)]
pub struct AgentSpawn {
    pub s: f64,
    pub lane: usize,
    pub v: f64,
    pub length: f64,
    pub behavior: Behavior,
    pub speed_cap: Option<f64>,
}

impl World {
    /// Seeded random world: ego in a uniformly random lane and position,
    /// traffic at the requested density with hard-core spacing.
    pub fn reset(config: &SimConfig) -> Result<World, SimError> {
        if !config.density.is_finite() || config.density < 0.0 {
            return Err(SimError::Config(format!("invalid density {}", config.density)));
        }
        let track = config.track.build();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let length = track.length();
        let lanes = track.lane_count;

        let ego_lane = rng.gen_range(0..lanes);
        let ego_s = rng.gen_range(0.0..length);
        let total = (config.density * length / 1000.0).round() as usize;
        let mut per_lane = vec![0usize; lanes];
        for _ in 0..total {
            per_lane[rng.gen_range(0..lanes)] += 1;
        }
        for (lane, &n) in per_lane.iter().enumerate() {
            let needed = (n + usize::from(lane == ego_lane)) as f64 * SPAWN_SPACING;
            if needed > length {
                return Err(SimError::Config(format!(
                    "density {} /km cannot keep {SPAWN_SPACING} m spacing in lane {lane}",
                    config.density
                )));
            }
        }

        let mut agents = Vec::with_capacity(total);
        for (lane, &n) in per_lane.iter().enumerate() {
            if n == 0 {
                continue;
            }
            // n points with n (circular) gaps of at least SPAWN_SPACING; the ego
            // lane reserves one extra gap around the ego.
            let reserve = usize::from(lane == ego_lane);
            let free = length - (n + reserve) as f64 * SPAWN_SPACING;
            let mut u: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..=free)).collect();
            u.sort_by(|a, b| a.total_cmp(b));
            let origin = if reserve == 1 { ego_s + SPAWN_SPACING } else { rng.gen_range(0.0..length) };
            for (i, ui) in u.into_iter().enumerate() {
                let behavior = match rng.gen_range(0.0..1.0) {
                    x if x < 0.3 => Behavior::Slow,
                    x if x < 0.8 => Behavior::Normal,
                    _ => Behavior::Fast,
                };
                agents.push(TrafficAgent {
                    id: 0,
                    s: track.wrap(origin + ui + i as f64 * SPAWN_SPACING),
                    lane,
                    v: 0.0,
                    length: rng.gen_range(MIN_AGENT_LENGTH..MAX_AGENT_LENGTH),
                    behavior,
                    speed_cap: None,
                    blocked_time: 0.0,
                    cooldown: 0.0,
                });
            }
        }
        for (i, a) in agents.iter_mut().enumerate() {
            a.id = i as u32;
        }
        let ego = EgoBody {
            s: ego_s,
            lane: ego_lane,
            offset: 0.0,
            moving_to: None,
            signal_to: None,
            v: 0.0,
            length: EGO_LENGTH,
            travelled: 0.0,
            laps: 0,
        };
        let state = WorldState {
            track: config.track,
            step: 0,
            density: config.density,
            seed: config.seed,
            ego,
            agents,
        };
        let mut world = World { track, state, idm: IdmParams::default() };
        world.settle_initial_speeds();
        Ok(world)
    }

    /// Deterministic hand-placed world.
    pub fn scripted(track: TrackId, ego: EgoSpawn, agents: &[AgentSpawn]) -> World {
        let track_def = track.build();
        let agents = agents
            .iter()
            .enumerate()
            .map(|(i, a)| TrafficAgent {
                id: i as u32,
                s: track_def.wrap(a.s),
                lane: a.lane,
                v: a.v,
                length: a.length,
                behavior: a.behavior,
                speed_cap: a.speed_cap,
                blocked_time: 0.0,
                cooldown: 0.0,
            })
            .collect();
        let state = WorldState {
            track,
            step: 0,
            density: 0.0,
            seed: 0,
            ego: EgoBody {
                s: track_def.wrap(ego.s),
                lane: ego.lane,
                offset: 0.0,
                moving_to: None,
                signal_to: None,
                v: ego.v,
                length: EGO_LENGTH,
                travelled: 0.0,
                laps: 0,
            },
            agents,
        };
        World { track: track_def, state, idm: IdmParams::default() }
    }

    pub fn from_state(state: WorldState) -> World {
        World { track: state.track.build(), state, idm: IdmParams::default() }
    }

    /// Start everyone at a speed they can hold behind their initial leader.
    fn settle_initial_speeds(&mut self) {
        let occ = self.occupancy(false);
        let limit_ego = self.track.speed_limit(self.state.ego.s);
        let ego_gap = self.leader_of(&occ, Occupant::Ego, self.state.ego.lane).map(|l| l.gap);
        self.state.ego.v = cap_by_gap(0.8 * limit_ego, ego_gap, &self.idm);
        for i in 0..self.state.agents.len() {
            let desired = self.state.agents[i].desired_speed(&self.track);
            let lane = self.state.agents[i].lane;
            let gap = self.leader_of(&occ, Occupant::Agent(i), lane).map(|l| l.gap);
            self.state.agents[i].v = cap_by_gap(desired, gap, &self.idm);
        }
    }

    /// Per-lane occupants sorted by `s`. The ego appears in every lane it
    /// blocks, and in its signalled lane when `with_signal` is set.
    pub fn occupancy(&self, with_signal: bool) -> Vec<Vec<LaneSlot>> {
        let mut lanes = vec![Vec::new(); self.track.lane_count];
        for (i, a) in self.state.agents.iter().enumerate() {
            lanes[a.lane].push(LaneSlot { s: a.s, length: a.length, v: a.v, who: Occupant::Agent(i) });
        }
        let ego = &self.state.ego;
        let mut ego_lanes: Vec<usize> = ego.occupied_lanes().collect();
        if with_signal {
            ego_lanes.extend(ego.signal_to);
        }
        ego_lanes.sort_unstable();
        ego_lanes.dedup();
        for l in ego_lanes {
            if l < lanes.len() {
                lanes[l].push(LaneSlot { s: ego.s, length: ego.length, v: ego.v, who: Occupant::Ego });
            }
        }
        for lane in &mut lanes {
            lane.sort_by(|a, b| a.s.total_cmp(&b.s).then_with(|| occupant_key(a.who).cmp(&occupant_key(b.who))));
        }
        lanes
    }

    /// Leader of an occupant already present in `lane`.
    pub fn leader_of(&self, occ: &[Vec<LaneSlot>], who: Occupant, lane: usize) -> Option<Leader> {
        let list = &occ[lane];
        let idx = list.iter().position(|x| x.who == who)?;
        if list.len() < 2 {
            return None;
        }
        let me = list[idx];
        let lead = list[(idx + 1) % list.len()];
        let gap = self.track.ds_ahead(me.s, lead.s) - (me.length + lead.length) / 2.0;
        Some(Leader { gap, v: lead.v })
    }

    /// Nearest occupants ahead and behind a hypothetical position in `lane`,
    /// ignoring `exclude`. Returns (front, rear) as (slot, center distance).
    pub fn neighbours_at(
        &self,
        occ: &[Vec<LaneSlot>],
        lane: usize,
        s: f64,
        exclude: Occupant,
    ) -> (Option<(LaneSlot, f64)>, Option<(LaneSlot, f64)>) {
        let mut front: Option<(LaneSlot, f64)> = None;
        let mut rear: Option<(LaneSlot, f64)> = None;
        for slot in occ[lane].iter().filter(|x| x.who != exclude) {
            let d = self.track.ds(s, slot.s);
            if d >= 0.0 {
                if front.map_or(true, |(_, fd)| d < fd) {
                    front = Some((*slot, d));
                }
            } else if rear.map_or(true, |(_, rd)| -d < rd) {
                rear = Some((*slot, -d));
            }
        }
        (front, rear)
    }

    pub fn step(&mut self, control: &EgoControl) -> Vec<SimEvent> {
        {
            let ego = &mut self.state.ego;
            ego.lane = control.lane.min(self.track.lane_count - 1);
            ego.offset = control.offset;
            ego.moving_to = control.moving_to.filter(|&l| l < self.track.lane_count);
            ego.signal_to = control.signal_to.filter(|&l| l < self.track.lane_count);
        }

        self.courtesy_lane_changes();

        let occ = self.occupancy(false);
        let accels: Vec<f64> = (0..self.state.agents.len())
            .map(|i| {
                let a = &self.state.agents[i];
                let leader = self.leader_of(&occ, Occupant::Agent(i), a.lane);
                self.idm.accel(a.v, a.desired_speed(&self.track), leader)
            })
            .collect();

        let track_len = self.track.length();
        for (a, acc) in self.state.agents.iter_mut().zip(accels) {
            let (v, ds) = integrate(a.v, acc, f64::INFINITY);
            a.v = v;
            a.s = (a.s + ds).rem_euclid(track_len);
            a.cooldown = (a.cooldown - DT).max(0.0);
        }

        let mut events = Vec::new();
        let ego = &mut self.state.ego;
        let (v, ds) = integrate(ego.v, control.accel, MAX_EGO_SPEED);
        ego.v = v;
        ego.s = (ego.s + ds).rem_euclid(track_len);
        ego.travelled += ds;
        while ego.travelled >= (ego.laps + 1) as f64 * track_len {
            ego.laps += 1;
            events.push(SimEvent::LapCompleted { lap: ego.laps });
        }
        self.state.step += 1;

        events.extend(self.detect_collisions());
        events
    }

    fn courtesy_lane_changes(&mut self) {
        let mut occ = self.occupancy(true);
        for i in 0..self.state.agents.len() {
            let (lane, v, desired, s, length) = {
                let a = &self.state.agents[i];
                (a.lane, a.v, a.desired_speed(&self.track), a.s, a.length)
            };
            let leader = self.leader_of(&occ, Occupant::Agent(i), lane);
            let held_back = leader.is_some_and(|l| l.gap < 60.0 && l.v < desired - 2.0) && v < desired - 2.0;
            let agent = &mut self.state.agents[i];
            agent.blocked_time = if held_back { agent.blocked_time + DT } else { 0.0 };
            if agent.blocked_time <= COURTESY_BLOCKED_SECS || agent.cooldown > 0.0 {
                continue;
            }
            let current_lead_v = leader.map_or(desired, |l| l.v);
            let mut targets = Vec::with_capacity(2);
            if lane + 1 < self.track.lane_count {
                targets.push(lane + 1);
            }
            if lane > 0 {
                targets.push(lane - 1);
            }
            for target in targets {
                let (front, rear) = self.neighbours_at(&occ, target, s, Occupant::Agent(i));
                let front_ok = front.map_or(true, |(f, d)| {
                    let gap = d - (f.length + length) / 2.0;
                    gap >= (v * 1.0).max(10.0) && f.v > current_lead_v + 1.0
                });
                let rear_ok = rear.map_or(true, |(r, d)| {
                    let gap = d - (r.length + length) / 2.0;
                    let follower_accel = self.idm.accel(r.v, r.v, Some(Leader { gap, v }));
                    gap >= (r.v * 1.5).max(10.0) && follower_accel >= -2.0
                });
                if front_ok && rear_ok {
                    let agent = &mut self.state.agents[i];
                    agent.lane = target;
                    agent.blocked_time = 0.0;
                    agent.cooldown = COURTESY_COOLDOWN_SECS;
                    occ = self.occupancy(true);
                    break;
                }
            }
        }
    }

    fn detect_collisions(&self) -> Vec<SimEvent> {
        let occ = self.occupancy(false);
        let mut events = Vec::new();
        for lane in &occ {
            let n = lane.len();
            if n < 2 {
                continue;
            }
            for k in 0..n {
                let a = lane[k];
                let b = lane[(k + 1) % n];
                if n == 2 && k == 1 {
                    break;
                }
                let gap = self.track.ds_ahead(a.s, b.s) - (a.length + b.length) / 2.0;
                if gap < 0.0 {
                    let ev = match (a.who, b.who) {
                        (Occupant::Ego, Occupant::Agent(j)) | (Occupant::Agent(j), Occupant::Ego) => {
                            SimEvent::EgoCollision { agent: self.state.agents[j].id }
                        }
                        (Occupant::Agent(i), Occupant::Agent(j)) => {
                            let (x, y) = (self.state.agents[i].id, self.state.agents[j].id);
                            SimEvent::AgentCollision { a: x.min(y), b: x.max(y) }
                        }
                        (Occupant::Ego, Occupant::Ego) => continue,
                    };
                    if !events.contains(&ev) {
                        events.push(ev);
                    }
                }
            }
        }
        events
    }

    pub fn speed_limit_at_ego(&self) -> f64 {
        self.track.speed_limit(self.state.ego.s)
    }
}

fn occupant_key(o: Occupant) -> usize {
    match o {
        Occupant::Ego => 0,
        Occupant::Agent(i) => i + 1,
    }
}

fn cap_by_gap(desired: f64, gap: Option<f64>, idm: &IdmParams) -> f64 {
    match gap {
        Some(g) => desired.min(((g - idm.min_gap) / idm.headway).max(0.0)),
        None => desired,
    }
}

/// Semi-implicit update that never reverses: returns (new speed, distance).
fn integrate(v: f64, accel: f64, v_max: f64) -> (f64, f64) {
    let v_new = (v + accel * DT).clamp(0.0, v_max);
    (v_new, 0.5 * (v + v_new) * DT)
}
