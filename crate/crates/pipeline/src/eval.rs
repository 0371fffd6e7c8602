//! Closed-loop evaluation: a policy drives the Travel Assist on the
//! evaluation track until one lap or the step cap.

use std::collections::VecDeque;
use std::fmt::Write as _;

use osha_control::{Drive, Expert, LaneRequest, TaInput};
use osha_core::{EgoState, LaneChangeCommand, ObjectState, MAX_OBJECTS};
use osha_dataset::process::HISTORY_OFFSETS;
use osha_dataset::record::RECORD_EVERY;
use osha_dataset::{frame_features, RawRecord, FRAME_FEATURES};
use osha_nn::{Model, Tensor, RASTER_PIXELS};
use osha_sim::{render_lane_raster, SimConfig, SimEvent, TrackId, World, DT};
use serde::{Deserialize, Serialize};

use crate::metrics::{speed_difference, OvertakeConfig, OvertakeTracker};
use crate::report::{render_opt, Aggregate, MeanStd};
use crate::PipelineError;

/// Physical bound on commanded speed, m/s.
const MAX_TARGET_SPEED: f64 = osha_core::units::MAX_EGO_SPEED;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub track: TrackId,
    /// Vehicles per km.
    pub density: f64,
    pub episodes: usize,
    /// Episode `i` uses seed `seed + i`, for every policy.
    pub seed: u64,
    pub max_steps: u32,
    /// Sim steps between model queries; the TA holds the last target speed
    /// in between.
    pub query_every: u32,
    pub overtake: OvertakeConfig,
    /// Worker threads (0: available parallelism).
    pub workers: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            track: TrackId::Evaluation,
            density: 15.0,
            episodes: 10,
            seed: 10_000,
            max_steps: 20_000,
            query_every: 10,
            overtake: OvertakeConfig::default(),
            workers: 0,
        }
    }
}

/// What drives the ego.
#[derive(Debug, Clone, Copy)]
pub enum Policy<'a> {
    Model(&'a Model),
    /// The rule-based expert, queried every step as during collection.
    Expert,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub seed: u64,
    pub steps: u64,
    pub finished: bool,
    /// Mean `|v - limit|`, m/s.
    pub speed_difference: f64,
    /// Lap time, or the step cap in seconds when the lap was not finished.
    pub time_to_finish: f64,
    pub overtakes_left: u32,
    pub encounters: u32,
    pub overtake_ratio: Option<f64>,
    pub collisions: u32,
    /// Arclength driven, m.
    pub distance: f64,
    pub lane_changes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub policy: String,
    pub config: EvalConfig,
    pub seeds: Vec<u64>,
    pub episodes: Vec<EpisodeMetrics>,
    pub aggregate: Aggregate,
}

impl EvalReport {
    pub fn new(policy: &str, config: &EvalConfig, episodes: Vec<EpisodeMetrics>) -> Self {
        Self {
            policy: policy.to_string(),
            config: config.clone(),
            seeds: episodes.iter().map(|e| e.seed).collect(),
            aggregate: aggregate(&episodes),
            episodes,
        }
    }

    pub fn to_json(&self) -> Result<String, PipelineError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn render(&self) -> String {
        let a = &self.aggregate;
        let mut s = String::new();
        let _ = writeln!(s, "policy {} | {} track, {}/km, {} episodes", self.policy, self.config.track.name(), self.config.density, a.episodes);
        let _ = writeln!(s, "{:>10}  {:>6}  {:>9}  {:>9}  {:>7}  {:>8}  {:>5}", "seed", "done", "speed_diff", "time_s", "overtk", "distance", "coll");
        for e in &self.episodes {
            let _ = writeln!(
                s,
                "{:>10}  {:>6}  {:>9.3}  {:>9.1}  {:>7}  {:>8.0}  {:>5}",
                e.seed,
                e.finished,
                e.speed_difference,
                e.time_to_finish,
                format!("{}/{}", e.overtakes_left, e.encounters),
                e.distance,
                e.collisions
            );
        }
        let _ = writeln!(
            s,
            "mean ± std: speed difference {} m/s, time to finish {} s, left overtake ratio {}, distance {} m; finished {}/{}, collisions {}",
            render_opt(&a.speed_difference),
            render_opt(&a.time_to_finish),
            render_opt(&a.overtake_ratio),
            render_opt(&a.distance),
            a.finished,
            a.episodes,
            a.collisions
        );
        s
    }
}

pub fn aggregate(episodes: &[EpisodeMetrics]) -> Aggregate {
    let col = |f: &dyn Fn(&EpisodeMetrics) -> Option<f64>| MeanStd::of(&episodes.iter().filter_map(f).collect::<Vec<_>>());
    Aggregate {
        episodes: episodes.len(),
        speed_difference: col(&|e| Some(e.speed_difference)),
        time_to_finish: col(&|e| Some(e.time_to_finish)),
        overtake_ratio: col(&|e| e.overtake_ratio),
        distance: col(&|e| Some(e.distance)),
        finished: episodes.iter().filter(|e| e.finished).count(),
        collisions: episodes.iter().map(|e| e.collisions as usize).sum(),
    }
}

/// Rolling 25 Hz frame history for model queries.
struct History {
    frames: VecDeque<[f64; FRAME_FEATURES]>,
    recorded: usize,
}

impl History {
    const SPAN: usize = HISTORY_OFFSETS[0] + 1;

    fn new() -> Self {
        Self { frames: VecDeque::with_capacity(Self::SPAN), recorded: 0 }
    }

    fn push(&mut self, f: [f64; FRAME_FEATURES]) {
        if self.frames.len() == Self::SPAN {
            self.frames.pop_front();
        }
        self.frames.push_back(f);
        self.recorded += 1;
    }

    /// Frames at the training offsets, oldest first; offsets reaching
    /// before the first record repeat it, as for early training anchors.
    fn window(&self) -> Vec<f64> {
        let last = self.frames.len() - 1;
        let mut out = Vec::with_capacity(HISTORY_OFFSETS.len() * FRAME_FEATURES);
        for o in HISTORY_OFFSETS {
            out.extend_from_slice(&self.frames[last.saturating_sub(o)]);
        }
        out
    }
}

fn model_input(model: &Model, hist: &History, world: &World) -> Result<TaInput, PipelineError> {
    let frames = Tensor::from_vec(HISTORY_OFFSETS.len(), FRAME_FEATURES, hist.window())?;
    let raster = if model.config.use_vision {
        let px = render_lane_raster(world).pixels;
        Some(Tensor::from_vec(1, RASTER_PIXELS, px.iter().map(|&p| p as f64 / 255.0).collect())?)
    } else {
        None
    };
    let out = model.predict(&frames, raster.as_ref(), 1)?;
    let o = &out[0];
    let lane_request = match LaneChangeCommand::ALL[o.lane_class(0)] {
        LaneChangeCommand::Left => LaneRequest::Left,
        LaneChangeCommand::Right => LaneRequest::Right,
        LaneChangeCommand::KeepLane | LaneChangeCommand::Transition => LaneRequest::KeepLane,
    };
    let v = o.velocities[0];
    let target_speed = if v.is_finite() { v.clamp(0.0, MAX_TARGET_SPEED) } else { 0.0 };
    Ok(TaInput { lane_request, target_speed })
}

/// Drive one episode on `sim` with `policy`.
pub fn run_episode(policy: Policy<'_>, sim: &SimConfig, cfg: &EvalConfig) -> Result<EpisodeMetrics, PipelineError> {
    let mut drive = Drive::new(World::reset(sim)?);
    let mut expert = Expert::default();
    let mut hist = History::new();
    let mut tracker = OvertakeTracker::new(cfg.overtake);
    let mut speeds = Vec::with_capacity(cfg.max_steps as usize);
    let mut held = TaInput::keep(0.0);
    let mut collisions = 0u32;
    let query_every = cfg.query_every.max(1) as u64;

    for _ in 0..cfg.max_steps {
        let step = drive.step_count();
        let (ego, objects): (EgoState, [ObjectState; MAX_OBJECTS]) = drive.observe();
        speeds.push((ego.v, ego.speed_limit));
        let input = match policy {
            Policy::Expert => expert.step(step, &ego, &objects, drive.ta.state),
            Policy::Model(model) => {
                if step % RECORD_EVERY as u64 == 0 {
                    let rec = RawRecord { step: step as u32, ego, objects, command: LaneChangeCommand::KeepLane, ta_state: drive.ta.state };
                    hist.push(frame_features(&rec));
                }
                if step % query_every == 0 {
                    held = model_input(model, &hist, &drive.world)?;
                    held
                } else {
                    TaInput::keep(held.target_speed)
                }
            }
        };
        let events = drive.step(input, &ego, &objects);
        tracker.update(&drive.world);
        collisions += events.iter().filter(|e| matches!(e, SimEvent::EgoCollision { .. })).count() as u32;
        if collisions > 0 || drive.world.state.ego.laps > 0 {
            break;
        }
    }
    let steps = drive.step_count();
    let finished = drive.world.state.ego.laps > 0 && collisions == 0;
    Ok(EpisodeMetrics {
        seed: sim.seed,
        steps,
        finished,
        speed_difference: speed_difference(&speeds).unwrap_or(0.0),
        time_to_finish: if finished { steps as f64 * DT } else { cfg.max_steps as f64 * DT },
        overtakes_left: tracker.overtakes,
        encounters: tracker.encounters,
        overtake_ratio: tracker.ratio(),
        collisions,
        distance: drive.world.state.ego.travelled,
        lane_changes: osha_control::travel_assist::completed_changes(&drive.ta.log).len(),
    })
}

/// Run `cfg.episodes` seeded episodes, spread over worker threads and
/// merged in seed order.
pub fn evaluate(policy: Policy<'_>, name: &str, cfg: &EvalConfig) -> Result<EvalReport, PipelineError> {
    let seeds: Vec<u64> = (0..cfg.episodes as u64).map(|i| cfg.seed + i).collect();
    let workers = match cfg.workers {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        n => n,
    }
    .min(seeds.len().max(1));
    let run = |seed: u64| run_episode(policy, &SimConfig { max_steps: cfg.max_steps, ..SimConfig::new(cfg.track, cfg.density, seed) }, cfg);
    let mut results: Vec<Option<Result<EpisodeMetrics, PipelineError>>> = (0..seeds.len()).map(|_| None).collect();
    if workers <= 1 {
        for (slot, &s) in results.iter_mut().zip(&seeds) {
            *slot = Some(run(s));
        }
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    let seeds = &seeds;
                    let run = &run;
                    scope.spawn(move || (w..seeds.len()).step_by(workers).map(|i| (i, run(seeds[i]))).collect::<Vec<_>>())
                })
                .collect();
            for h in handles {
                for (i, r) in h.join().expect("evaluation worker panicked") {
                    results[i] = Some(r);
                }
            }
        });
    }
    let episodes = results.into_iter().map(|r| r.expect("every seed evaluated")).collect::<Result<Vec<_>, _>>()?;
    Ok(EvalReport::new(name, cfg, episodes))
}
