//! Expert data collection into an episode directory:
//!
//! ```text
//! <episode>/manifest.txt      key=value, status incomplete|complete|invalid
//! <episode>/records.bin       header + one row per record
//! <episode>/events.log        "<step> collision <agent>" | "<step> agent_collision <a> <b>" | "<step> lap <n>"
//! <episode>/transitions.log   "<step> <from> <to> <lane> <target|->"
//! <episode>/rasters/NNNNNN.png
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use osha_control::travel_assist::{format_transition_log, parse_transition_log, LaneRequest, TaInput, TransitionRecord};
use osha_control::{Drive, Expert};
use osha_core::{EgoState, LaneChangeCommand, ObjectState, TaState, MAX_OBJECTS};
use osha_sim::{render_lane_raster, SimConfig, SimEvent, TrackId, World};

use crate::schema::{decode_records, encode_records, RawRecord};
use crate::DatasetError;

/// Sim steps per record: 50 Hz simulation, 25 Hz recording.
pub const RECORD_EVERY: u32 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSpec {
    pub sim: SimConfig,
    pub steps: u32,
    pub rasters: bool,
}

impl EpisodeSpec {
    pub fn new(track: TrackId, density: f64, seed: u64) -> Self {
        Self { sim: SimConfig::new(track, density, seed), steps: 20_000, rasters: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpisodeStatus {
    Incomplete,
    Complete,
    Invalid,
}

impl EpisodeStatus {
    fn name(self) -> &'static str {
        match self {
            EpisodeStatus::Incomplete => "incomplete",
            EpisodeStatus::Complete => "complete",
            EpisodeStatus::Invalid => "invalid",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub seed: u64,
    pub density: f64,
    pub track: TrackId,
    pub steps: u32,
    pub records: usize,
    pub rasters: bool,
    pub collision_step: Option<u64>,
    pub laps: u32,
    pub status: EpisodeStatus,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "format=osha-episode-1");
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "density={}", self.density);
        let _ = writeln!(s, "track={}", self.track.name());
        let _ = writeln!(s, "steps={}", self.steps);
        let _ = writeln!(s, "record_every={RECORD_EVERY}");
        let _ = writeln!(s, "records={}", self.records);
        let _ = writeln!(s, "rasters={}", self.rasters);
        let _ = writeln!(s, "collision_step={}", self.collision_step.map_or("none".into(), |c| c.to_string()));
        let _ = writeln!(s, "laps={}", self.laps);
        let _ = writeln!(s, "status={}", self.status.name());
        s
    }

    pub fn parse(text: &str) -> Result<Self, DatasetError> {
        let get = |key: &str| -> Result<&str, DatasetError> {
            text.lines()
                .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
                .ok_or_else(|| DatasetError::Format(format!("manifest missing {key}")))
        };
        let bad = |key: &str| DatasetError::Format(format!("manifest field {key} malformed"));
        let status = match get("status")? {
            "incomplete" => EpisodeStatus::Incomplete,
            "complete" => EpisodeStatus::Complete,
            "invalid" => EpisodeStatus::Invalid,
            _ => return Err(bad("status")),
        };
        Ok(Self {
            seed: get("seed")?.parse().map_err(|_| bad("seed"))?,
            density: get("density")?.parse().map_err(|_| bad("density"))?,
            track: TrackId::from_name(get("track")?).ok_or_else(|| bad("track"))?,
            steps: get("steps")?.parse().map_err(|_| bad("steps"))?,
            records: get("records")?.parse().map_err(|_| bad("records"))?,
            rasters: get("rasters")?.parse().map_err(|_| bad("rasters"))?,
            collision_step: match get("collision_step")? {
                "none" => None,
                v => Some(v.parse().map_err(|_| bad("collision_step"))?),
            },
            laps: get("laps")?.parse().map_err(|_| bad("laps"))?,
            status,
        })
    }
}

pub fn format_events(events: &[(u64, SimEvent)]) -> String {
    let mut s = String::new();
    for (step, e) in events {
        let _ = match e {
            SimEvent::EgoCollision { agent } => writeln!(s, "{step} collision {agent}"),
            SimEvent::AgentCollision { a, b } => writeln!(s, "{step} agent_collision {a} {b}"),
            SimEvent::LapCompleted { lap } => writeln!(s, "{step} lap {lap}"),
        };
    }
    s
}

pub fn parse_events(text: &str) -> Result<Vec<(u64, SimEvent)>, DatasetError> {
    let bad = |l: &str| DatasetError::Format(format!("bad event line: {l}"));
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split_whitespace().collect();
            let num = |i: usize| f.get(i).and_then(|v| v.parse::<u64>().ok()).ok_or_else(|| bad(l));
            let step = num(0)?;
            let e = match f.get(1).copied() {
                Some("collision") => SimEvent::EgoCollision { agent: num(2)? as u32 },
                Some("agent_collision") => SimEvent::AgentCollision { a: num(2)? as u32, b: num(3)? as u32 },
                Some("lap") => SimEvent::LapCompleted { lap: num(2)? as u32 },
                _ => return Err(bad(l)),
            };
            Ok((step, e))
        })
        .collect()
}

pub fn raster_path(dir: &Path, record: usize) -> PathBuf {
    dir.join("rasters").join(format!("{record:06}.png"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSummary {
    pub manifest: Manifest,
    pub raw_commands: usize,
}

/// Run the expert for `spec.steps` sim steps (or until the first ego
/// collision) and write the episode directory. On failure the manifest is
/// left marked invalid.
pub fn record_episode(spec: &EpisodeSpec, dir: &Path) -> Result<EpisodeSummary, DatasetError> {
    let mut manifest = Manifest {
        seed: spec.sim.seed,
        density: spec.sim.density,
        track: spec.sim.track,
        steps: spec.steps,
        records: 0,
        rasters: spec.rasters,
        collision_step: None,
        laps: 0,
        status: EpisodeStatus::Incomplete,
    };
    fs::create_dir_all(dir.join("rasters")).map_err(DatasetError::io(dir))?;
    let manifest_path = dir.join("manifest.txt");
    fs::write(&manifest_path, manifest.to_text()).map_err(DatasetError::io(&manifest_path))?;

    match collect(spec, dir, &mut manifest) {
        Ok(summary) => Ok(summary),
        Err(e) => {
            manifest.status = EpisodeStatus::Invalid;
            let _ = fs::write(&manifest_path, manifest.to_text());
            Err(e)
        }
    }
}

/// Records, events and TA log of one driven episode, before writing.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub records: Vec<RawRecord>,
    pub events: Vec<(u64, SimEvent)>,
    pub transitions: Vec<TransitionRecord>,
    pub collision_step: Option<u64>,
    pub laps: u32,
}

/// Drive for `steps` sim steps with `policy` choosing the TA input,
/// recording every `RECORD_EVERY` steps. Per step: observe, decide,
/// record (with the command latched since the previous record), then step
/// the controller and the world. Stops after the first ego collision.
/// `on_record` sees the world at each recorded step.
pub fn run_recording<P, R>(mut drive: Drive, steps: u32, mut policy: P, mut on_record: R) -> Result<Recording, DatasetError>
where
    P: FnMut(u64, &EgoState, &[ObjectState; MAX_OBJECTS], TaState) -> TaInput,
    R: FnMut(usize, &World) -> Result<(), DatasetError>,
{
    let mut records = Vec::with_capacity((steps / RECORD_EVERY) as usize);
    let mut events = Vec::new();
    let mut latched = LaneRequest::KeepLane;
    let mut collision_step = None;

    for _ in 0..steps {
        let step = drive.step_count();
        let (mut ego, objects) = drive.observe();
        let input = policy(step, &ego, &objects, drive.ta.state);
        if input.lane_request != LaneRequest::KeepLane {
            latched = input.lane_request;
        }
        if step % RECORD_EVERY as u64 == 0 {
            let command = latched.command();
            ego.command = command;
            on_record(records.len(), &drive.world)?;
            records.push(RawRecord { step: step as u32, ego, objects, command, ta_state: drive.ta.state });
            latched = LaneRequest::KeepLane;
        }
        let stepped = drive.step(input, &ego, &objects);
        let after = drive.step_count();
        for e in stepped {
            if let SimEvent::EgoCollision { .. } = e {
                collision_step.get_or_insert(after);
            }
            events.push((after, e));
        }
        if collision_step.is_some() {
            break;
        }
    }
    Ok(Recording { records, events, transitions: drive.ta.log, collision_step, laps: drive.world.state.ego.laps })
}

fn collect(spec: &EpisodeSpec, dir: &Path, manifest: &mut Manifest) -> Result<EpisodeSummary, DatasetError> {
    let drive = Drive::new(World::reset(&spec.sim)?);
    let mut expert = Expert::default();
    let rec = run_recording(
        drive,
        spec.steps,
        |step, ego, objects, ta| expert.step(step, ego, objects, ta),
        |index, world| {
            if spec.rasters {
                render_lane_raster(world).write_png(&raster_path(dir, index))?;
            }
            Ok(())
        },
    )?;

    let raw_commands = rec.records.iter().filter(|r| r.command != LaneChangeCommand::KeepLane).count();
    let write = |name: &str, bytes: &[u8]| {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(DatasetError::io(p))
    };
    write("records.bin", &encode_records(&rec.records))?;
    write("events.log", format_events(&rec.events).as_bytes())?;
    write("transitions.log", format_transition_log(&rec.transitions).as_bytes())?;
    manifest.records = rec.records.len();
    manifest.collision_step = rec.collision_step;
    manifest.laps = rec.laps;
    manifest.status = EpisodeStatus::Complete;
    write("manifest.txt", manifest.to_text().as_bytes())?;
    Ok(EpisodeSummary { manifest: manifest.clone(), raw_commands })
}

/// A recorded episode loaded back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct RawEpisode {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub records: Vec<RawRecord>,
    pub events: Vec<(u64, SimEvent)>,
    pub transitions: Vec<TransitionRecord>,
}

impl RawEpisode {
    pub fn load(dir: &Path) -> Result<Self, DatasetError> {
        let read = |name: &str| {
            let p = dir.join(name);
            fs::read(&p).map_err(DatasetError::io(p))
        };
        let text = |name: &str| {
            String::from_utf8(read(name)?).map_err(|_| DatasetError::Format(format!("{name} is not UTF-8")))
        };
        let manifest = Manifest::parse(&text("manifest.txt")?)?;
        if manifest.status != EpisodeStatus::Complete {
            return Err(DatasetError::Format(format!("episode {} is {}", dir.display(), manifest.status.name())));
        }
        let records = decode_records(&read("records.bin")?)?;
        if records.len() != manifest.records {
            return Err(DatasetError::Format("record count disagrees with manifest".into()));
        }
        let events = parse_events(&text("events.log")?)?;
        let transitions = parse_transition_log(&text("transitions.log")?).map_err(DatasetError::Format)?;
        Ok(Self { dir: dir.to_path_buf(), manifest, records, events, transitions })
    }

    pub fn raster_bytes(&self, record: usize) -> Result<Vec<u8>, DatasetError> {
        let p = raster_path(&self.dir, record);
        let img = osha_sim::LaneRaster::read_png(&p)?;
        Ok(img.pixels)
    }
}

/// Episode directories under `root`, sorted by name.
pub fn list_episodes(root: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(DatasetError::io(root))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("manifest.txt").is_file())
        .collect();
    dirs.sort();
    Ok(dirs)
}
