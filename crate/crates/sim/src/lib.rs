//! Kinematic highway world: looped multi-lane tracks, car-following traffic,
//! density-based spawning, collision and lap events, plus the ego-centric
//! object list and lane raster sensors.

pub mod idm;
pub mod observe;
pub mod raster;
pub mod track;
pub mod world;

pub use observe::observe;
pub use raster::{render_lane_raster, LaneRaster, RASTER_HEIGHT, RASTER_WIDTH};
pub use track::{Track, TrackId};
pub use world::{
    AgentSpawn, Behavior, EgoBody, EgoControl, EgoSpawn, SimConfig, SimEvent, TrafficAgent, World, WorldState, DT,
};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("png: {0}")]
    Png(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
