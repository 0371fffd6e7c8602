//! Expert data collection, preprocessing and the on-disk dataset format.

pub mod error;
pub mod features;
pub mod process;
pub mod processed;
pub mod record;
pub mod schema;
pub mod stats;

pub use error::DatasetError;
pub use features::{frame_features, Sample, FRAME_FEATURES, HISTORY_LEN};
pub use process::{augment_commands, extract_futures, prune_collisions, DropReason, Futures};
pub use processed::{preprocess, process_episode, EpisodeMeta, ProcessedDataset, ProcessedEpisode, SampleRef, RASTER_BYTES};
pub use record::{list_episodes, record_episode, run_recording, Recording, EpisodeSpec, EpisodeStatus, EpisodeSummary, Manifest, RawEpisode};
pub use schema::RawRecord;
pub use stats::{compute_stats, DatasetStats};
