//! Collection, training, closed-loop evaluation and the ablation study,
//! tied together by the `osha` binary.

pub mod ablation;
pub mod batch;
pub mod collect;
pub mod eval;
pub mod metrics;
pub mod report;
pub mod train;

pub use ablation::{ablation_suite, AblationReport, AblationRow};
pub use batch::build_batch;
pub use collect::{collect, CollectConfig};
pub use eval::{evaluate, run_episode, EpisodeMetrics, EvalConfig, EvalReport, Policy};
pub use metrics::{speed_difference, OvertakeConfig, OvertakeTracker};
pub use report::{MeanStd, Aggregate};
pub use train::{lane_accuracy, majority_baseline, train, EpochLog, TrainConfig, TrainReport};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Dataset(#[from] osha_dataset::DatasetError),
    #[error(transparent)]
    Nn(#[from] osha_nn::NnError),
    #[error(transparent)]
    Sim(#[from] osha_sim::SimError),
    #[error("io error on {0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("configuration: {0}")]
    Config(String),
}

impl PipelineError {
    pub(crate) fn io(path: impl AsRef<std::path::Path>) -> impl FnOnce(std::io::Error) -> Self {
        let p = path.as_ref().display().to_string();
        move |e| PipelineError::Io(p, e)
    }
}
