use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed data: {0}")]
    Format(String),
    #[error(transparent)]
    Sim(#[from] osha_sim::SimError),
    #[error(transparent)]
    Core(#[from] osha_core::CoreError),
}

impl DatasetError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> DatasetError {
        let path = path.into();
        move |source| DatasetError::Io { path, source }
    }
}
