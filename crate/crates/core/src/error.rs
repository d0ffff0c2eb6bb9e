use std::fmt;

/// Configuration validation failure, tagged with the offending key path
/// (for example `policy[1].rate`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError { path: path.into(), message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("capture error: {0}")]
    Capture(#[from] crate::io::CaptureError),
    #[error("live adapter error: {0}")]
    Live(#[from] crate::io::LiveError),
    #[error("synth error: {0}")]
    Synth(#[from] crate::synth::SynthError),
    #[error("simulation error: {0}")]
    Sim(#[from] crate::sim::SimError),
    #[error("detector error: {0}")]
    Detect(#[from] crate::detect::DetectError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
