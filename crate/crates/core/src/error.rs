use thiserror::Error;

#[derive(Debug, Error)]
pub enum CrmhError {
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("degenerate distribution: all log-weights are -inf")]
    Degenerate,
    #[error("corrupt sampler state: {0}")]
    State(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("instance too large: {0}")]
    Size(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CrmhError>;

pub(crate) fn param<T>(msg: impl Into<String>) -> Result<T> {
    Err(CrmhError::Param(msg.into()))
}
