use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("episode finished; call reset before stepping again")]
    EpisodeOver,
    #[error("invalid randomization range for {0}: low > high")]
    InvalidRange(&'static str),
    #[error("trajectory io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EnvError>;
