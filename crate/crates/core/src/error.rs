use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown category `{0}`")]
    UnknownCategory(String),
    #[error("invalid range for {name}: [{lo}, {hi}]")]
    InvalidRange {
        name: &'static str,
        lo: f64,
        hi: f64,
    },
    #[error("unknown part id {0}")]
    UnknownPart(usize),
    #[error("gripper is already attached to part {0}")]
    AlreadyAttached(usize),
    #[error("gripper is not attached")]
    NotAttached,
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("6D rotation columns are (nearly) parallel")]
    DegenerateRotation,
    #[error("requested {requested} points from a cloud of {available}")]
    TooManyPoints { requested: usize, available: usize },
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("inconsistent feedback: {0}")]
    InconsistentFeedback(String),
    #[error("expert rollout rejected: {0}")]
    RolloutRejected(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("seed {seed} is outside the {range} seed range")]
    SeedRange { seed: u64, range: &'static str },
    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
