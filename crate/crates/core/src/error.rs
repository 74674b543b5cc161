use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("scene generation failed: {0}")]
    SceneGeneration(String),

    #[error("invalid agent pose: {0}")]
    InvalidPose(String),

    #[error("no path from {start:?} to {goal:?}")]
    NoPath { start: (usize, usize), goal: (usize, usize) },

    #[error("no reachable goal cell")]
    NoGoal,

    #[error("exploration complete: no frontier remains")]
    ExplorationComplete,

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("reply parse failed: {0}")]
    ReplyParse(String),

    #[error("transport failure: {0}")]
    Transport(String),

    #[error("degenerate corpus: {0}")]
    DegenerateCorpus(String),

    #[error("evaluation failed: {0}")]
    Evaluation(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("phase `{phase}` failed: {source}")]
    Phase {
        phase: String,
        #[source]
        source: Box<Error>,
    },

    #[error("unsupported artifact version: expected {expected}, found {found}")]
    Version { expected: String, found: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Process exit code for the CLI: 2 config, 4 remote service, 3 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Version { .. } => 2,
            Error::Transport(_) => 4,
            Error::Phase { source, .. } => source.exit_code().max(3),
            _ => 3,
        }
    }
}
