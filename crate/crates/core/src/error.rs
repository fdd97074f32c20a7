use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate attitude: pitch {pitch_deg:.3} deg is too close to +/-90 deg")]
    DegenerateAttitude { pitch_deg: f64 },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("insufficient points: need at least {needed}, got {got}")]
    InsufficientPoints { needed: usize, got: usize },

    #[error("affinity problem too large: {n} putative associations exceeds limit {limit}")]
    ProblemTooLarge { n: usize, limit: usize },

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("brute force refused: n = {n} exceeds {limit}")]
    TooLargeForBruteForce { n: usize, limit: usize },

    #[error("infeasible scenario: {0}")]
    InfeasibleScenario(String),

    #[error("missing ground truth: {0}")]
    MissingGroundTruth(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("parse error at line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
