use thiserror::Error;

/// Errors shared by the lattice, operator and solver layers.
#[derive(Error, Debug)]
pub enum CoreError {
    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("root finder failed to converge: {0}")]
    RootFind(String),

    #[error("unsupported size: {0}")]
    UnsupportedSize(String),

    #[error("operator assembly failed: {0}")]
    Assembly(String),

    #[error("linear solve failed or operator ill-conditioned: {0}")]
    Conditioning(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("trajectory diverged (non-finite value) at step {step}: {context}")]
    Divergence { step: usize, context: String },

    #[error("sampler misconfigured: {0}")]
    Sampler(String),

    #[error("drift mode not valid here: {0}")]
    Mode(String),

    #[error("statistical precision not reached: {0}")]
    Statistics(String),

    #[error("time step too large for stable integration: {0}")]
    Stiff(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
