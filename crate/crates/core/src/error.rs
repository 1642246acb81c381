use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("superluminal velocity: |u| = {speed} >= c = {c}")]
    Superluminal { speed: f64, c: f64 },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("particle position {0:?} is not strictly inside the domain")]
    OutsideDomain([f64; 3]),

    #[error("time step {dt} violates the stability bound {limit}")]
    Cfl { dt: f64, limit: f64 },

    #[error("particle reached a node of psi at t = {time}: |psi| = {value:e} below tolerance {tolerance:e}")]
    NearNode { time: f64, value: f64, tolerance: f64 },

    #[error("radius {radius} is under-resolved (needs at least {minimum})")]
    Resolution { radius: f64, minimum: f64 },

    #[error("coupling singularity: |phi_bar| = {0:e}")]
    CouplingSingularity(f64),

    #[error("density is identically zero")]
    DegenerateDensity,

    #[error("cell {cell} has vanishing norm while holding the particle")]
    SingularEnergy { cell: usize },

    #[error("measurement flow failed at t = {time}: {reason}")]
    FlowFailure { time: f64, reason: String },

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("time ranges do not overlap")]
    DisjointTimes,

    #[error("configuration: {0}")]
    Config(String),

    #[error("missing required key `{0}`")]
    MissingKey(String),

    #[error("run with c = {c} failed: {source}")]
    Member {
        c: f64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Attach a simulation time to errors raised without one.
    pub fn at_time(self, t: f64) -> Self {
        match self {
            Error::NearNode { value, tolerance, .. } => Error::NearNode {
                time: t,
                value,
                tolerance,
            },
            Error::FlowFailure { reason, .. } => Error::FlowFailure { time: t, reason },
            other => other,
        }
    }
}
