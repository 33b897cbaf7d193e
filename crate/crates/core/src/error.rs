use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid layout: {0}")]
    InvalidLayout(String),

    #[error("operator layouts differ")]
    LayoutMismatch,

    #[error("mode index {index} out of range for a layout with {modes} mode(s)")]
    ModeOutOfRange { index: usize, modes: usize },

    #[error("layout has no spin factor")]
    NoSpin,

    #[error("matrix dimension {got} does not match layout dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("displacement |alpha|^2 = {alpha_sq} exceeds cutoff/4 = {limit}")]
    DisplacementTooLarge { alpha_sq: f64, limit: f64 },

    #[error("thermal occupation {nbar} too large for cutoff {cutoff}: truncated tail {tail:e} >= {tolerance:e}")]
    NbarTooLarge { nbar: f64, cutoff: usize, tail: f64, tolerance: f64 },

    #[error("cutoff {cutoff} too small: truncated mass {mass:e} >= {tolerance:e}")]
    CutoffTooSmall { cutoff: usize, mass: f64, tolerance: f64 },

    #[error("invalid density matrix: {0}")]
    InvalidState(String),

    #[error("parameter `{name}` must be {requirement}, got {value}")]
    InvalidParameter { name: &'static str, requirement: &'static str, value: f64 },

    #[error("step rule violated: h * stiffness = {product} exceeds budget {budget}")]
    StepRule { product: f64, budget: f64 },

    #[error("time grid invalid: {0}")]
    InvalidGrid(String),

    #[error("state invariant broken at t = {time}: {detail}")]
    InvariantBroken { time: f64, detail: String },

    #[error("master equation has no dissipators; steady state is not unique")]
    NoDissipators,

    #[error("steady state not converged by t = {time}: residual {residual:e}")]
    SteadyStateNotConverged { time: f64, residual: f64 },

    #[error("time series has no observable named `{0}`")]
    MissingObservable(String),

    #[error("transfer rate denominator {0:e} is degenerate")]
    DegenerateRate(f64),

    #[error("energy gap {delta_e} is not an integer multiple of omega = {omega}")]
    NonIntegerGap { delta_e: f64, omega: f64 },

    #[error("red-sideband cooling rate {gamma_r} does not exceed heating rate {gamma_b}; the mode cannot equilibrate")]
    NonEquilibrating { gamma_r: f64, gamma_b: f64 },

    #[error("invalid population vector: {0}")]
    InvalidSimplex(String),

    #[error("fit is rank deficient in population levels {levels:?}")]
    RankDeficient { levels: Vec<usize> },

    #[error("fit constraints infeasible: {0}")]
    InfeasibleConstraints(String),

    #[error("fit input invalid: {0}")]
    InvalidFitInput(String),

    #[error("grid point {index} failed: {source}")]
    GridPoint {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("trajectory {index} failed: {source}")]
    Trajectory {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
