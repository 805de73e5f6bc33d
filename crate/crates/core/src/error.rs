use thiserror::Error;

/// Errors raised by the channel, geometry and solver routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FpdError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Run configuration could not be read or fails a precondition.
    #[error("config error: {0}")]
    Config(String),

    /// The robot passes (numerically) through the operator location.
    #[error("degenerate geometry: squared distance to operator {distance_sq:e} m^2 is below the floor")]
    DegenerateGeometry { distance_sq: f64 },

    /// The Markov approximation breaks down: sigma_dm^2 / sigma_hat^2 >= 1.
    #[error("KL tolerance breakdown: variance ratio {ratio} >= 1")]
    KlBreakdown { ratio: f64 },

    #[error("singular covariance: {0}")]
    SingularCovariance(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("solver diverged at d = {distance} m (|g| = {value:e} per m)")]
    Instability { distance: f64, value: f64 },

    #[error("negative density {value:e} per m at d = {distance} m")]
    NegativeDensity { distance: f64, value: f64 },

    #[error("conditioning probability underflow ({0:e})")]
    ConditioningUnderflow(f64),

    #[error("aliasing: mass {edge_mass:e} near the grid edge exceeds tolerance (total {total:e})")]
    Aliasing { edge_mass: f64, total: f64 },

    #[error("rejection sampling infeasible: {accepted} of {trials} trials met the conditioning event")]
    RejectionRate { accepted: usize, trials: usize },

    #[error("covariance factorization failed at row {row}")]
    Factorization { row: usize },
}

pub type Result<T> = std::result::Result<T, FpdError>;

impl FpdError {
    /// True for errors caused by the inputs rather than by a computation.
    pub fn is_config(&self) -> bool {
        matches!(self, Self::Config(_) | Self::InvalidParameter(_) | Self::DegenerateGeometry { .. })
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> FpdError {
    FpdError::InvalidParameter(msg.into())
}
