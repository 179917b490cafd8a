use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("input points are collinear")]
    CollinearInput,
    #[error("input contains duplicate points ({0} and {1})")]
    DuplicatePoints(usize, usize),
    #[error("too few points: need at least 3, got {0}")]
    TooFewPoints(usize),
    #[error("target vertex count {target} is outside [{min}, {max}]")]
    TargetTooSmall { target: usize, min: usize, max: usize },
    #[error("point ({x}, {y}) lies outside the mesh")]
    PointOutsideMesh { x: f64, y: f64 },
    #[error("degenerate triangle {0}")]
    DegenerateTriangle(usize),
    #[error("invalid mesh: {0}")]
    InvalidMesh(&'static str),
    #[error("kappa must be positive, got {0}")]
    NonPositiveKappa(f64),
    #[error("matrix is not positive definite (pivot {0})")]
    NotPositiveDefinite(usize),
    #[error("Cholesky factorization failed after jitter escalation")]
    CholeskyFailure,
    #[error("innovation covariance is singular at t = {0}")]
    SingularInnovationCovariance(usize),
    #[error("predicted covariance is singular at t = {0}")]
    SingularPredictedCovariance(usize),
    #[error("joint dimension {0} exceeds the dense oracle limit")]
    DimensionTooLarge(usize),
    #[error("normal equations for beta are singular")]
    SingularNormalEquations,
    #[error("variable {0} has no observations")]
    NoObservationsForVariable(usize),
    #[error("degenerate denominator in the AR update for component {0}")]
    DegenerateDenominator(usize),
    #[error("loading system for row {0} is singular")]
    SingularRowSystem(usize),
    #[error("no interior minimum for kappa of component {component}; boundary value {kappa} returned")]
    NoInteriorMinimum { component: usize, kappa: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(&'static str),
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("empty observation panel")]
    EmptyPanel,
}
