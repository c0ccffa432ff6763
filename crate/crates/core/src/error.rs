use thiserror::Error;

/// Which end of the excursion interval an anchor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorSide {
    Left,
    Right,
}

impl std::fmt::Display for AnchorSide {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AnchorSide::Left => f.write_str("left"),
            AnchorSide::Right => f.write_str("right"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("volatility must be positive, got {0}")]
    NonpositiveSigma(f64),
    #[error("characteristic roots are degenerate: {0}")]
    DegenerateRoots(String),
    #[error("supplied derivative of {name} disagrees with finite differences at x={x} (relative error {rel:.3e})")]
    InconsistentDerivatives { name: &'static str, x: f64, rel: f64 },
    #[error("F = psi/phi is not strictly increasing near x={0}")]
    NonmonotoneF(f64),
    #[error("invalid fundamental pair: {0}")]
    InvalidFundamental(String),
    #[error("point {x} lies outside the open state space ({lo}, {hi})")]
    OutOfDomain { x: f64, lo: f64, hi: f64 },
    #[error("reward depends on the running maximum; this solver needs an s-independent reward")]
    RequiresSIndependent,
    #[error("reward depends on the state; this formula needs an x-independent reward")]
    RequiresXIndependent,
    #[error("empty search domain: b(s) = {0} < 0")]
    EmptyDomain(f64),
    #[error("assumption check failed: {0}")]
    AssumptionViolated(String),
    #[error("division by a vanishing denominator ({0})")]
    DivisionByZero(String),
    #[error("reward has a kink at x={x}: left slope {left}, right slope {right}")]
    NotDifferentiable { x: f64, left: f64, right: f64 },
    #[error("truncation at m={m_max} is too small: tail weight {weight:.3e}")]
    TruncationTooSmall { m_max: f64, weight: f64 },
    #[error("hazard denominator vanished at u={0}")]
    ZeroDenominator(f64),
    #[error("degenerate excursion interval: F(s) - F(s - b(s)) = {0:.3e}")]
    DegenerateInterval(f64),
    #[error("{side} anchor {anchor} lies below the obstacle value {obstacle}")]
    AnchorBelowObstacle { side: AnchorSide, anchor: f64, obstacle: f64 },
    #[error("x={x} outside the excursion range [{lo}, {hi}]")]
    OutOfExcursionRange { x: f64, lo: f64, hi: f64 },
    #[error("row {index}: {source}")]
    Row {
        index: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("convergence condition violated: mu/2 - sigma^2/8 - q = {0} >= 0")]
    ConvergenceViolated(f64),
    #[error("state must be positive, got {0}")]
    NonpositiveState(f64),
    #[error("no tangency point bracketed in ({lo}, {hi})")]
    NoTangency { lo: f64, hi: f64 },
    #[error("initial state is already absorbed: x0={x0}, s0={s0}, b(s0)={b}")]
    AlreadyAbsorbed { x0: f64, s0: f64, b: f64 },
    #[error("time step must be positive, got {0}")]
    NonpositiveDt(f64),
    #[error("explicit lattice scheme is not monotone: {0}")]
    UnstableScheme(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("quadrature did not converge: {0}")]
    Quadrature(String),
}

impl Error {
    /// Stable identifier used in CLI diagnostics.
    pub fn name(&self) -> &'static str {
        match self {
            Error::NonpositiveSigma(_) => "NonpositiveSigma",
            Error::DegenerateRoots(_) => "DegenerateRoots",
            Error::InconsistentDerivatives { .. } => "InconsistentDerivatives",
            Error::NonmonotoneF(_) => "NonmonotoneF",
            Error::InvalidFundamental(_) => "InvalidFundamental",
            Error::OutOfDomain { .. } => "OutOfDomain",
            Error::RequiresSIndependent => "RequiresSIndependent",
            Error::RequiresXIndependent => "RequiresXIndependent",
            Error::EmptyDomain(_) => "EmptyDomain",
            Error::AssumptionViolated(_) => "AssumptionViolated",
            Error::DivisionByZero(_) => "DivisionByZero",
            Error::NotDifferentiable { .. } => "NotDifferentiable",
            Error::TruncationTooSmall { .. } => "TruncationTooSmall",
            Error::ZeroDenominator(_) => "ZeroDenominator",
            Error::DegenerateInterval(_) => "DegenerateInterval",
            Error::AnchorBelowObstacle { .. } => "AnchorBelowObstacle",
            Error::OutOfExcursionRange { .. } => "OutOfExcursionRange",
            Error::Row { source, .. } => source.name(),
            Error::ConvergenceViolated(_) => "ConvergenceViolated",
            Error::NonpositiveState(_) => "NonpositiveState",
            Error::NoTangency { .. } => "NoTangency",
            Error::AlreadyAbsorbed { .. } => "AlreadyAbsorbed",
            Error::NonpositiveDt(_) => "NonpositiveDt",
            Error::UnstableScheme(_) => "UnstableScheme",
            Error::InvalidParameter(_) => "InvalidParameter",
            Error::Quadrature(_) => "Quadrature",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
