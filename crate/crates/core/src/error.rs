//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("transfer function is not proper: numerator degree {num_deg} > denominator degree {den_deg}")]
    NonProper { num_deg: usize, den_deg: usize },
    #[error("denominator leading coefficient is zero")]
    DegenerateDenominator,
    #[error("time-domain mismatch: {0}")]
    DomainMismatch(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("algebraic loop: I - D22*DK is singular")]
    AlgebraicLoop,
    #[error("frequency response evaluated too close to a pole")]
    NearPole,
    #[error("system is not stable")]
    UnstableSystem,
    #[error("bilinear transform singular: continuous pole at 2/Ts")]
    SingularTransform,
    #[error("filter cutoff {cutoff_hz} Hz is at or above the Nyquist frequency {nyquist_hz} Hz")]
    CutoffAboveNyquist { cutoff_hz: f64, nyquist_hz: f64 },
    #[error("(A, B2) is not stabilizable")]
    NotStabilizable,
    #[error("(C2, A) is not detectable")]
    NotDetectable,
    #[error("D12 is rank deficient")]
    RankDeficientD12,
    #[error("D21 is rank deficient")]
    RankDeficientD21,
    #[error("no gamma in the bracket [{lo}, {hi}] admits a solution")]
    GammaInfeasible { lo: f64, hi: f64 },
    #[error("Riccati iteration failed the residual bound: {0}")]
    RiccatiDivergence(String),
    #[error("no stabilizing Riccati solution exists")]
    NoStabilizingSolution,
    #[error("matrix iteration diverged: {0}")]
    IterationDiverged(String),
    #[error("bisection bracket invalid: {0}")]
    BracketInvalid(String),
    #[error("non-finite state at sample {sample} in phase {phase}")]
    NonFiniteState { sample: usize, phase: usize },
    #[error("simulation trace is empty")]
    EmptyTrace,
    #[error("config parse error: {0}")]
    ParseError(String),
    #[error("config validation error: field `{field}`: {constraint}")]
    ValidationError { field: String, constraint: String },
    #[error("missing artifact file: {0}")]
    MissingArtifact(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
