//! Error taxonomy shared by every module.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    /// The natural parameter leaves the integrand exponent non-decaying at
    /// the truncation bounds, so the density does not normalize.
    #[error("infeasible natural parameter: {0}")]
    InfeasibleTheta(String),

    /// Panel refinement exhausted without meeting the error target.
    #[error("quadrature failed to converge: {0}")]
    QuadratureFailure(String),

    /// No truncation bounds exist within the search window.
    #[error("integrand exponent does not decay within |x| <= {limit}")]
    NoDecay { limit: f64 },

    /// Fisher matrix condition number above threshold (or Cholesky failed).
    #[error("Fisher matrix numerically singular (condition {cond:.3e})")]
    SingularFisher { cond: f64 },

    /// Newton iteration did not reach the requested tolerance.
    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    /// Adaptive step size fell below the resolvable scale of the span.
    #[error("ODE step size underflow at t = {t}")]
    StepUnderflow { t: f64 },

    /// Grid solver lost more mass than the domain-width guard allows.
    #[error("FPE mass drift {rate:.3e} per unit time exceeds 1e-4 (grid too small)")]
    MassLoss { rate: f64 },

    /// Grid solver produced a value below the negativity floor.
    #[error("FPE solution reached {min:.3e} at t = {t}; scheme unstable on this input")]
    Instability { t: f64, min: f64 },

    /// KL divergence undefined: q vanishes where p carries mass.
    #[error("support mismatch: second density vanishes where the first has mass")]
    SupportMismatch,

    /// A statistic is not an eigenfunction of the backward operator.
    #[error("statistic {index} is not an eigenfunction of the backward operator")]
    NotEigen { index: usize },

    /// Too many Monte-Carlo paths left the cached drift grid.
    #[error("{percent:.3}% of paths escaped the cached drift grid")]
    EscapedGrid { percent: f64 },

    /// Exponent range on the drift grid exceeds what exp() can represent.
    #[error("exponent range {range:.1} on the grid exceeds 700 after rescaling")]
    Overflow { range: f64 },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    /// Reserved hook: operations reject models flagged time-dependent.
    #[error("time-dependent coefficients are not supported by this operation")]
    TimeDependent,

    #[error("invalid input: {0}")]
    Invalid(String),
}
