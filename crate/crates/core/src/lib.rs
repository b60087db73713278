//! Fisher–Rao projection of Fokker–Planck dynamics onto exponential
//! families.
//!
//! The library reduces the density evolution ∂ₜp = L*p of a scalar Itô
//! diffusion to an ordinary differential equation on the natural
//! parameters of a finite-dimensional exponential family,
//!
//! ```text
//! θ̇ = g⁻¹(θ) E_θ[L c]
//! ```
//!
//! where g is the Fisher information and c the sufficient statistics. It
//! quantifies the reduction against a brute-force grid solver: the local
//! projection residual, the KL/moment point projection, the exponential
//! decay of the projection error when the statistics are eigenfunctions
//! of L, and the synthesized SDE whose exact marginal law follows the
//! projected flow.
//!
//! Module map:
//! - [`field`]: polynomials and generic smooth scalar fields
//! - [`quadrature`]: truncated composite Gauss–Legendre integration
//! - [`expfam`]: log-partition, moments, Fisher matrix, projections
//! - [`sde`]: diffusion models, backward operator, score field α
//! - [`projection`]: projected FPE / Galerkin / assumed-density dynamics
//! - [`ode`]: adaptive RK4 with domain-exit detection
//! - [`oracle`]: Crank–Nicolson grid FPE solver, KL, moment projection
//! - [`synth`]: modified-drift SDE synthesis and Monte-Carlo validation
//! - [`presets`]: the worked systems shared by the CLI and the test suite

pub mod error;
pub mod expfam;
pub mod field;
pub mod ode;
pub mod oracle;
pub mod presets;
pub mod projection;
pub mod quadrature;
pub mod sde;
pub mod synth;

pub use error::{Error, Result};
