//! One-dimensional Itô diffusions dX = f(X)dt + σ(X)dW and the operators
//! they induce on densities.
//!
//! The backward operator acts on test fields as Lφ = fφ′ + ½aφ″ with
//! a = σ². Its adjoint drives the Fokker–Planck flow, and the quotient
//! L*p/p written in the exponential chart of a family is the score-space
//! vector field α that the projection modules consume. With ℓ the total
//! log-density exponent,
//!
//! ```text
//! α = −(f ℓ′ + f′) + ½ (a ℓ″ + a (ℓ′)² + 2 a′ ℓ′ + a″)
//! ```
//!
//! The background log-weight is folded into ℓ, so Gaussian and
//! generalized backgrounds reuse the same formula.

use crate::error::{Error, Result};
use crate::expfam::{ExpFamily, NaturalParams};
use crate::field::{FnField, Poly, ScalarField, SmoothField};

/// Drift f and squared diffusion a = σ² of a scalar diffusion.
///
/// Core models are autonomous; operations accept a time argument for
/// interface stability but reject models flagged `time_dependent`.
#[derive(Debug, Clone)]
pub struct SdeModel {
    pub f: ScalarField,
    pub a: ScalarField,
    pub time_dependent: bool,
}

impl SdeModel {
    pub fn new(f: ScalarField, a: ScalarField) -> Self {
        SdeModel {
            f,
            a,
            time_dependent: false,
        }
    }

    pub fn from_polys(f: &[f64], a: &[f64]) -> Self {
        SdeModel::new(ScalarField::poly(f), ScalarField::poly(a))
    }

    fn check_autonomous(&self) -> Result<()> {
        if self.time_dependent {
            Err(Error::TimeDependent)
        } else {
            Ok(())
        }
    }

    /// Verify a(x) ≥ 0 on the given working interval by dense sampling.
    pub fn validate_diffusion_on(&self, lo: f64, hi: f64) -> Result<()> {
        const SAMPLES: usize = 2001;
        for i in 0..SAMPLES {
            let x = lo + (hi - lo) * i as f64 / (SAMPLES - 1) as f64;
            if self.a.eval(x) < 0.0 {
                return Err(Error::Invalid(format!(
                    "squared diffusion negative at x = {x}"
                )));
            }
        }
        Ok(())
    }
}

/// Apply the backward operator: Lφ = f φ′ + ½ a φ″.
///
/// Polynomial inputs produce an exactly computed polynomial; otherwise the
/// result is a closure field.
pub fn backward_apply(model: &SdeModel, phi: &ScalarField, _t: f64) -> Result<ScalarField> {
    model.check_autonomous()?;
    match (&model.f, &model.a, phi) {
        (ScalarField::Poly(f), ScalarField::Poly(a), ScalarField::Poly(p)) => {
            let out = f.mul(&p.derivative()).add(&a.mul(&p.derivative().derivative()).scale(0.5));
            Ok(ScalarField::Poly(out))
        }
        _ => {
            let f = model.f.clone();
            let a = model.a.clone();
            let p = phi.clone();
            Ok(ScalarField::Custom(FnField::from_eval(move |x| {
                f.eval(x) * p.d1(x) + 0.5 * a.eval(x) * p.d2(x)
            })))
        }
    }
}

/// Convenience: backward operator applied to a polynomial statistic.
pub fn backward_apply_poly(model: &SdeModel, phi: &Poly, t: f64) -> Result<ScalarField> {
    backward_apply(model, &ScalarField::Poly(phi.clone()), t)
}

/// The score-space Fokker–Planck field α = L*p(·,θ)/p(·,θ) of the family
/// member at θ. Verifies the zero-expectation condition E_θ[α] = 0 as
/// part of construction.
pub fn alpha_field(
    model: &SdeModel,
    fam: &ExpFamily,
    theta: &NaturalParams,
    t: f64,
) -> Result<ScalarField> {
    let alpha = alpha_field_unchecked(model, fam, theta, t)?;
    let chart = fam.chart(theta)?;
    let centering = chart.expect(|x| alpha.eval(x))?;
    if centering.abs() > 1e-8 {
        return Err(Error::QuadratureFailure(format!(
            "alpha centering E[alpha] = {centering:.3e} exceeds 1e-8"
        )));
    }
    Ok(alpha)
}

/// α without the centering verification; used internally where the caller
/// immediately integrates α anyway.
pub fn alpha_field_unchecked(
    model: &SdeModel,
    fam: &ExpFamily,
    theta: &NaturalParams,
    _t: f64,
) -> Result<ScalarField> {
    model.check_autonomous()?;
    let ell = fam.exponent(theta)?;
    let ell1 = ell.derivative();
    let ell2 = ell1.derivative();
    match (&model.f, &model.a) {
        (ScalarField::Poly(f), ScalarField::Poly(a)) => {
            // exact ring arithmetic
            let fp = f.derivative();
            let ap = a.derivative();
            let app = ap.derivative();
            let drift_part = f.mul(&ell1).add(&fp).scale(-1.0);
            let diff_part = a
                .mul(&ell2)
                .add(&a.mul(&ell1).mul(&ell1))
                .add(&ap.mul(&ell1).scale(2.0))
                .add(&app)
                .scale(0.5);
            Ok(ScalarField::Poly(drift_part.add(&diff_part)))
        }
        _ => {
            let f = model.f.clone();
            let a = model.a.clone();
            Ok(ScalarField::Custom(FnField::from_eval(move |x| {
                let l1 = ell1.eval(x);
                let l2 = ell2.eval(x);
                -(f.eval(x) * l1 + f.d1(x))
                    + 0.5 * (a.eval(x) * l2 + a.eval(x) * l1 * l1 + 2.0 * a.d1(x) * l1 + a.d2(x))
            })))
        }
    }
}
