//! The worked systems shared by the CLI and the test suite.

use crate::error::{Error, Result};
use crate::expfam::{BackgroundDensity, ExpFamily};
use crate::field::{Poly, ScalarField};
use crate::oracle::{gaussian_pdf, Grid1D, GridDensity};
use crate::projection::GalerkinBasis;
use crate::sde::SdeModel;

/// Ornstein–Uhlenbeck: dX = −X dt + √2 dW. Stationary density N(0, 1).
pub fn ou_model() -> SdeModel {
    SdeModel::from_polys(&[0.0, -1.0], &[2.0])
}

/// Pure diffusion with σ² = 2; the divergence-form heat flow for a = 1.
pub fn heat_model() -> SdeModel {
    SdeModel::from_polys(&[0.0], &[2.0])
}

/// Double well: dX = (X − X³) dt + √2 dW; bimodal stationary law.
pub fn double_well_model() -> SdeModel {
    SdeModel::from_polys(&[0.0, 1.0, 0.0, -1.0], &[2.0])
}

/// Gaussian family c = (x, x²) over Lebesgue measure.
pub fn gaussian_family() -> ExpFamily {
    ExpFamily::new(
        vec![Poly::x(), Poly::monomial(2)],
        BackgroundDensity::lebesgue(),
    )
    .expect("static family")
}

/// Probabilists' Hermite polynomial He_n.
pub fn hermite_poly(n: usize) -> Poly {
    // He_{k+1} = x He_k − k He_{k−1}
    let mut prev = Poly::constant(1.0);
    let mut cur = Poly::x();
    if n == 0 {
        return prev;
    }
    for k in 1..n {
        let next = Poly::x().mul(&cur).sub(&prev.scale(k as f64));
        prev = cur;
        cur = next;
    }
    cur
}

/// Family with statistics He_1..He_k over Lebesgue measure. Feasible
/// parameters need a negative leading even coefficient.
pub fn hermite_family(k: usize) -> Result<ExpFamily> {
    if k == 0 {
        return Err(Error::EmptyInput("hermite family needs k >= 1"));
    }
    ExpFamily::new(
        (1..=k).map(hermite_poly).collect(),
        BackgroundDensity::lebesgue(),
    )
}

/// Family with statistics x, x², …, x^k over Lebesgue measure.
pub fn monomial_family(k: usize) -> Result<ExpFamily> {
    if k == 0 {
        return Err(Error::EmptyInput("monomial family needs k >= 1"));
    }
    ExpFamily::new(
        (1..=k).map(Poly::monomial).collect(),
        BackgroundDensity::lebesgue(),
    )
}

/// Galerkin basis W = (x, x² − 1) over the Gaussian background with
/// coefficient a(x) (polynomial).
pub fn galerkin_basis(coeff: &[f64]) -> Result<GalerkinBasis> {
    GalerkinBasis::new(
        vec![Poly::x(), Poly::new(&[-1.0, 0.0, 1.0])],
        ScalarField::poly(coeff),
    )
}

/// The bimodal benchmark density ½N(−1, 0.09) + ½N(1, 0.09).
pub fn bimodal_density(grid: Grid1D) -> Result<GridDensity> {
    GridDensity::from_fn(grid, |x| {
        0.5 * gaussian_pdf(x, -1.0, 0.09) + 0.5 * gaussian_pdf(x, 1.0, 0.09)
    })
}

/// Grid restriction of N(mu, var).
pub fn gaussian_grid_density(grid: Grid1D, mu: f64, var: f64) -> Result<GridDensity> {
    GridDensity::from_fn(grid, |x| gaussian_pdf(x, mu, var))
}
