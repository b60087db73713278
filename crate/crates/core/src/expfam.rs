//! Finite-dimensional exponential families EF(c).
//!
//! A family is a list of polynomial sufficient statistics c = (c_1,…,c_n)
//! together with a background density, carrying densities of the form
//!
//! ```text
//! p(x, θ) = exp(θᵀc(x) − ψ(θ)) · background(x)
//! ```
//!
//! The module provides the log-partition ψ, expectation parameters
//! η = ∇ψ, the Fisher information g = Hess ψ = Cov(c), the Newton
//! inversion η → θ, and the Fisher–Rao orthogonal projection of an
//! arbitrary field onto the tangent span of the statistics.
//!
//! Natural parameters are *feasible* when the total log-density exponent
//! decays at the truncation bounds; the feasible set is the numerically
//! accessible part of the family's maximal parameter domain.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::field::{Poly, SmoothField};
use crate::quadrature::{self, integrate, QuadratureRule, QuadratureSpec};

/// Condition-number threshold above which the Fisher matrix is treated
/// as singular.
pub const FISHER_COND_LIMIT: f64 = 1e12;

/// Natural (canonical) parameters θ.
#[derive(Debug, Clone, PartialEq)]
pub struct NaturalParams(pub Vec<f64>);

impl NaturalParams {
    pub fn new(theta: impl Into<Vec<f64>>) -> Self {
        NaturalParams(theta.into())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Expectation parameters η = E_θ[c].
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectationParams(pub Vec<f64>);

impl ExpectationParams {
    pub fn new(eta: impl Into<Vec<f64>>) -> Self {
        ExpectationParams(eta.into())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Which reference weight the family is built over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackgroundKind {
    /// Plain Lebesgue measure; the statistics must decay on their own.
    Lebesgue,
    /// Standard Gaussian density M(x).
    GaussianM,
    /// Generalized density M_{1,m}(x) ∝ exp(−x^m/m), m even, m ≥ 4.
    GeneralizedM(u32),
}

/// Normalized background density exp(log_weight), log_weight polynomial.
#[derive(Debug, Clone)]
pub struct BackgroundDensity {
    pub kind: BackgroundKind,
    log_weight: Poly,
}

impl BackgroundDensity {
    pub fn lebesgue() -> Self {
        BackgroundDensity {
            kind: BackgroundKind::Lebesgue,
            log_weight: Poly::zero(),
        }
    }

    /// Standard Gaussian: log M(x) = −x²/2 − ln√(2π).
    pub fn gaussian_m() -> Self {
        let ln_z = 0.5 * (2.0 * std::f64::consts::PI).ln();
        BackgroundDensity {
            kind: BackgroundKind::GaussianM,
            log_weight: Poly::new(&[-ln_z, 0.0, -0.5]),
        }
    }

    /// Generalized Gaussian M_{1,m} ∝ exp(−x^m/m); the normalization
    /// constant is fixed by quadrature at construction.
    pub fn generalized_m(m: u32) -> Result<Self> {
        if m < 4 || m % 2 != 0 {
            return Err(Error::Invalid(format!(
                "generalized background requires even m >= 4, got {m}"
            )));
        }
        let mut shape = vec![0.0; m as usize + 1];
        shape[m as usize] = -1.0 / m as f64;
        let shape = Poly::new(&shape);
        let spec = QuadratureSpec::default();
        let rule = quadrature::build_rule(&shape, &spec)?;
        let (z, _) = integrate(|x| shape.eval(x).exp(), &rule, spec.tol, spec.max_refinements)?;
        let mut coeffs = shape.coeffs().to_vec();
        coeffs[0] -= z.ln();
        Ok(BackgroundDensity {
            kind: BackgroundKind::GeneralizedM(m),
            log_weight: Poly::new(&coeffs),
        })
    }

    pub fn log_weight(&self) -> &Poly {
        &self.log_weight
    }
}

/// Exponential family EF(c) with polynomial sufficient statistics.
#[derive(Debug, Clone)]
pub struct ExpFamily {
    c: Vec<Poly>,
    background: BackgroundDensity,
    quad: QuadratureSpec,
}

impl ExpFamily {
    pub fn new(c: Vec<Poly>, background: BackgroundDensity) -> Result<Self> {
        if c.is_empty() {
            return Err(Error::EmptyInput("exponential family needs statistics"));
        }
        let quad = QuadratureSpec::default();
        quad.validate()?;
        Ok(ExpFamily {
            c,
            background,
            quad,
        })
    }

    pub fn with_quad(mut self, quad: QuadratureSpec) -> Result<Self> {
        quad.validate()?;
        self.quad = quad;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn statistics(&self) -> &[Poly] {
        &self.c
    }

    pub fn background(&self) -> &BackgroundDensity {
        &self.background
    }

    pub fn quad(&self) -> &QuadratureSpec {
        &self.quad
    }

    /// Total log-density exponent θᵀc(x) + log_weight(x) (ψ not included).
    pub fn exponent(&self, theta: &NaturalParams) -> Result<Poly> {
        if theta.len() != self.n() {
            return Err(Error::Invalid(format!(
                "theta has {} components, family has {}",
                theta.len(),
                self.n()
            )));
        }
        let mut total = self.background.log_weight.clone();
        for (t, ci) in theta.0.iter().zip(&self.c) {
            total = total.add(&ci.scale(*t));
        }
        Ok(total)
    }

    /// True iff θ normalizes: the exponent decays at the truncation bounds.
    pub fn feasible(&self, theta: &NaturalParams) -> bool {
        self.chart(theta).is_ok()
    }

    /// Resolve the density at θ: truncation domain, quadrature rule and ψ.
    /// Fails with `InfeasibleTheta` when the exponent does not decay.
    pub fn chart(&self, theta: &NaturalParams) -> Result<ThetaChart<'_>> {
        let exponent = self.exponent(theta)?;
        if theta.0.iter().any(|t| !t.is_finite()) {
            return Err(Error::InfeasibleTheta("non-finite component".into()));
        }
        let (lo, hi, peak) =
            quadrature::truncation_bounds(&exponent, self.quad.tail_eps).map_err(|e| match e {
                Error::NoDecay { .. } => Error::InfeasibleTheta(format!(
                    "exponent does not decay at truncation bounds for theta = {:?}",
                    theta.0
                )),
                other => other,
            })?;
        let rule = QuadratureRule::on_domain(lo, hi, self.quad.panels, self.quad.panel_order);
        let (z, _) = integrate(
            |x| (exponent.eval(x) - peak).exp(),
            &rule,
            self.quad.tol,
            self.quad.max_refinements,
        )?;
        if !(z.is_finite() && z > 0.0) {
            return Err(Error::InfeasibleTheta(format!(
                "normalization integral degenerate (z = {z})"
            )));
        }
        let psi = peak + z.ln();
        Ok(ThetaChart {
            fam: self,
            theta: theta.clone(),
            exponent,
            rule,
            psi,
        })
    }

    /// ψ(θ) = log ∫ exp(θᵀc) background(dx).
    pub fn log_partition(&self, theta: &NaturalParams) -> Result<f64> {
        Ok(self.chart(theta)?.psi())
    }

    /// η(θ) = E_θ[c] = ∇ψ(θ).
    pub fn mean_params(&self, theta: &NaturalParams) -> Result<ExpectationParams> {
        self.chart(theta)?.mean()
    }

    /// Fisher information g(θ) = Cov_θ(c) = Hess ψ(θ).
    pub fn fisher_matrix(&self, theta: &NaturalParams) -> Result<FisherMatrix> {
        self.chart(theta)?.fisher()
    }

    /// log p(x, θ) = θᵀc(x) − ψ(θ) + log_weight(x).
    pub fn log_density(&self, theta: &NaturalParams, x: f64) -> Result<f64> {
        Ok(self.chart(theta)?.log_density(x))
    }

    /// Newton inversion of ∇ψ: find θ with E_θ[c] = η, damped by step
    /// halving. `theta0` seeds the iteration and must be feasible.
    pub fn natural_from_mean(
        &self,
        eta: &ExpectationParams,
        theta0: &NaturalParams,
        tol: f64,
    ) -> Result<NaturalParams> {
        const MAX_ITER: usize = 100;
        if eta.0.len() != self.n() {
            return Err(Error::Invalid("eta dimension mismatch".into()));
        }
        let mut chart = self.chart(theta0)?;
        let mut residual = f64::INFINITY;
        for _ in 0..MAX_ITER {
            let mean = chart.mean()?;
            residual = inf_norm_diff(&mean.0, &eta.0);
            if residual <= tol {
                return Ok(chart.theta.clone());
            }
            // a Fisher breakdown mid-iteration means the target moments
            // are being chased into a degenerate corner of the family
            let step = (|| -> Result<Vec<f64>> {
                let g = chart.fisher()?;
                let rhs: Vec<f64> = eta.0.iter().zip(&mean.0).map(|(a, b)| a - b).collect();
                g.solve(&rhs)
            })();
            let delta = match step {
                Ok(d) => d,
                Err(_) => {
                    return Err(Error::NoConvergence {
                        iterations: MAX_ITER,
                        residual,
                    })
                }
            };
            // step halving until the residual actually decreases
            let mut s = 1.0;
            let mut advanced = false;
            while s >= 1e-12 {
                let cand = NaturalParams(
                    chart
                        .theta
                        .0
                        .iter()
                        .zip(&delta)
                        .map(|(t, d)| t + s * d)
                        .collect(),
                );
                if let Ok(cand_chart) = self.chart(&cand) {
                    if let Ok(cand_mean) = cand_chart.mean() {
                        if inf_norm_diff(&cand_mean.0, &eta.0) < residual {
                            chart = cand_chart;
                            advanced = true;
                            break;
                        }
                    }
                }
                s *= 0.5;
            }
            if !advanced {
                return Err(Error::NoConvergence {
                    iterations: MAX_ITER,
                    residual,
                });
            }
        }
        Err(Error::NoConvergence {
            iterations: MAX_ITER,
            residual,
        })
    }

    /// Fisher–Rao projection coefficients of a field U onto the tangent
    /// span of the statistics: w = g⁻¹(θ) Cov_θ(U, c). The projected field
    /// is wᵀ(c − η).
    pub fn project_onto_tangent(
        &self,
        theta: &NaturalParams,
        u: &dyn SmoothField,
    ) -> Result<Vec<f64>> {
        let chart = self.chart(theta)?;
        chart.project_onto_tangent(u)
    }
}

/// Per-θ resolved state: truncation rule and ψ, the basis for every
/// expectation at this parameter.
pub struct ThetaChart<'f> {
    fam: &'f ExpFamily,
    theta: NaturalParams,
    exponent: Poly,
    rule: QuadratureRule,
    psi: f64,
}

impl<'f> ThetaChart<'f> {
    pub fn theta(&self) -> &NaturalParams {
        &self.theta
    }

    pub fn psi(&self) -> f64 {
        self.psi
    }

    pub fn family(&self) -> &'f ExpFamily {
        self.fam
    }

    pub fn domain(&self) -> (f64, f64) {
        self.rule.domain()
    }

    pub fn log_density(&self, x: f64) -> f64 {
        self.exponent.eval(x) - self.psi
    }

    pub fn density(&self, x: f64) -> f64 {
        self.log_density(x).exp()
    }

    /// E_θ[f], with internal panel refinement.
    pub fn expect(&self, f: impl Fn(f64) -> f64) -> Result<f64> {
        let (v, _) = integrate(
            |x| f(x) * (self.exponent.eval(x) - self.psi).exp(),
            &self.rule,
            self.fam.quad.tol,
            self.fam.quad.max_refinements,
        )?;
        Ok(v)
    }

    pub fn mean(&self) -> Result<ExpectationParams> {
        let mut eta = Vec::with_capacity(self.fam.n());
        for ci in &self.fam.c {
            eta.push(self.expect(|x| ci.eval(x))?);
        }
        Ok(ExpectationParams(eta))
    }

    /// Covariance matrix of the statistics, computed on centered
    /// integrands to dodge cancellation.
    pub fn fisher(&self) -> Result<FisherMatrix> {
        let n = self.fam.n();
        let eta = self.mean()?;
        let mut g = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let ci = &self.fam.c[i];
                let cj = &self.fam.c[j];
                let (ei, ej) = (eta.0[i], eta.0[j]);
                let v = self.expect(|x| (ci.eval(x) - ei) * (cj.eval(x) - ej))?;
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        FisherMatrix::new(g, self.theta.clone())
    }

    /// Cov_θ(U, c_i) for all i, centered.
    pub fn cov_with_statistics(&self, u: &dyn SmoothField) -> Result<Vec<f64>> {
        let eta = self.mean()?;
        let eu = self.expect(|x| u.eval(x))?;
        let mut cov = Vec::with_capacity(self.fam.n());
        for (ci, ei) in self.fam.c.iter().zip(&eta.0) {
            cov.push(self.expect(|x| (u.eval(x) - eu) * (ci.eval(x) - ei))?);
        }
        Ok(cov)
    }

    pub fn project_onto_tangent(&self, u: &dyn SmoothField) -> Result<Vec<f64>> {
        // condition (F): the squared norm of U must be quadrature-resolvable
        self.expect(|x| {
            let v = u.eval(x);
            v * v
        })?;
        let cov = self.cov_with_statistics(u)?;
        let g = self.fisher()?;
        g.solve(&cov)
    }
}

/// Fisher information matrix at a specific θ.
#[derive(Debug, Clone)]
pub struct FisherMatrix {
    g: DMatrix<f64>,
    theta_at: NaturalParams,
    cond: f64,
}

impl FisherMatrix {
    pub fn new(g: DMatrix<f64>, theta_at: NaturalParams) -> Result<Self> {
        let eigen = g.clone().symmetric_eigen();
        let max = eigen.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
        let min = eigen.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
        let cond = if min <= 0.0 {
            f64::INFINITY
        } else {
            max / min
        };
        if !(cond < FISHER_COND_LIMIT) {
            return Err(Error::SingularFisher { cond });
        }
        Ok(FisherMatrix { g, theta_at, cond })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn theta_at(&self) -> &NaturalParams {
        &self.theta_at
    }

    pub fn cond(&self) -> f64 {
        self.cond
    }

    pub fn n(&self) -> usize {
        self.g.nrows()
    }

    /// Solve g x = rhs by Cholesky.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let chol = self
            .g
            .clone()
            .cholesky()
            .ok_or(Error::SingularFisher { cond: self.cond })?;
        let x = chol.solve(&DVector::from_column_slice(rhs));
        Ok(x.iter().cloned().collect())
    }

    /// g · v.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let out = &self.g * DVector::from_column_slice(v);
        out.iter().cloned().collect()
    }
}

fn inf_norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
