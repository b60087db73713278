//! Finite-dimensional reductions of the density flow.
//!
//! Four views of the same geometry:
//!
//! - `projected_rhs`: the Fisher–Rao projected Fokker–Planck dynamics
//!   θ̇ = g⁻¹(θ) E_θ[Lc], equal to projecting the score field α onto the
//!   tangent span of the statistics (integration by parts between L and
//!   L*).
//! - `galerkin_heat_rhs`: the weak-form Galerkin reduction of the
//!   anisotropic heat equation ∂ₜp = ∂ₓ(a ∂ₓ p) over a Gaussian
//!   background; coincides with `projected_rhs` for the diffusion with
//!   drift a′ and squared diffusion 2a.
//! - `assumed_density_rhs`: the moment ODE η̇ = E[Lc] closed by forcing
//!   the family member with matching η; equivalent to the Fisher–Rao
//!   vector-field projection (η̇ = g θ̇).
//! - `residual`: the squared Fisher–Rao norm of α minus its projection,
//!   R² = E[α²] − E[Lc]ᵀ g⁻¹ E[Lc]; zero exactly when the family is
//!   locally invariant under the flow.

use crate::error::{Error, Result};
use crate::expfam::{
    BackgroundKind, ExpFamily, ExpectationParams, NaturalParams,
};
use crate::field::{Poly, ScalarField, SmoothField};
use crate::ode::{self, DomainExit, IvpProblem};
use crate::sde::{alpha_field_unchecked, backward_apply_poly, SdeModel};

/// A point (t, θ) on the projected flow.
#[derive(Debug, Clone)]
pub struct ProjectedState {
    pub t: f64,
    pub theta: NaturalParams,
}

/// Local projection residual decomposition at one state.
#[derive(Debug, Clone, Copy)]
pub struct ResidualReport {
    /// R² = E[α²] − ‖Πα‖²; nonnegative up to quadrature noise.
    pub r2: f64,
    /// E_θ[α²], the squared Fisher–Rao norm of the full vector field.
    pub e_alpha2: f64,
    /// E[Lc]ᵀ g⁻¹ E[Lc], the squared norm of the projected field.
    pub proj_norm2: f64,
}

/// θ̇ = g⁻¹(θ) E_θ[Lc].
pub fn projected_rhs(
    fam: &ExpFamily,
    model: &SdeModel,
    state: &ProjectedState,
) -> Result<Vec<f64>> {
    let chart = fam.chart(&state.theta)?;
    let b = expect_backward_stats(fam, model, &chart, state.t)?;
    let g = chart.fisher()?;
    g.solve(&b)
}

/// E_θ[Lc_i] for every statistic.
fn expect_backward_stats(
    fam: &ExpFamily,
    model: &SdeModel,
    chart: &crate::expfam::ThetaChart,
    t: f64,
) -> Result<Vec<f64>> {
    let mut b = Vec::with_capacity(fam.n());
    for ci in fam.statistics() {
        let lci = backward_apply_poly(model, ci, t)?;
        b.push(chart.expect(|x| lci.eval(x))?);
    }
    Ok(b)
}

/// The fiber-norm residual decomposition R² = E[α²] − ‖Πα‖².
pub fn residual(fam: &ExpFamily, model: &SdeModel, state: &ProjectedState) -> Result<ResidualReport> {
    let chart = fam.chart(&state.theta)?;
    let alpha = alpha_field_unchecked(model, fam, &state.theta, state.t)?;
    let e_alpha2 = chart.expect(|x| {
        let v = alpha.eval(x);
        v * v
    })?;
    let b = expect_backward_stats(fam, model, &chart, state.t)?;
    let g = chart.fisher()?;
    let w = g.solve(&b)?;
    let proj_norm2: f64 = b.iter().zip(&w).map(|(bi, wi)| bi * wi).sum();
    Ok(ResidualReport {
        r2: e_alpha2 - proj_norm2,
        e_alpha2,
        proj_norm2,
    })
}

/// Centered basis over the Gaussian background for the heat-equation
/// Galerkin reduction, with the anisotropic coefficient a(x).
#[derive(Debug, Clone)]
pub struct GalerkinBasis {
    w: Vec<Poly>,
    coeff: ScalarField,
    fam: ExpFamily,
}

impl GalerkinBasis {
    /// Requires every basis function centered under M: E_M[W_k] = 0
    /// within 1e-10.
    pub fn new(w: Vec<Poly>, coeff: ScalarField) -> Result<Self> {
        let fam = ExpFamily::new(w.clone(), crate::expfam::BackgroundDensity::gaussian_m())?;
        let chart = fam.chart(&NaturalParams::new(vec![0.0; w.len()]))?;
        for (k, wk) in w.iter().enumerate() {
            let m = chart.expect(|x| wk.eval(x))?;
            if m.abs() > 1e-10 {
                return Err(Error::Invalid(format!(
                    "basis function {k} not centered under M: E_M[W] = {m:.3e}"
                )));
            }
        }
        Ok(GalerkinBasis { w, coeff, fam })
    }

    pub fn family(&self) -> &ExpFamily {
        &self.fam
    }

    pub fn coeff(&self) -> &ScalarField {
        &self.coeff
    }

    pub fn basis(&self) -> &[Poly] {
        &self.w
    }

    /// The diffusion whose Fokker–Planck form matches ∂ₓ(a ∂ₓ ·):
    /// drift a′(x), squared diffusion 2a(x).
    pub fn equivalent_sde(&self) -> Result<SdeModel> {
        match &self.coeff {
            ScalarField::Poly(a) => Ok(SdeModel::new(
                ScalarField::Poly(a.derivative()),
                ScalarField::Poly(a.scale(2.0)),
            )),
            ScalarField::Custom(_) => Err(Error::Invalid(
                "equivalent SDE needs a polynomial coefficient".into(),
            )),
        }
    }
}

/// Weak-form Galerkin right-hand side for the heat equation over the
/// family exp(θᵀW − ψ)·M:
///
/// ```text
/// θ̇ = g⁻¹(θ) b(θ),   b_k = ⟨a·X, ∂W_k⟩_θ − ⟨a·∂U, ∂W_k⟩_θ,   U = θᵀW
/// ```
///
/// affine in θ. The X term is −(log M)′; the expression generalizes to
/// other backgrounds through that derivative.
pub fn galerkin_heat_rhs(basis: &GalerkinBasis, theta: &NaturalParams) -> Result<Vec<f64>> {
    let fam = &basis.fam;
    let chart = fam.chart(theta)?;
    let neg_bg_grad = fam.background().log_weight().derivative().scale(-1.0);
    let du: Vec<Poly> = basis.w.iter().map(|w| w.derivative()).collect();
    let a = &basis.coeff;
    let mut b = Vec::with_capacity(fam.n());
    for wk in &basis.w {
        let dwk = wk.derivative();
        let v = chart.expect(|x| {
            let u1: f64 = theta
                .0
                .iter()
                .zip(&du)
                .map(|(t, d)| t * d.eval(x))
                .sum();
            a.eval(x) * (neg_bg_grad.eval(x) - u1) * dwk.eval(x)
        })?;
        b.push(v);
    }
    let g = chart.fisher()?;
    g.solve(&b)
}

/// Assumed-density closure of the moment flow: η̇ = E_{p(·,η)}[Lc].
///
/// Inverts η → θ by Newton from `theta_seed` and returns the resolved θ
/// alongside the rate, so flow integrations can warm-start the next
/// inversion.
pub fn assumed_density_rhs(
    fam: &ExpFamily,
    model: &SdeModel,
    eta: &ExpectationParams,
    t: f64,
    theta_seed: &NaturalParams,
) -> Result<(Vec<f64>, NaturalParams)> {
    let theta = fam.natural_from_mean(eta, theta_seed, 1e-11)?;
    let chart = fam.chart(&theta)?;
    let b = expect_backward_stats(fam, model, &chart, t)?;
    Ok((b, theta))
}

/// Outcome of probing one grid point.
#[derive(Debug)]
pub struct InvariancePoint {
    pub theta: NaturalParams,
    pub outcome: Result<ResidualReport>,
}

/// Family-invariance report over a θ-grid.
#[derive(Debug)]
pub struct InvarianceReport {
    pub points: Vec<InvariancePoint>,
    /// Largest residual among the successful points.
    pub max_r2: f64,
    /// True iff every point succeeded with r² ≤ tol.
    pub invariant: bool,
}

/// Scan a θ-grid for residuals; the family is numerically invariant under
/// the flow iff max r² stays within tol everywhere.
pub fn invariance_scan(
    fam: &ExpFamily,
    model: &SdeModel,
    theta_grid: &[NaturalParams],
    tol: f64,
) -> Result<InvarianceReport> {
    if theta_grid.is_empty() {
        return Err(Error::EmptyInput("invariance scan needs a theta grid"));
    }
    let mut points = Vec::with_capacity(theta_grid.len());
    let mut max_r2 = f64::NEG_INFINITY;
    let mut all_ok = true;
    for theta in theta_grid {
        let outcome = residual(
            fam,
            model,
            &ProjectedState {
                t: 0.0,
                theta: theta.clone(),
            },
        );
        match &outcome {
            Ok(rep) => max_r2 = max_r2.max(rep.r2),
            Err(_) => all_ok = false,
        }
        points.push(InvariancePoint {
            theta: theta.clone(),
            outcome,
        });
    }
    Ok(InvarianceReport {
        invariant: all_ok && max_r2 <= tol,
        max_r2,
        points,
    })
}

/// One output row of the projected flow.
#[derive(Debug, Clone)]
pub struct ProjectedSample {
    pub t: f64,
    pub theta: Vec<f64>,
    pub eta: Vec<f64>,
    pub r2: f64,
}

/// Time series of (t, θ, η, R²) from integrating the projected dynamics.
#[derive(Debug)]
pub struct ProjectedTrajectory {
    pub rows: Vec<ProjectedSample>,
    pub exit: Option<DomainExit>,
}

#[derive(Debug, Clone, Copy)]
pub struct FlowOptions {
    pub t0: f64,
    pub t1: f64,
    pub h0: f64,
    pub rtol: f64,
    pub atol: f64,
    pub max_step: Option<f64>,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions {
            t0: 0.0,
            t1: 1.0,
            h0: 1e-3,
            rtol: 1e-10,
            atol: 1e-12,
            max_step: Some(0.05),
        }
    }
}

/// Integrate θ̇ = g⁻¹ E[Lc] and report (t, θ, η, R²) at the accepted
/// steps. Stops with a recorded exit when θ leaves the feasible set.
pub fn run_projected_flow(
    fam: &ExpFamily,
    model: &SdeModel,
    theta0: &NaturalParams,
    opts: &FlowOptions,
) -> Result<ProjectedTrajectory> {
    let mut rhs = |t: f64, y: &[f64]| {
        projected_rhs(
            fam,
            model,
            &ProjectedState {
                t,
                theta: NaturalParams::new(y.to_vec()),
            },
        )
    };
    let mut guard = |_t: f64, y: &[f64]| fam.feasible(&NaturalParams::new(y.to_vec()));
    let traj = ode::integrate(
        IvpProblem {
            rhs: &mut rhs,
            y0: theta0.0.clone(),
            t_span: (opts.t0, opts.t1),
            guard: &mut guard,
            max_step: opts.max_step,
        },
        opts.h0,
        opts.rtol,
        opts.atol,
    )?;
    let mut rows = Vec::with_capacity(traj.times.len());
    for (t, state) in traj.times.iter().zip(&traj.states) {
        let theta = NaturalParams::new(state.clone());
        let chart = fam.chart(&theta)?;
        let eta = chart.mean()?;
        let rep = residual(
            fam,
            model,
            &ProjectedState {
                t: *t,
                theta: theta.clone(),
            },
        )?;
        rows.push(ProjectedSample {
            t: *t,
            theta: state.clone(),
            eta: eta.0,
            r2: rep.r2,
        });
    }
    Ok(ProjectedTrajectory {
        rows,
        exit: traj.exit,
    })
}

/// Map a Gaussian-family natural parameter to (mean, variance); the
/// closed-form chart used by linear-SDE oracles in tests and presets.
/// Requires statistics (x, x²) and θ₂ < 0.
pub fn gaussian_theta_to_moments(theta: &NaturalParams) -> (f64, f64) {
    let var = -1.0 / (2.0 * theta.0[1]);
    (theta.0[0] * var, var)
}

/// Inverse of [`gaussian_theta_to_moments`].
pub fn gaussian_moments_to_theta(mu: f64, var: f64) -> NaturalParams {
    NaturalParams::new([mu / var, -1.0 / (2.0 * var)])
}

/// True iff the background kind needs no negative leading coefficient
/// (curvature comes from the weight itself).
pub fn background_controls_tails(kind: BackgroundKind) -> bool {
    !matches!(kind, BackgroundKind::Lebesgue)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expfam::BackgroundDensity;
    use crate::sde::alpha_field;

    fn gaussian_family() -> ExpFamily {
        ExpFamily::new(
            vec![Poly::x(), Poly::monomial(2)],
            BackgroundDensity::lebesgue(),
        )
        .unwrap()
    }

    fn ou() -> SdeModel {
        SdeModel::from_polys(&[0.0, -1.0], &[2.0])
    }

    fn state(theta: &[f64]) -> ProjectedState {
        ProjectedState {
            t: 0.0,
            theta: NaturalParams::new(theta.to_vec()),
        }
    }

    #[test]
    fn ou_stationary_point_has_zero_rate() {
        let rhs = projected_rhs(&gaussian_family(), &ou(), &state(&[0.0, -0.5])).unwrap();
        assert!(rhs[0].abs() < 1e-10 && rhs[1].abs() < 1e-10, "rhs = {rhs:?}");
    }

    #[test]
    fn heat_rate_at_standard_normal() {
        // f = 0, a = 2: E[Lc] = (0, 2), g = diag(1, 2) => rate (0, 1)
        let heat = SdeModel::from_polys(&[0.0], &[2.0]);
        let rhs = projected_rhs(&gaussian_family(), &heat, &state(&[0.0, -0.5])).unwrap();
        assert!(rhs[0].abs() < 1e-10);
        assert!((rhs[1] - 1.0).abs() < 1e-9, "rhs = {rhs:?}");
    }

    #[test]
    fn linear_sde_matches_gaussian_moment_ode() {
        // dX = -kX dt + sigma dW: mu' = -k mu, P' = -2kP + sigma^2.
        // Chain rule maps the moment rates onto theta rates.
        let (k, s2) = (1.3, 0.7);
        let model = SdeModel::from_polys(&[0.0, -k], &[s2]);
        let fam = gaussian_family();
        for theta in [[0.5, -0.9], [-0.4, -0.3], [1.2, -1.5]] {
            let rhs = projected_rhs(&fam, &model, &state(&theta)).unwrap();
            let (mu, p) = gaussian_theta_to_moments(&NaturalParams::new(theta.to_vec()));
            let mu_dot = -k * mu;
            let p_dot = -2.0 * k * p + s2;
            let th2_dot = p_dot / (2.0 * p * p);
            let th1_dot = mu_dot / p - mu * p_dot / (p * p);
            assert!(
                (rhs[0] - th1_dot).abs() < 1e-8,
                "theta1 rate {} vs {}",
                rhs[0],
                th1_dot
            );
            assert!(
                (rhs[1] - th2_dot).abs() < 1e-8,
                "theta2 rate {} vs {}",
                rhs[1],
                th2_dot
            );
        }
    }

    #[test]
    fn rhs_equals_projected_alpha_coefficients() {
        // Two routes, one vector: g^{-1} E[Lc] = projection of alpha.
        let fam = gaussian_family();
        let models = [
            ou(),
            SdeModel::from_polys(&[0.0], &[2.0]),
            SdeModel::from_polys(&[0.0, 1.0, 0.0, -1.0], &[2.0]),
        ];
        for model in &models {
            for theta in [[0.0, -0.5], [0.6, -0.8], [-0.9, -1.4]] {
                let st = state(&theta);
                let direct = projected_rhs(&fam, model, &st).unwrap();
                let alpha = alpha_field(model, &fam, &st.theta, 0.0).unwrap();
                let via_alpha = fam.project_onto_tangent(&st.theta, &alpha).unwrap();
                for (a, b) in direct.iter().zip(&via_alpha) {
                    assert!((a - b).abs() < 1e-9, "{direct:?} vs {via_alpha:?}");
                }
            }
        }
    }

    #[test]
    fn residual_is_exactly_zero_for_linear_sde() {
        let fam = gaussian_family();
        for theta in [[0.0, -0.5], [0.8, -1.1], [-0.5, -0.4]] {
            let rep = residual(&fam, &ou(), &state(&theta)).unwrap();
            assert!(rep.r2.abs() < 1e-8, "r2 = {}", rep.r2);
            assert!(rep.r2 >= -1e-8);
        }
    }

    #[test]
    fn residual_at_stationary_point_vanishes_entirely() {
        let rep = residual(&gaussian_family(), &ou(), &state(&[0.0, -0.5])).unwrap();
        assert!(rep.r2.abs() < 1e-9);
        assert!(rep.proj_norm2.abs() < 1e-9);
        assert!(rep.e_alpha2.abs() < 1e-9);
    }

    #[test]
    fn double_well_residual_matches_frozen_oracle() {
        // alpha = -x^4 + 5x^2 - 2 under N(0,1):
        // E[alpha^2] = 105 - 150 + 87 - 20 + 4 = 26, ||proj||^2 = 4/2 = 2,
        // so r2 = 24 (exact Gaussian moments).
        let dw = SdeModel::from_polys(&[0.0, 1.0, 0.0, -1.0], &[2.0]);
        let rep = residual(&gaussian_family(), &dw, &state(&[0.0, -0.5])).unwrap();
        assert!((rep.e_alpha2 - 26.0).abs() < 1e-7, "E[a^2] = {}", rep.e_alpha2);
        assert!((rep.proj_norm2 - 2.0).abs() < 1e-8, "proj = {}", rep.proj_norm2);
        assert!((rep.r2 - 24.0).abs() < 1e-7, "r2 = {}", rep.r2);
        assert!(rep.r2 > 0.1);
    }

    #[test]
    fn galerkin_reproduces_worked_heat_example() {
        // a = 1, W = (x, x^2 - 1): rate = (2 t1 (2 t2 - 1), (2 t2 - 1)^2)
        let basis = GalerkinBasis::new(
            vec![Poly::x(), Poly::new(&[-1.0, 0.0, 1.0])],
            ScalarField::poly(&[1.0]),
        )
        .unwrap();
        for theta in [[0.0, 0.0], [0.3, -0.2], [-0.7, 0.4], [1.1, -1.3]] {
            let rhs = galerkin_heat_rhs(&basis, &NaturalParams::new(theta.to_vec())).unwrap();
            let e1 = 2.0 * theta[0] * (2.0 * theta[1] - 1.0);
            let e2 = (2.0 * theta[1] - 1.0) * (2.0 * theta[1] - 1.0);
            assert!((rhs[0] - e1).abs() < 1e-10, "{rhs:?} vs ({e1},{e2})");
            assert!((rhs[1] - e2).abs() < 1e-10, "{rhs:?} vs ({e1},{e2})");
        }
        // at theta = 0 the rate is (0, 1): Gaussian heat flow slope
        let rhs0 = galerkin_heat_rhs(&basis, &NaturalParams::new([0.0, 0.0])).unwrap();
        assert!(rhs0[0].abs() < 1e-12 && (rhs0[1] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn galerkin_equals_projected_rhs_of_equivalent_sde() {
        for coeff in [vec![1.0], vec![1.0, 0.0, 0.1]] {
            let basis = GalerkinBasis::new(
                vec![Poly::x(), Poly::new(&[-1.0, 0.0, 1.0])],
                ScalarField::poly(&coeff),
            )
            .unwrap();
            let sde = basis.equivalent_sde().unwrap();
            for theta in [[0.0, 0.0], [0.4, -0.5], [-0.6, 0.2]] {
                let tp = NaturalParams::new(theta.to_vec());
                let galerkin = galerkin_heat_rhs(&basis, &tp).unwrap();
                let projected = projected_rhs(
                    basis.family(),
                    &sde,
                    &ProjectedState {
                        t: 0.0,
                        theta: tp.clone(),
                    },
                )
                .unwrap();
                for (a, b) in galerkin.iter().zip(&projected) {
                    assert!((a - b).abs() < 1e-9, "{galerkin:?} vs {projected:?}");
                }
            }
        }
    }

    #[test]
    fn assumed_density_examples() {
        let fam = gaussian_family();
        // OU stationary: eta = (0, 1) -> rate (0, 0)
        let (rate, _) = assumed_density_rhs(
            &fam,
            &ou(),
            &ExpectationParams::new([0.0, 1.0]),
            0.0,
            &NaturalParams::new([0.1, -0.4]),
        )
        .unwrap();
        assert!(rate[0].abs() < 1e-9 && rate[1].abs() < 1e-8, "{rate:?}");

        // heat at eta = (0, 1): E[Lc] = (0, 2)
        let heat = SdeModel::from_polys(&[0.0], &[2.0]);
        let (rate, _) = assumed_density_rhs(
            &fam,
            &heat,
            &ExpectationParams::new([0.0, 1.0]),
            0.0,
            &NaturalParams::new([0.0, -0.4]),
        )
        .unwrap();
        assert!(rate[0].abs() < 1e-9 && (rate[1] - 2.0).abs() < 1e-8, "{rate:?}");
    }

    #[test]
    fn assumed_density_equals_metric_rescaled_projection() {
        let fam = gaussian_family();
        let dw = SdeModel::from_polys(&[0.0, 1.0, 0.0, -1.0], &[2.0]);
        for theta in [[0.2, -0.7], [-0.5, -0.9]] {
            let tp = NaturalParams::new(theta.to_vec());
            let eta = fam.mean_params(&tp).unwrap();
            let (adr, _) = assumed_density_rhs(&fam, &dw, &eta, 0.0, &tp).unwrap();
            let pr = projected_rhs(&fam, &dw, &state(&theta)).unwrap();
            let g = fam.fisher_matrix(&tp).unwrap();
            let g_pr = g.apply(&pr);
            for (a, b) in adr.iter().zip(&g_pr) {
                assert!((a - b).abs() < 1e-9, "{adr:?} vs {g_pr:?}");
            }
        }
    }

    #[test]
    fn invariance_scan_distinguishes_exact_from_approximate() {
        let fam = gaussian_family();
        let mut grid = Vec::new();
        for i in 0..5 {
            for j in 0..5 {
                grid.push(NaturalParams::new([
                    -1.0 + 0.5 * i as f64,
                    -1.5 + 0.3 * j as f64,
                ]));
            }
        }
        let ou_report = invariance_scan(&fam, &ou(), &grid, 1e-8).unwrap();
        assert!(ou_report.invariant, "max r2 = {}", ou_report.max_r2);

        let dw = SdeModel::from_polys(&[0.0, 1.0, 0.0, -1.0], &[2.0]);
        let dw_report = invariance_scan(&fam, &dw, &grid, 1e-8).unwrap();
        assert!(!dw_report.invariant);
        assert!(dw_report.max_r2 > 0.1);
    }

    #[test]
    fn invariance_scan_rejects_empty_grid() {
        assert!(matches!(
            invariance_scan(&gaussian_family(), &ou(), &[], 1e-8),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn ou_flow_converges_to_stationary_parameter() {
        // Frozen oracle: theta(10) = (0.5 e^{-10}/P, -1/(2P)) with
        // P = 1 - 0.5 e^{-20}; distance to (0, -0.5) is 2.2700e-5.
        let fam = gaussian_family();
        let traj = run_projected_flow(
            &fam,
            &ou(),
            &NaturalParams::new([1.0, -1.0]),
            &FlowOptions {
                t0: 0.0,
                t1: 10.0,
                h0: 1e-2,
                rtol: 1e-10,
                atol: 1e-12,
                max_step: Some(0.25),
            },
        )
        .unwrap();
        assert!(traj.exit.is_none());
        let last = traj.rows.last().unwrap();
        let mu = 0.5 * (-10.0f64).exp();
        let p = 1.0 - 0.5 * (-20.0f64).exp();
        let exact = [mu / p, -1.0 / (2.0 * p)];
        assert!(
            (last.theta[0] - exact[0]).abs() < 1e-6
                && (last.theta[1] - exact[1]).abs() < 1e-6,
            "theta(10) = {:?}",
            last.theta
        );
        let dist = (last.theta[0]).abs().max((last.theta[1] + 0.5).abs());
        assert!((dist - 2.27e-5).abs() < 3e-6, "distance {dist}");
        // exactness along the way
        for row in &traj.rows {
            assert!(row.r2.abs() < 1e-8, "r2 = {} at t = {}", row.r2, row.t);
        }
    }

    #[test]
    fn heat_galerkin_flow_never_exits_on_horizon() {
        // theta2(t) = 1/2 - 1/(2(1+2t)) stays below 1/2, so the family
        // exponent keeps a negative quadratic coefficient throughout.
        let basis = GalerkinBasis::new(
            vec![Poly::x(), Poly::new(&[-1.0, 0.0, 1.0])],
            ScalarField::poly(&[1.0]),
        )
        .unwrap();
        let sde = basis.equivalent_sde().unwrap();
        let traj = run_projected_flow(
            basis.family(),
            &sde,
            &NaturalParams::new([0.0, 0.0]),
            &FlowOptions {
                t0: 0.0,
                t1: 5.0,
                h0: 1e-2,
                rtol: 1e-10,
                atol: 1e-12,
                max_step: Some(0.1),
            },
        )
        .unwrap();
        assert!(traj.exit.is_none());
        for row in &traj.rows {
            let s2 = 1.0 + 2.0 * row.t;
            let expect = 0.5 - 1.0 / (2.0 * s2);
            assert!(
                (row.theta[1] - expect).abs() < 1e-7,
                "t = {}: {} vs {}",
                row.t,
                row.theta[1],
                expect
            );
            assert!(row.theta[1] < 0.5);
        }
    }
}
