//! Brute-force ground truth on a uniform grid.
//!
//! A Crank–Nicolson solver for the forward equation ∂ₜp = −∂ₓ(f p) +
//! ½∂ₓ²(a p) in conservative flux form gives the reference solution the
//! projection modules are measured against. On top of it: trapezoid KL
//! divergence, the moment-matching (KL-optimal) point projection onto a
//! family, and the ε_t = η_true − η̃ error series that exhibits the
//! e^{−Λt} decay when the statistics are eigenfunctions of L.

use std::io::Write;

use crate::error::{Error, Result};
use crate::expfam::{ExpFamily, ExpectationParams, NaturalParams};
use crate::field::{Poly, ScalarField, SmoothField};
use crate::ode;
use crate::projection::assumed_density_rhs;
use crate::quadrature::neumaier_sum;
use crate::sde::{backward_apply_poly, SdeModel};

/// Uniform grid on [lo, hi] with m nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid1D {
    pub lo: f64,
    pub hi: f64,
    pub m: usize,
}

impl Grid1D {
    pub fn new(lo: f64, hi: f64, m: usize) -> Result<Self> {
        if !(hi > lo) {
            return Err(Error::Invalid("grid requires hi > lo".into()));
        }
        if m < 3 {
            return Err(Error::Invalid("grid needs at least 3 points".into()));
        }
        Ok(Grid1D { lo, hi, m })
    }

    pub fn h(&self) -> f64 {
        (self.hi - self.lo) / (self.m - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        self.lo + self.h() * i as f64
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.m).map(|i| self.node(i))
    }
}

/// Nonnegative, trapezoid-normalized density values on a grid.
#[derive(Debug, Clone)]
pub struct GridDensity {
    pub grid: Grid1D,
    pub p: Vec<f64>,
}

impl GridDensity {
    /// Clips negatives (total clipped mass must stay below 1e-10) and
    /// normalizes to unit trapezoid mass.
    pub fn new(grid: Grid1D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.m {
            return Err(Error::Invalid("value count does not match grid".into()));
        }
        let h = grid.h();
        let clipped: f64 = values.iter().filter(|v| **v < 0.0).map(|v| -v * h).sum();
        if clipped > 1e-10 {
            return Err(Error::Invalid(format!(
                "clipped negative mass {clipped:.3e} exceeds 1e-10"
            )));
        }
        let mut p: Vec<f64> = values.iter().map(|v| v.max(0.0)).collect();
        let mass = trapezoid(&p, h);
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::Invalid(format!("degenerate mass {mass}")));
        }
        for v in &mut p {
            *v /= mass;
        }
        Ok(GridDensity { grid, p })
    }

    pub fn from_fn(grid: Grid1D, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.nodes().map(f).collect();
        GridDensity::new(grid, values)
    }

    pub fn mass(&self) -> f64 {
        trapezoid(&self.p, self.grid.h())
    }

    /// Trapezoid E_p[φ].
    pub fn moment(&self, phi: &dyn SmoothField) -> f64 {
        let h = self.grid.h();
        let vals: Vec<f64> = self
            .p
            .iter()
            .enumerate()
            .map(|(i, p)| p * phi.eval(self.grid.node(i)))
            .collect();
        trapezoid(&vals, h)
    }

    /// Grid moments of every family statistic.
    pub fn family_moments(&self, fam: &ExpFamily) -> ExpectationParams {
        ExpectationParams::new(
            fam.statistics()
                .iter()
                .map(|c| self.moment(c))
                .collect::<Vec<_>>(),
        )
    }

    /// CSV serialization: header `x,p`, 17 significant digits.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "x,p")?;
        for (i, p) in self.p.iter().enumerate() {
            writeln!(w, "{:.16e},{:.16e}", self.grid.node(i), p)?;
        }
        Ok(())
    }
}

/// Trapezoid rule with compensated summation.
pub fn trapezoid(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    let inner = neumaier_sum(values[1..n - 1].iter().copied());
    h * (0.5 * values[0] + inner + 0.5 * values[n - 1])
}

/// Diagonal spectrum Λ with L c_i = −λ_i c_i, verified coefficientwise in
/// polynomial arithmetic.
#[derive(Debug, Clone)]
pub struct EigenSpectrum {
    pub lambda: Vec<f64>,
}

impl EigenSpectrum {
    pub fn detect(model: &SdeModel, fam: &ExpFamily) -> Result<Self> {
        let mut lambda = Vec::with_capacity(fam.n());
        for (index, ci) in fam.statistics().iter().enumerate() {
            let lci = backward_apply_poly(model, ci, 0.0)?;
            let lci = match lci.as_poly() {
                Some(p) => p.clone(),
                None => return Err(Error::NotEigen { index }),
            };
            // ratio at the largest coefficient of c_i, then exact check
            let (k, ck) = ci
                .coeffs()
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                .unwrap();
            if *ck == 0.0 {
                return Err(Error::NotEigen { index });
            }
            let lam = -lci.coeffs().get(k).copied().unwrap_or(0.0) / ck;
            let scale = lci
                .coeffs()
                .iter()
                .fold(1.0f64, |m, c| m.max(c.abs()));
            if lam <= 0.0 || lci.add(&ci.scale(lam)).coeff_distance(&Poly::zero()) > 1e-12 * scale
            {
                return Err(Error::NotEigen { index });
            }
            lambda.push(lam);
        }
        Ok(EigenSpectrum { lambda })
    }
}

/// Snapshots of the grid solution plus conservation diagnostics.
#[derive(Debug)]
pub struct FpeResult {
    pub snapshots: Vec<(f64, GridDensity)>,
    /// Accumulated |1 − mass| per unit time, before renormalization.
    pub mass_drift_rate: f64,
}

/// Tridiagonal bands of the discrete forward operator (interior rows).
struct ForwardOperator {
    sub: Vec<f64>,
    diag: Vec<f64>,
    sup: Vec<f64>,
}

fn build_forward_operator(model: &SdeModel, grid: &Grid1D) -> Result<ForwardOperator> {
    if model.time_dependent {
        return Err(Error::TimeDependent);
    }
    model.validate_diffusion_on(grid.lo, grid.hi)?;
    let m = grid.m;
    let h = grid.h();
    let f_half: Vec<f64> = (0..m - 1)
        .map(|i| model.f.eval(grid.node(i) + 0.5 * h))
        .collect();
    let a: Vec<f64> = grid.nodes().map(|x| model.a.eval(x)).collect();
    let mut sub = vec![0.0; m];
    let mut diag = vec![0.0; m];
    let mut sup = vec![0.0; m];
    for i in 1..m - 1 {
        // flux form: (Ap)_i = (G_{i+1/2} - G_{i-1/2})/h,
        // G_{i+1/2} = -f_{i+1/2} (p_i + p_{i+1})/2 + (a_{i+1} p_{i+1} - a_i p_i)/(2h)
        sub[i] = (0.5 * f_half[i - 1] + a[i - 1] / (2.0 * h)) / h;
        diag[i] = (0.5 * (f_half[i - 1] - f_half[i]) - a[i] / h) / h;
        sup[i] = (-0.5 * f_half[i] + a[i + 1] / (2.0 * h)) / h;
    }
    Ok(ForwardOperator { sub, diag, sup })
}

/// Apply the discrete forward operator L* to grid values (zero-Dirichlet
/// boundary rows). Exposed for the operator-duality checks against the
/// backward operator.
pub fn forward_apply_grid(model: &SdeModel, density: &GridDensity) -> Result<Vec<f64>> {
    let op = build_forward_operator(model, &density.grid)?;
    let m = density.grid.m;
    let p = &density.p;
    let mut out = vec![0.0; m];
    for i in 1..m - 1 {
        out[i] = op.sub[i] * p[i - 1] + op.diag[i] * p[i] + op.sup[i] * p[i + 1];
    }
    Ok(out)
}

/// Thomas solve of a tridiagonal system given by bands (in-place scratch).
fn thomas_solve(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &mut [f64]) {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = sup[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let w = diag[i] - sub[i] * c[i - 1];
        c[i] = sup[i] / w;
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / w;
    }
    rhs[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        rhs[i] = d[i] - c[i] * rhs[i + 1];
    }
}

/// Crank–Nicolson integration of the Fokker–Planck equation with
/// zero-Dirichlet boundaries, renormalizing each step and reporting the
/// pre-renormalization drift. Snapshots are taken at `outputs` (ascending,
/// within the span; step size is locally shrunk to land exactly).
pub fn fpe_solve(
    model: &SdeModel,
    p0: &GridDensity,
    t_span: (f64, f64),
    dt: f64,
    outputs: &[f64],
) -> Result<FpeResult> {
    let (t0, t1) = t_span;
    if !(dt > 0.0) {
        return Err(Error::Invalid("dt must be positive".into()));
    }
    if !(t1 >= t0) {
        return Err(Error::Invalid("t_span requires t1 >= t0".into()));
    }
    let grid = p0.grid;
    if p0.p[0] > 1e-12 || p0.p[grid.m - 1] > 1e-12 {
        return Err(Error::Invalid(
            "initial density must vanish (<= 1e-12) at the grid boundary".into(),
        ));
    }
    for (k, w) in outputs.windows(2).enumerate() {
        if w[1] <= w[0] {
            return Err(Error::Invalid(format!("outputs not ascending at {k}")));
        }
    }
    if let (Some(first), Some(last)) = (outputs.first(), outputs.last()) {
        if *first < t0 - 1e-12 || *last > t1 + 1e-12 {
            return Err(Error::Invalid("outputs outside t_span".into()));
        }
    }

    let op = build_forward_operator(model, &grid)?;
    let m = grid.m;
    let mut p = p0.p.clone();
    let mut t = t0;
    let mut drift_acc = 0.0f64;
    let mut snapshots = Vec::with_capacity(outputs.len());

    let take_snapshot = |t: f64, p: &[f64]| -> Result<(f64, GridDensity)> {
        Ok((t, GridDensity::new(grid, p.to_vec())?))
    };

    let mut targets: Vec<f64> = outputs.to_vec();
    if targets.is_empty() {
        targets.push(t1);
    }

    // pre-assembled CN bands for a given step size
    let assemble = |h: f64| {
        let mut sub = vec![0.0; m];
        let mut diag = vec![1.0; m];
        let mut sup = vec![0.0; m];
        for i in 1..m - 1 {
            sub[i] = -0.5 * h * op.sub[i];
            diag[i] = 1.0 - 0.5 * h * op.diag[i];
            sup[i] = -0.5 * h * op.sup[i];
        }
        (sub, diag, sup)
    };

    let mut rhs = vec![0.0; m];
    for &target in &targets {
        if target <= t + 1e-15 {
            snapshots.push(take_snapshot(t, &p)?);
            continue;
        }
        let span = target - t;
        let n_steps = (span / dt).ceil().max(1.0) as usize;
        let h = span / n_steps as f64;
        let (sub, diag, sup) = assemble(h);
        for _ in 0..n_steps {
            // explicit half step
            rhs[0] = 0.0;
            rhs[m - 1] = 0.0;
            for i in 1..m - 1 {
                rhs[i] = p[i]
                    + 0.5 * h * (op.sub[i] * p[i - 1] + op.diag[i] * p[i] + op.sup[i] * p[i + 1]);
            }
            thomas_solve(&sub, &diag, &sup, &mut rhs);
            t += h;
            let min = rhs.iter().cloned().fold(f64::MAX, f64::min);
            if min < -1e-8 {
                return Err(Error::Instability { t, min });
            }
            let mass = trapezoid(&rhs, grid.h());
            drift_acc += (1.0 - mass).abs();
            if !(mass > 0.0) {
                return Err(Error::MassLoss {
                    rate: f64::INFINITY,
                });
            }
            for (dst, src) in p.iter_mut().zip(&rhs) {
                *dst = (src / mass).max(0.0);
            }
        }
        // land exactly on the target to keep comparisons clean
        t = target;
        snapshots.push(take_snapshot(t, &p)?);
    }

    let elapsed = (t - t0).max(dt);
    let rate = drift_acc / elapsed;
    if rate > 1e-4 {
        return Err(Error::MassLoss { rate });
    }
    Ok(FpeResult {
        snapshots,
        mass_drift_rate: rate,
    })
}

/// Trapezoid KL divergence between two densities on the same grid, with
/// 0·ln 0 = 0.
pub fn kl_divergence(p: &GridDensity, q: &GridDensity) -> Result<f64> {
    if p.grid != q.grid {
        return Err(Error::Invalid("KL requires a common grid".into()));
    }
    kl_against(p, |i| q.p[i])
}

/// KL(p ‖ p_θ) against a family member evaluated on p's grid.
pub fn kl_divergence_family(
    p: &GridDensity,
    fam: &ExpFamily,
    theta: &NaturalParams,
) -> Result<f64> {
    let chart = fam.chart(theta)?;
    let q: Vec<f64> = p.grid.nodes().map(|x| chart.density(x)).collect();
    kl_against(p, |i| q[i])
}

fn kl_against(p: &GridDensity, q: impl Fn(usize) -> f64) -> Result<f64> {
    let mut vals = vec![0.0; p.grid.m];
    for (i, v) in vals.iter_mut().enumerate() {
        let pi = p.p[i];
        if pi <= 0.0 {
            continue;
        }
        let qi = q(i);
        if qi <= 1e-300 {
            if pi > 1e-12 {
                return Err(Error::SupportMismatch);
            }
            continue;
        }
        *v = pi * (pi / qi).ln();
    }
    Ok(trapezoid(&vals, p.grid.h()))
}

/// Moment-matching point projection: the family member with
/// E_θ[c] = E_p[c], the KL(p‖·)-closest member. Newton from `theta0`,
/// with a deterministic homotopy fallback for far targets.
pub fn moment_project(
    fam: &ExpFamily,
    p: &GridDensity,
    theta0: &NaturalParams,
) -> Result<(NaturalParams, ExpectationParams)> {
    let eta = p.family_moments(fam);
    let theta = natural_from_mean_homotopy(fam, &eta, theta0, 1e-10)?;
    Ok((theta, eta))
}

/// Newton inversion with staged homotopy on the target moments.
pub fn natural_from_mean_homotopy(
    fam: &ExpFamily,
    eta_target: &ExpectationParams,
    theta0: &NaturalParams,
    tol: f64,
) -> Result<NaturalParams> {
    match fam.natural_from_mean(eta_target, theta0, tol) {
        Ok(theta) => return Ok(theta),
        Err(_) => {}
    }
    let eta0 = fam.mean_params(theta0)?;
    let mut last_err = Error::NoConvergence {
        iterations: 0,
        residual: f64::NAN,
    };
    for stages in [4usize, 8, 16, 32] {
        let mut theta = theta0.clone();
        let mut ok = true;
        for s in 1..=stages {
            let lam = s as f64 / stages as f64;
            let eta_s = ExpectationParams::new(
                eta0.0
                    .iter()
                    .zip(&eta_target.0)
                    .map(|(a, b)| a + lam * (b - a))
                    .collect::<Vec<_>>(),
            );
            match fam.natural_from_mean(&eta_s, &theta, tol) {
                Ok(next) => theta = next,
                Err(e) => {
                    last_err = e;
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            return Ok(theta);
        }
    }
    Err(last_err)
}

/// Seed θ whose exponent reproduces the Gaussian −(x−μ)²/(2σ²) exactly
/// when the quadratic lies in the span of the statistics (monomial and
/// Hermite bases both qualify). Least squares on polynomial coefficients;
/// None when the span misses the quadratic by more than 1e-9.
pub fn quadratic_seed(fam: &ExpFamily, mu: f64, var: f64) -> Option<NaturalParams> {
    if !(var > 0.0) {
        return None;
    }
    let target = Poly::new(&[0.0, mu / var, -0.5 / var]);
    let residual_target = target.sub(fam.background().log_weight());
    let max_deg = fam
        .statistics()
        .iter()
        .map(|c| c.degree())
        .chain(std::iter::once(residual_target.degree()))
        .max()
        .unwrap_or(0);
    let rows = max_deg; // degrees 1..=max_deg; constants are absorbed by psi
    let n = fam.n();
    let mut a = nalgebra::DMatrix::zeros(rows, n);
    let mut b = nalgebra::DVector::zeros(rows);
    for d in 1..=max_deg {
        for (j, c) in fam.statistics().iter().enumerate() {
            a[(d - 1, j)] = c.coeffs().get(d).copied().unwrap_or(0.0);
        }
        b[d - 1] = residual_target.coeffs().get(d).copied().unwrap_or(0.0);
    }
    let svd = a.clone().svd(true, true);
    let theta = svd.solve(&b, 1e-12).ok()?;
    let fit = &a * &theta - &b;
    if fit.amax() > 1e-9 {
        return None;
    }
    Some(NaturalParams::new(theta.iter().cloned().collect::<Vec<_>>()))
}

/// One row of the eigenfunction-MLE error series.
#[derive(Debug, Clone)]
pub struct MleRow {
    pub t: f64,
    pub eta_true: Vec<f64>,
    pub eta_proj: Vec<f64>,
    pub eps: Vec<f64>,
}

#[derive(Debug)]
pub struct MleSeries {
    pub rows: Vec<MleRow>,
    pub lambda: Vec<f64>,
    /// max over the grid of ‖ε(t)‖∞.
    pub max_eps_norm: f64,
}

/// η_true from the grid solver vs η̃ from the assumed-density ODE, both
/// reported on `t_grid` (t_grid[0] must be 0, the time of `p0`).
///
/// η̃(0) starts at the moment projection of p0, optionally displaced by
/// `offset` to exercise the e^{−Λt} decay of the error.
pub fn mle_error_series(
    fam: &ExpFamily,
    model: &SdeModel,
    p0: &GridDensity,
    t_grid: &[f64],
    dt: f64,
    offset: Option<&[f64]>,
) -> Result<MleSeries> {
    if t_grid.is_empty() {
        return Err(Error::EmptyInput("mle_error_series needs output times"));
    }
    if t_grid[0].abs() > 1e-12 {
        return Err(Error::Invalid("t_grid must start at 0".into()));
    }
    let spectrum = EigenSpectrum::detect(model, fam)?;

    // ground truth from the grid
    let fpe = fpe_solve(model, p0, (0.0, *t_grid.last().unwrap()), dt, t_grid)?;
    let eta_true: Vec<ExpectationParams> = fpe
        .snapshots
        .iter()
        .map(|(_, d)| d.family_moments(fam))
        .collect();

    // seed for the eta -> theta inversion: Gaussian moment match
    let mu = p0.moment(&Poly::x());
    let ex2 = p0.moment(&Poly::monomial(2));
    let seed = quadratic_seed(fam, mu, (ex2 - mu * mu).max(1e-6))
        .ok_or_else(|| Error::Invalid("no quadratic seed in the statistic span".into()))?;

    let mut eta_proj_state: Vec<f64> = eta_true[0].0.clone();
    if let Some(delta) = offset {
        if delta.len() != fam.n() {
            return Err(Error::Invalid("offset dimension mismatch".into()));
        }
        for (e, d) in eta_proj_state.iter_mut().zip(delta) {
            *e += d;
        }
    }
    let theta_init = natural_from_mean_homotopy(
        fam,
        &ExpectationParams::new(eta_proj_state.clone()),
        &seed,
        1e-10,
    )?;

    let mut rows = Vec::with_capacity(t_grid.len());
    let mut max_eps_norm = 0.0f64;
    let mut warm = theta_init;
    for (k, &t) in t_grid.iter().enumerate() {
        if k > 0 {
            let (t_prev, t_next) = (t_grid[k - 1], t);
            let mut warm_theta = warm.clone();
            let mut rhs = |tt: f64, y: &[f64]| {
                let (rate, theta) = assumed_density_rhs(
                    fam,
                    model,
                    &ExpectationParams::new(y.to_vec()),
                    tt,
                    &warm_theta,
                )?;
                warm_theta = theta;
                Ok(rate)
            };
            let mut guard = |_t: f64, _y: &[f64]| true;
            let traj = ode::integrate(
                ode::IvpProblem {
                    rhs: &mut rhs,
                    y0: eta_proj_state.clone(),
                    t_span: (t_prev, t_next),
                    guard: &mut guard,
                    max_step: None,
                },
                (t_next - t_prev).min(0.02),
                1e-10,
                1e-12,
            )?;
            eta_proj_state = traj.states.last().unwrap().clone();
            warm = warm_theta;
        }
        let eps: Vec<f64> = eta_true[k]
            .0
            .iter()
            .zip(&eta_proj_state)
            .map(|(a, b)| a - b)
            .collect();
        let norm = eps.iter().fold(0.0f64, |m, e| m.max(e.abs()));
        max_eps_norm = max_eps_norm.max(norm);
        rows.push(MleRow {
            t,
            eta_true: eta_true[k].0.clone(),
            eta_proj: eta_proj_state.clone(),
            eps,
        });
    }
    Ok(MleSeries {
        rows,
        lambda: spectrum.lambda,
        max_eps_norm,
    })
}

/// Analytic Gaussian density helper for oracle comparisons.
pub fn gaussian_pdf(x: f64, mu: f64, var: f64) -> f64 {
    let z = (2.0 * std::f64::consts::PI * var).sqrt();
    (-(x - mu) * (x - mu) / (2.0 * var)).exp() / z
}

/// Squared-diffusion helper used by several presets.
pub fn constant_field(v: f64) -> ScalarField {
    ScalarField::poly(&[v])
}
