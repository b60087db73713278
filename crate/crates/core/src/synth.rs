//! Synthesis of the SDE whose exact marginal law follows the projected
//! flow, and its Monte-Carlo validation.
//!
//! For a projected trajectory t ↦ θ_t of base model dX = f dt + σ dW, the
//! diffusion dY = u* dt + σ dW with
//!
//! ```text
//! u*(x) = ½ a′(x) + ½ a(x) ℓ′(x)
//!         − E_θ[Lc]ᵀ g⁻¹(θ) ∫_lo^x (c(y) − η) exp[ℓ(y) − ℓ(x)] dy
//! ```
//!
//! (ℓ the total log-density exponent at θ) has marginal density exactly
//! p(·, θ_t). The cumulative integral is tabulated on a grid per output
//! time, rescaled around the exponent maximum, and accumulated from the
//! nearer tail so the exp factor never overflows.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::expfam::{ExpFamily, NaturalParams};
use crate::field::SmoothField;
use crate::oracle::Grid1D;
use crate::sde::{backward_apply_poly, SdeModel};

/// u* evaluated at the grid nodes for a single θ.
pub fn modified_drift(
    base: &SdeModel,
    fam: &ExpFamily,
    theta: &NaturalParams,
    grid: &Grid1D,
) -> Result<Vec<f64>> {
    if base.time_dependent {
        return Err(Error::TimeDependent);
    }
    let chart = fam.chart(theta)?;
    let eta = chart.mean()?;
    let mut b = Vec::with_capacity(fam.n());
    for ci in fam.statistics() {
        let lci = backward_apply_poly(base, ci, 0.0)?;
        b.push(chart.expect(|x| lci.eval(x))?);
    }
    let g = chart.fisher()?;
    let w = g.solve(&b)?;

    let exponent = fam.exponent(theta)?;
    let exponent_d1 = exponent.derivative();
    let m = grid.m;
    let h = grid.h();
    let ell: Vec<f64> = grid.nodes().map(|x| exponent.eval(x)).collect();
    let ell_max = ell.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ell_min = ell.iter().cloned().fold(f64::INFINITY, f64::min);
    if ell_max - ell_min > 700.0 {
        return Err(Error::Overflow {
            range: ell_max - ell_min,
        });
    }
    // grid must bury both tails of the family density
    let psi = chart.psi();
    for (name, l) in [("lower", ell[0]), ("upper", ell[m - 1])] {
        if (l - psi).exp() > 1e-14 {
            return Err(Error::Invalid(format!(
                "family density at the {name} grid bound exceeds 1e-14"
            )));
        }
    }

    let n = fam.n();
    let cvals: Vec<Vec<f64>> = fam
        .statistics()
        .iter()
        .zip(&eta.0)
        .map(|(c, e)| grid.nodes().map(|x| c.eval(x) - e).collect())
        .collect();
    let weight: Vec<f64> = ell.iter().map(|l| (l - ell_max).exp()).collect();

    // cumulative trapezoids from both ends, rescaled by exp(ell - max)
    let mut left = vec![vec![0.0; m]; n];
    let mut right = vec![vec![0.0; m]; n];
    for k in 0..n {
        for i in 1..m {
            let seg = 0.5 * h * (cvals[k][i - 1] * weight[i - 1] + cvals[k][i] * weight[i]);
            left[k][i] = left[k][i - 1] + seg;
        }
        for i in (0..m - 1).rev() {
            let seg = 0.5 * h * (cvals[k][i] * weight[i] + cvals[k][i + 1] * weight[i + 1]);
            right[k][i] = right[k][i + 1] + seg;
        }
    }
    let mode = ell
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);

    let mut u = Vec::with_capacity(m);
    for (i, x) in grid.nodes().enumerate() {
        let amp = (ell_max - ell[i]).exp();
        // ∫_lo^x equals −∫_x^hi because the integrand is mean-centered;
        // accumulate from the nearer tail to keep the product stable.
        let mut corr = 0.0;
        for k in 0..n {
            let s = if i <= mode { left[k][i] } else { -right[k][i] };
            corr += w[k] * s * amp;
        }
        u.push(0.5 * base.a.d1(x) + 0.5 * base.a.eval(x) * exponent_d1.eval(x) - corr);
    }
    Ok(u)
}

/// Per-time drift tables along a θ-trajectory, linearly interpolated in
/// x and t during simulation.
#[derive(Debug)]
pub struct SynthesizedDrift {
    pub base: SdeModel,
    pub grid: Grid1D,
    times: Vec<f64>,
    tables: Vec<Vec<f64>>,
}

impl SynthesizedDrift {
    pub fn build(
        base: &SdeModel,
        fam: &ExpFamily,
        theta_path: &[(f64, NaturalParams)],
        grid: Grid1D,
    ) -> Result<Self> {
        if theta_path.is_empty() {
            return Err(Error::EmptyInput("drift synthesis needs a theta path"));
        }
        base.validate_diffusion_on(grid.lo, grid.hi)?;
        let mut times = Vec::with_capacity(theta_path.len());
        let mut tables = Vec::with_capacity(theta_path.len());
        for (t, theta) in theta_path {
            times.push(*t);
            tables.push(modified_drift(base, fam, theta, &grid)?);
        }
        Ok(SynthesizedDrift {
            base: base.clone(),
            grid,
            times,
            tables,
        })
    }

    pub fn t_max(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Bilinear interpolation of u*(t, x) from the cached tables.
    pub fn drift_at(&self, t: f64, x: f64) -> f64 {
        let k = match self
            .times
            .binary_search_by(|probe| probe.total_cmp(&t))
        {
            Ok(k) => k.min(self.times.len() - 1),
            Err(k) => k.saturating_sub(1).min(self.times.len() - 2),
        };
        let (k0, k1) = if k + 1 < self.times.len() {
            (k, k + 1)
        } else {
            (k - 1, k)
        };
        let w = ((t - self.times[k0]) / (self.times[k1] - self.times[k0])).clamp(0.0, 1.0);
        let v0 = interp_grid(&self.grid, &self.tables[k0], x);
        let v1 = interp_grid(&self.grid, &self.tables[k1], x);
        v0 + w * (v1 - v0)
    }
}

fn interp_grid(grid: &Grid1D, table: &[f64], x: f64) -> f64 {
    let h = grid.h();
    let pos = (x - grid.lo) / h;
    let i = (pos.floor() as isize).clamp(0, grid.m as isize - 2) as usize;
    let w = (pos - i as f64).clamp(0.0, 1.0);
    table[i] + w * (table[i + 1] - table[i])
}

/// Reproducible Monte-Carlo ensemble: per-path substreams keyed by seed
/// and path index, so thread scheduling never changes the result.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    pub seed: u64,
    pub n_paths: usize,
    pub dt: f64,
    pub terminal_values: Vec<f64>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Euler–Maruyama over the cached drift, diffusion σ = √a of the base
/// model. Paths that leave the grid are clamped and counted; more than
/// 0.1% escapes is an error.
pub fn simulate_em(
    drift: &SynthesizedDrift,
    x0_sampler: &(dyn Fn(&mut ChaCha8Rng) -> f64 + Sync),
    n_paths: usize,
    dt: f64,
    t1: f64,
    seed: u64,
) -> Result<PathEnsemble> {
    if n_paths == 0 {
        return Err(Error::EmptyInput("simulate_em needs paths"));
    }
    if !(dt > 0.0 && t1 > 0.0) {
        return Err(Error::Invalid("dt and t1 must be positive".into()));
    }
    if t1 > drift.t_max() + 1e-12 {
        return Err(Error::Invalid(format!(
            "t1 = {t1} beyond cached trajectory end {}",
            drift.t_max()
        )));
    }
    let n_steps = (t1 / dt).round().max(1.0) as usize;
    let h = t1 / n_steps as f64;
    let sqrt_h = h.sqrt();
    let (lo, hi) = (drift.grid.lo, drift.grid.hi);

    let results: Vec<(f64, bool)> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let stream = splitmix64(seed ^ splitmix64(i as u64 + 1));
            let mut rng = ChaCha8Rng::seed_from_u64(stream);
            let mut x = x0_sampler(&mut rng);
            let mut escaped = false;
            let mut t = 0.0;
            for _ in 0..n_steps {
                let z: f64 = rng.sample(StandardNormal);
                let sigma = drift.base.a.eval(x).max(0.0).sqrt();
                x += drift.drift_at(t, x) * h + sigma * sqrt_h * z;
                if x < lo || x > hi {
                    escaped = true;
                    x = x.clamp(lo, hi);
                }
                t += h;
            }
            (x, escaped)
        })
        .collect();

    let escapes = results.iter().filter(|(_, e)| *e).count();
    let frac = escapes as f64 / n_paths as f64;
    if frac > 1e-3 {
        return Err(Error::EscapedGrid {
            percent: 100.0 * frac,
        });
    }
    Ok(PathEnsemble {
        seed,
        n_paths,
        dt: h,
        terminal_values: results.into_iter().map(|(x, _)| x).collect(),
    })
}

/// One statistic's empirical-vs-target comparison.
#[derive(Debug, Clone)]
pub struct MomentRow {
    pub stat: String,
    pub empirical: f64,
    pub target: f64,
    pub stderr: f64,
    pub z: f64,
    /// Weak-order-1 Euler bias allowance, dt·(1 + |target|); slope
    /// calibrated on the OU closed form (second-moment bias ≈ target·dt/2).
    pub bias_allowance: f64,
    pub within: bool,
}

#[derive(Debug, Clone)]
pub struct MomentReport {
    pub rows: Vec<MomentRow>,
    pub all_within: bool,
    /// Set when the ensemble is too small for a standard error.
    pub insufficient_paths: bool,
}

/// Check |mean c_i(Y_T) − E_θ[c_i]| ≤ 3·stderr + bias(dt) per statistic.
pub fn validate_moments(
    ensemble: &PathEnsemble,
    fam: &ExpFamily,
    theta_t: &NaturalParams,
) -> Result<MomentReport> {
    if ensemble.terminal_values.is_empty() {
        return Err(Error::EmptyInput("empty ensemble"));
    }
    let n = ensemble.terminal_values.len();
    if n < 2 {
        return Ok(MomentReport {
            rows: Vec::new(),
            all_within: false,
            insufficient_paths: true,
        });
    }
    let chart = fam.chart(theta_t)?;
    let eta = chart.mean()?;
    let mut rows = Vec::with_capacity(fam.n());
    let mut all_within = true;
    for (k, (ci, target)) in fam.statistics().iter().zip(&eta.0).enumerate() {
        let vals: Vec<f64> = ensemble
            .terminal_values
            .iter()
            .map(|&x| ci.eval(x))
            .collect();
        let mean = crate::quadrature::neumaier_sum(vals.iter().copied()) / n as f64;
        let var = crate::quadrature::neumaier_sum(vals.iter().map(|v| (v - mean) * (v - mean)))
            / (n - 1) as f64;
        let stderr = (var / n as f64).sqrt();
        let bias_allowance = ensemble.dt * (1.0 + target.abs());
        let z = if stderr > 0.0 {
            (mean - target).abs() / stderr
        } else {
            f64::INFINITY
        };
        let within = (mean - target).abs() <= 3.0 * stderr + bias_allowance;
        all_within &= within;
        rows.push(MomentRow {
            stat: format!("c{}", k + 1),
            empirical: mean,
            target: *target,
            stderr,
            z,
            bias_allowance,
            within,
        });
    }
    Ok(MomentReport {
        rows,
        all_within,
        insufficient_paths: false,
    })
}

/// Inverse-CDF sampler for a family member, built on a dense table over
/// the θ-chart's truncation domain.
pub struct FamilySampler {
    xs: Vec<f64>,
    cdf: Vec<f64>,
}

impl FamilySampler {
    pub fn new(fam: &ExpFamily, theta: &NaturalParams) -> Result<Self> {
        const TABLE: usize = 8193;
        let chart = fam.chart(theta)?;
        let (lo, hi) = chart.domain();
        let h = (hi - lo) / (TABLE - 1) as f64;
        let xs: Vec<f64> = (0..TABLE).map(|i| lo + h * i as f64).collect();
        let pdf: Vec<f64> = xs.iter().map(|&x| chart.density(x)).collect();
        let mut cdf = vec![0.0; TABLE];
        for i in 1..TABLE {
            cdf[i] = cdf[i - 1] + 0.5 * h * (pdf[i - 1] + pdf[i]);
        }
        let total = cdf[TABLE - 1];
        if !(total > 0.0) {
            return Err(Error::Invalid("degenerate sampler table".into()));
        }
        for v in &mut cdf {
            *v /= total;
        }
        Ok(FamilySampler { xs, cdf })
    }

    pub fn draw(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let idx = match self.cdf.binary_search_by(|probe| probe.total_cmp(&u)) {
            Ok(i) => i,
            Err(i) => i,
        };
        if idx == 0 {
            return self.xs[0];
        }
        let i = idx.min(self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let w = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.0 };
        self.xs[i - 1] + w * (self.xs[i] - self.xs[i - 1])
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        self.draw(rng.gen::<f64>())
    }
}
