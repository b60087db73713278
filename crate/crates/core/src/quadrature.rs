//! Deterministic composite Gauss–Legendre quadrature with automatic
//! domain truncation.
//!
//! Every expectation in the library reduces to ∫ f(x) exp(ℓ(x)) dx over a
//! truncated interval. [`build_rule`] picks the interval from the exponent
//! ℓ alone: the endpoints are pushed out until ℓ sits `ln(tail_eps)` below
//! its interior maximum, so Gaussian, quartic and generalized backgrounds
//! share one code path. [`integrate`] estimates the error by re-evaluating
//! at half the panel order and refines by doubling the panel count.
//!
//! All summations are compensated (Neumaier) and run in ascending node
//! order, so identical inputs produce bit-identical results.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{Error, Result};
use crate::field::SmoothField;

/// Search window for truncation bounds; beyond this the exponent is
/// declared non-decaying.
const BOUND_LIMIT: f64 = 1e3;

#[derive(Debug, Clone)]
pub struct QuadratureSpec {
    /// Gauss–Legendre points per panel.
    pub panel_order: usize,
    /// Initial number of panels over the truncated domain.
    pub panels: usize,
    /// Tail threshold: endpoints satisfy ℓ ≤ max ℓ + ln(tail_eps).
    pub tail_eps: f64,
    /// Panel-doubling rounds allowed in [`integrate`].
    pub max_refinements: usize,
    /// Error target for [`integrate`], relative to max(1, |value|).
    pub tol: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            panel_order: 32,
            panels: 16,
            tail_eps: 1e-14,
            max_refinements: 6,
            tol: 1e-10,
        }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.panel_order < 2 {
            return Err(Error::Invalid("panel_order must be >= 2".into()));
        }
        if !(self.tail_eps > 0.0 && self.tail_eps <= 1e-6) {
            return Err(Error::Invalid("tail_eps must lie in (0, 1e-6]".into()));
        }
        if self.panels == 0 {
            return Err(Error::Invalid("panels must be >= 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Invalid("tol must be positive".into()));
        }
        Ok(())
    }
}

/// Composite Gauss–Legendre rule on a fixed interval.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    lo: f64,
    hi: f64,
    panel_order: usize,
    panels: usize,
}

impl QuadratureRule {
    /// Rule with `panels` equal panels of `panel_order` points on [lo, hi].
    pub fn on_domain(lo: f64, hi: f64, panels: usize, panel_order: usize) -> Self {
        let gl = gauss_legendre(panel_order);
        let (xs, ws) = (&gl.0, &gl.1);
        let mut nodes = Vec::with_capacity(panels * panel_order);
        let mut weights = Vec::with_capacity(panels * panel_order);
        let width = (hi - lo) / panels as f64;
        for p in 0..panels {
            let a = lo + p as f64 * width;
            let mid = a + 0.5 * width;
            let half = 0.5 * width;
            for k in 0..panel_order {
                nodes.push(mid + half * xs[k]);
                weights.push(half * ws[k]);
            }
        }
        QuadratureRule {
            nodes,
            weights,
            lo,
            hi,
            panel_order,
            panels,
        }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn panels(&self) -> usize {
        self.panels
    }

    pub fn panel_order(&self) -> usize {
        self.panel_order
    }

    /// Same domain, doubled panel count.
    pub fn refined(&self) -> QuadratureRule {
        QuadratureRule::on_domain(self.lo, self.hi, self.panels * 2, self.panel_order)
    }

    /// Same domain and panels at half the order; the comparison value for
    /// error estimation.
    pub fn half_order(&self) -> QuadratureRule {
        QuadratureRule::on_domain(self.lo, self.hi, self.panels, (self.panel_order / 2).max(2))
    }

    /// Σ w_i f(x_i), compensated, ascending node order.
    pub fn apply(&self, f: impl Fn(f64) -> f64) -> f64 {
        neumaier_sum(
            self.nodes
                .iter()
                .zip(&self.weights)
                .map(|(&x, &w)| w * f(x)),
        )
    }
}

/// Choose truncation bounds so the exponent at both endpoints sits at
/// least `ln(tail_eps)` below its interior maximum, then lay the
/// composite rule over them.
pub fn build_rule(exponent: &dyn SmoothField, spec: &QuadratureSpec) -> Result<QuadratureRule> {
    spec.validate()?;
    let (lo, hi, _) = truncation_bounds(exponent, spec.tail_eps)?;
    Ok(QuadratureRule::on_domain(lo, hi, spec.panels, spec.panel_order))
}

/// The bounds themselves plus the interior maximum of the exponent.
pub fn truncation_bounds(exponent: &dyn SmoothField, tail_eps: f64) -> Result<(f64, f64, f64)> {
    // Coarse scan for the interior maximum. The log-densities we meet are
    // smooth with a handful of modes, so a fixed scan resolves them.
    const SCAN: usize = 4001;
    let mut best_x = 0.0;
    let mut best_v = f64::NEG_INFINITY;
    for i in 0..SCAN {
        let x = -BOUND_LIMIT + 2.0 * BOUND_LIMIT * i as f64 / (SCAN - 1) as f64;
        let v = exponent.eval(x);
        if v > best_v {
            best_v = v;
            best_x = x;
        }
    }
    // Refine the mode locally so the threshold is anchored correctly.
    let step = 2.0 * BOUND_LIMIT / (SCAN - 1) as f64;
    let fine = 64;
    for i in 0..=fine {
        let x = (best_x - step + 2.0 * step * i as f64 / fine as f64)
            .clamp(-BOUND_LIMIT, BOUND_LIMIT);
        let v = exponent.eval(x);
        if v > best_v {
            best_v = v;
            best_x = x;
        }
    }
    let threshold = best_v + tail_eps.ln();

    let hi = find_crossing(exponent, best_x, BOUND_LIMIT, threshold)?;
    let lo = find_crossing(exponent, best_x, -BOUND_LIMIT, threshold)?;
    if !(hi > lo) {
        return Err(Error::NoDecay { limit: BOUND_LIMIT });
    }
    Ok((lo, hi, best_v))
}

/// March from `from` towards `limit` until the exponent drops below
/// `threshold`, then bisect the crossing.
fn find_crossing(
    exponent: &dyn SmoothField,
    from: f64,
    limit: f64,
    threshold: f64,
) -> Result<f64> {
    let mut a = from;
    let mut step = 0.5f64.max(from.abs() * 1e-3);
    let mut b;
    loop {
        b = if limit > from {
            (a + step).min(limit)
        } else {
            (a - step).max(limit)
        };
        if exponent.eval(b) <= threshold {
            break;
        }
        if (b - limit).abs() < 1e-12 {
            return Err(Error::NoDecay { limit: BOUND_LIMIT });
        }
        a = b;
        step *= 2.0;
    }
    // Bisect [a, b] down to a modest width; overshooting outward is fine.
    for _ in 0..80 {
        let mid = 0.5 * (a + b);
        if exponent.eval(mid) <= threshold {
            b = mid;
        } else {
            a = mid;
        }
        if (b - a).abs() < 1e-9 * (1.0 + b.abs()) {
            break;
        }
    }
    Ok(b)
}

/// Integrate `f` over the rule with half-order error estimation, doubling
/// panels until the estimate meets `tol` (relative to max(1, |value|))
/// or refinements are exhausted.
pub fn integrate(
    f: impl Fn(f64) -> f64,
    rule: &QuadratureRule,
    tol: f64,
    max_refinements: usize,
) -> Result<(f64, f64)> {
    let mut current = rule.clone();
    for round in 0..=max_refinements {
        let value = current.apply(&f);
        let coarse = current.half_order().apply(&f);
        let err = (value - coarse).abs();
        if err <= tol * value.abs().max(1.0) {
            return Ok((value, err));
        }
        if round == max_refinements {
            return Err(Error::QuadratureFailure(format!(
                "error estimate {err:.3e} above tolerance after {max_refinements} refinements"
            )));
        }
        current = current.refined();
    }
    unreachable!()
}

/// Neumaier compensated summation in iteration order.
pub fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Gauss–Legendre nodes and weights on [-1, 1], cached per order.
pub fn gauss_legendre(order: usize) -> Arc<(Vec<f64>, Vec<f64>)> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<(Vec<f64>, Vec<f64>)>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap();
    guard
        .entry(order)
        .or_insert_with(|| Arc::new(compute_gauss_legendre(order)))
        .clone()
}

/// Newton iteration on P_n with the Tricomi initial guess.
fn compute_gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_and_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // cos() opens from +1; store ascending
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
        let (_, d) = legendre_and_derivative(n, 0.0);
        weights[n / 2] = 2.0 / (d * d);
    }
    (nodes, weights)
}

fn legendre_and_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Poly;
    use proptest::prelude::*;

    fn gaussian_exponent() -> Poly {
        Poly::new(&[0.0, 0.0, -0.5])
    }

    #[test]
    fn gaussian_domain_covers_eight_sigmas() {
        // -x^2/2 = ln(1e-14)  =>  |x| ~ 8.029
        let rule = build_rule(&gaussian_exponent(), &QuadratureSpec::default()).unwrap();
        let (lo, hi) = rule.domain();
        assert!(lo <= -8.0 && hi >= 8.0, "domain [{lo}, {hi}]");
        assert!(hi < 10.0, "bound should be near 8.03, got {hi}");
    }

    #[test]
    fn divergent_exponent_is_rejected() {
        let up = Poly::new(&[0.0, 0.0, 1.0]); // +x^2
        match build_rule(&up, &QuadratureSpec::default()) {
            Err(Error::NoDecay { .. }) => {}
            other => panic!("expected NoDecay, got {other:?}"),
        }
    }

    #[test]
    fn quartic_domain_is_narrower_than_gaussian() {
        // -x^4/4 = ln(1e-14)  =>  |x| ~ (4 ln 1e14)^(1/4) = 3.3698
        let quartic = Poly::new(&[0.0, 0.0, 0.0, 0.0, -0.25]);
        let rule = build_rule(&quartic, &QuadratureSpec::default()).unwrap();
        let (lo, hi) = rule.domain();
        assert!(hi >= 3.3697 && hi < 4.5, "hi = {hi}");
        assert!(lo <= -3.3697 && lo > -4.5, "lo = {lo}");
    }

    #[test]
    fn normal_density_integrates_to_one() {
        let spec = QuadratureSpec::default();
        let rule = build_rule(&gaussian_exponent(), &spec).unwrap();
        let z = (2.0 * std::f64::consts::PI).sqrt();
        let (mass, _) = integrate(
            |x| (-x * x / 2.0).exp() / z,
            &rule,
            spec.tol,
            spec.max_refinements,
        )
        .unwrap();
        assert!((mass - 1.0).abs() < 1e-12, "mass = {mass}");
    }

    #[test]
    fn odd_moment_vanishes_and_second_moment_is_one() {
        let spec = QuadratureSpec::default();
        let rule = build_rule(&gaussian_exponent(), &spec).unwrap();
        let z = (2.0 * std::f64::consts::PI).sqrt();
        let m1 = rule.apply(|x| x * (-x * x / 2.0).exp() / z);
        assert!(m1.abs() < 1e-12, "first moment = {m1}");
        let (m2, _) = integrate(
            |x| x * x * (-x * x / 2.0).exp() / z,
            &rule,
            spec.tol,
            spec.max_refinements,
        )
        .unwrap();
        assert!((m2 - 1.0).abs() < 1e-10, "second moment = {m2}");
    }

    #[test]
    fn determinism_bit_identical() {
        let spec = QuadratureSpec::default();
        let rule1 = build_rule(&gaussian_exponent(), &spec).unwrap();
        let rule2 = build_rule(&gaussian_exponent(), &spec).unwrap();
        let a = rule1.apply(|x| (x.sin() - 0.3 * x).exp());
        let b = rule2.apply(|x| (x.sin() - 0.3 * x).exp());
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn rule_mass_matches_interval_length() {
        let rule = QuadratureRule::on_domain(-3.0, 5.0, 7, 16);
        let one = rule.apply(|_| 1.0);
        assert!((one - 8.0).abs() < 1e-13);
        assert!(rule.weights().iter().all(|&w| w > 0.0));
    }

    proptest! {
        // Order-k Gauss-Legendre is exact on degree <= 2k-1 per panel.
        #[test]
        fn polynomial_exactness(
            coeffs in proptest::collection::vec(-2.0f64..2.0, 1..8),
            a in -3.0f64..0.0,
            b in 0.5f64..3.0,
        ) {
            let p = Poly::new(&coeffs);
            let rule = QuadratureRule::on_domain(a, b, 3, 8);
            let exact = p.definite_integral(a, b);
            let got = rule.apply(|x| p.eval(x));
            prop_assert!((got - exact).abs() < 1e-11 * exact.abs().max(1.0));
        }
    }
}
