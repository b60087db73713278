//! Scalar fields on the real line with first and second derivatives.
//!
//! Everything the library integrates or differentiates — sufficient
//! statistics, drifts, diffusion coefficients, Galerkin basis functions —
//! is a [`SmoothField`]. Two implementations are provided: [`Poly`], a
//! dense-coefficient polynomial with exact ring arithmetic, and
//! [`FnField`], a triple of closures for non-polynomial coefficients.
//! [`ScalarField`] is the storable sum type; operations that combine
//! fields stay exact whenever every operand is a polynomial.

use std::fmt;
use std::sync::Arc;

/// A twice continuously differentiable scalar field x ↦ f(x).
pub trait SmoothField: Send + Sync {
    fn eval(&self, x: f64) -> f64;
    fn d1(&self, x: f64) -> f64;
    fn d2(&self, x: f64) -> f64;
}

/// Dense univariate polynomial, coefficients in ascending power order.
///
/// `coeffs[k]` multiplies x^k. The zero polynomial is stored as `[0.0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Poly {
    coeffs: Vec<f64>,
}

impl Poly {
    pub fn new(coeffs: &[f64]) -> Self {
        let mut p = Poly {
            coeffs: coeffs.to_vec(),
        };
        p.trim();
        p
    }

    pub fn zero() -> Self {
        Poly { coeffs: vec![0.0] }
    }

    pub fn constant(c: f64) -> Self {
        Poly { coeffs: vec![c] }
    }

    /// The identity field x ↦ x.
    pub fn x() -> Self {
        Poly {
            coeffs: vec![0.0, 1.0],
        }
    }

    /// Monomial x^k.
    pub fn monomial(k: usize) -> Self {
        let mut coeffs = vec![0.0; k + 1];
        coeffs[k] = 1.0;
        Poly { coeffs }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs
            .iter()
            .rposition(|&a| a != 0.0)
            .unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&a| a == 0.0)
    }

    fn trim(&mut self) {
        while self.coeffs.len() > 1 && *self.coeffs.last().unwrap() == 0.0 {
            self.coeffs.pop();
        }
        if self.coeffs.is_empty() {
            self.coeffs.push(0.0);
        }
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let n = self.coeffs.len().max(other.coeffs.len());
        let mut coeffs = vec![0.0; n];
        for (k, c) in coeffs.iter_mut().enumerate() {
            *c = self.coeffs.get(k).copied().unwrap_or(0.0)
                + other.coeffs.get(k).copied().unwrap_or(0.0);
        }
        Poly::new(&coeffs)
    }

    pub fn sub(&self, other: &Poly) -> Poly {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, s: f64) -> Poly {
        Poly::new(&self.coeffs.iter().map(|c| c * s).collect::<Vec<_>>())
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        let mut coeffs = vec![0.0; self.coeffs.len() + other.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            if *a == 0.0 {
                continue;
            }
            for (j, b) in other.coeffs.iter().enumerate() {
                coeffs[i + j] += a * b;
            }
        }
        Poly::new(&coeffs)
    }

    pub fn derivative(&self) -> Poly {
        if self.coeffs.len() == 1 {
            return Poly::zero();
        }
        let coeffs: Vec<f64> = self
            .coeffs
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, c)| c * k as f64)
            .collect();
        Poly::new(&coeffs)
    }

    /// Antiderivative with zero constant term.
    pub fn antiderivative(&self) -> Poly {
        let mut coeffs = vec![0.0; self.coeffs.len() + 1];
        for (k, c) in self.coeffs.iter().enumerate() {
            coeffs[k + 1] = c / (k as f64 + 1.0);
        }
        Poly::new(&coeffs)
    }

    /// Exact ∫_a^b via the antiderivative.
    pub fn definite_integral(&self, a: f64, b: f64) -> f64 {
        let f = self.antiderivative();
        f.eval(b) - f.eval(a)
    }

    /// Maximum absolute coefficient difference against `other`.
    pub fn coeff_distance(&self, other: &Poly) -> f64 {
        let n = self.coeffs.len().max(other.coeffs.len());
        (0..n)
            .map(|k| {
                (self.coeffs.get(k).copied().unwrap_or(0.0)
                    - other.coeffs.get(k).copied().unwrap_or(0.0))
                .abs()
            })
            .fold(0.0, f64::max)
    }
}

impl SmoothField for Poly {
    fn eval(&self, x: f64) -> f64 {
        // Horner
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    fn d1(&self, x: f64) -> f64 {
        let mut acc = 0.0;
        for (k, &c) in self.coeffs.iter().enumerate().skip(1).rev() {
            acc = acc * x + c * k as f64;
        }
        acc
    }

    fn d2(&self, x: f64) -> f64 {
        let mut acc = 0.0;
        for (k, &c) in self.coeffs.iter().enumerate().skip(2).rev() {
            acc = acc * x + c * (k * (k - 1)) as f64;
        }
        acc
    }
}

impl fmt::Display for Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (k, &c) in self.coeffs.iter().enumerate() {
            if c == 0.0 && self.coeffs.len() > 1 {
                continue;
            }
            if !first {
                write!(f, " + ")?;
            }
            match k {
                0 => write!(f, "{c}")?,
                1 => write!(f, "{c}*x")?,
                _ => write!(f, "{c}*x^{k}")?,
            }
            first = false;
        }
        if first {
            write!(f, "0")?;
        }
        Ok(())
    }
}

type EvalFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Generic field built from closures for value, first and second derivative.
#[derive(Clone)]
pub struct FnField {
    eval: EvalFn,
    d1: EvalFn,
    d2: EvalFn,
}

impl FnField {
    pub fn new(
        eval: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d1: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d2: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        FnField {
            eval: Arc::new(eval),
            d1: Arc::new(d1),
            d2: Arc::new(d2),
        }
    }

    /// Field from a value closure alone; derivatives fall back to central
    /// finite differences. Used for composites (e.g. L applied to a
    /// non-polynomial field) whose higher derivatives are not available in
    /// closed form.
    pub fn from_eval(eval: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        let e = Arc::new(eval);
        let e1 = e.clone();
        let e2 = e.clone();
        let h = 1e-5;
        FnField {
            eval: e,
            d1: Arc::new(move |x| (e1(x + h) - e1(x - h)) / (2.0 * h)),
            d2: Arc::new(move |x| (e2(x + h) - 2.0 * e2(x) + e2(x - h)) / (h * h)),
        }
    }
}

impl fmt::Debug for FnField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("FnField(..)")
    }
}

impl SmoothField for FnField {
    fn eval(&self, x: f64) -> f64 {
        (self.eval)(x)
    }
    fn d1(&self, x: f64) -> f64 {
        (self.d1)(x)
    }
    fn d2(&self, x: f64) -> f64 {
        (self.d2)(x)
    }
}

/// Storable field: polynomial when exact arithmetic is possible, closure
/// otherwise. SDE coefficients and composite fields use this type so that
/// polynomial inputs keep polynomial outputs.
#[derive(Debug, Clone)]
pub enum ScalarField {
    Poly(Poly),
    Custom(FnField),
}

impl ScalarField {
    pub fn poly(coeffs: &[f64]) -> Self {
        ScalarField::Poly(Poly::new(coeffs))
    }

    pub fn as_poly(&self) -> Option<&Poly> {
        match self {
            ScalarField::Poly(p) => Some(p),
            ScalarField::Custom(_) => None,
        }
    }
}

impl From<Poly> for ScalarField {
    fn from(p: Poly) -> Self {
        ScalarField::Poly(p)
    }
}

impl From<FnField> for ScalarField {
    fn from(f: FnField) -> Self {
        ScalarField::Custom(f)
    }
}

impl SmoothField for ScalarField {
    fn eval(&self, x: f64) -> f64 {
        match self {
            ScalarField::Poly(p) => p.eval(x),
            ScalarField::Custom(f) => f.eval(x),
        }
    }
    fn d1(&self, x: f64) -> f64 {
        match self {
            ScalarField::Poly(p) => p.d1(x),
            ScalarField::Custom(f) => f.d1(x),
        }
    }
    fn d2(&self, x: f64) -> f64 {
        match self {
            ScalarField::Poly(p) => p.d2(x),
            ScalarField::Custom(f) => f.d2(x),
        }
    }
}

impl<T: SmoothField + ?Sized> SmoothField for &T {
    fn eval(&self, x: f64) -> f64 {
        (**self).eval(x)
    }
    fn d1(&self, x: f64) -> f64 {
        (**self).d1(x)
    }
    fn d2(&self, x: f64) -> f64 {
        (**self).d2(x)
    }
}

/// Worst relative mismatch between `d1`/`d2` and central finite differences
/// of the level below, over the probe points. Used by tests and model
/// validation to enforce the derivative contract.
pub fn derivative_consistency(field: &dyn SmoothField, probes: &[f64], h: f64) -> f64 {
    let mut worst = 0.0f64;
    for &x in probes {
        let fd1 = (field.eval(x + h) - field.eval(x - h)) / (2.0 * h);
        let fd2 = (field.d1(x + h) - field.d1(x - h)) / (2.0 * h);
        let r1 = (field.d1(x) - fd1).abs() / fd1.abs().max(1.0);
        let r2 = (field.d2(x) - fd2).abs() / fd2.abs().max(1.0);
        worst = worst.max(r1).max(r2);
    }
    worst
}
