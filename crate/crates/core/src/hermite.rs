//! Probabilists' Hermite polynomials and finite Hermite expansions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::gauss_hermite_prob;

/// Largest truncation level accepted by [`hermite_coefficients`].
pub const MAX_NUMERIC_LEVEL: usize = 30;

/// `He_l(x)` by the three-term recurrence.
pub fn hermite_eval(l: usize, x: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, x);
    if l == 0 {
        return prev;
    }
    for k in 1..l {
        let next = x * cur - k as f64 * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// All of `He_0(x)..=He_l(x)`.
pub fn hermite_all(l: usize, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(l + 1);
    out.push(1.0);
    if l >= 1 {
        out.push(x);
    }
    for k in 1..l {
        out.push(x * out[k] - k as f64 * out[k - 1]);
    }
    out
}

fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

/// `Σ c_j x^j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct PolynomialSpec {
    coeffs: Vec<f64>,
}

impl PolynomialSpec {
    /// Trailing zeros are dropped; the remaining degree must be at least 1.
    pub fn new(mut coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("polynomial coefficients must be finite".into()));
        }
        while coeffs.len() > 1 && *coeffs.last().unwrap() == 0.0 {
            coeffs.pop();
        }
        if coeffs.len() < 2 {
            return Err(Error::InvalidInput("polynomial degree must be at least 1".into()));
        }
        Ok(Self { coeffs })
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }
}

impl TryFrom<Vec<f64>> for PolynomialSpec {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<PolynomialSpec> for Vec<f64> {
    fn from(p: PolynomialSpec) -> Vec<f64> {
        p.coeffs
    }
}

/// `f = Σ_{l ≤ L} a_l He_l` with `a_0 = 0` and at least one nonzero term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct HermiteExpansion {
    coeffs: Vec<f64>,
    rank: usize,
}

impl HermiteExpansion {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        Self::with_tolerance(coeffs, 0.0)
    }

    /// Coefficients with magnitude at most `tol` are treated as zero.
    fn with_tolerance(mut coeffs: Vec<f64>, tol: f64) -> Result<Self> {
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("Hermite coefficients must be finite".into()));
        }
        if coeffs.is_empty() {
            return Err(Error::InvalidInput("empty Hermite expansion".into()));
        }
        if coeffs[0].abs() > tol {
            return Err(Error::NotCentered(coeffs[0]));
        }
        coeffs[0] = 0.0;
        for c in coeffs.iter_mut() {
            if c.abs() <= tol {
                *c = 0.0;
            }
        }
        while coeffs.len() > 1 && *coeffs.last().unwrap() == 0.0 {
            coeffs.pop();
        }
        let rank = coeffs
            .iter()
            .position(|&c| c != 0.0)
            .ok_or_else(|| Error::InvalidInput("Hermite expansion is identically zero".into()))?;
        Ok(Self { coeffs, rank })
    }

    /// `He_l` alone.
    pub fn single(l: usize) -> Result<Self> {
        let mut c = vec![0.0; l + 1];
        c[l] = 1.0;
        Self::new(c)
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// `a_l`, zero beyond the stored level.
    pub fn coeff(&self, l: usize) -> f64 {
        self.coeffs.get(l).copied().unwrap_or(0.0)
    }

    pub fn level(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn eval(&self, x: f64) -> f64 {
        hermite_all(self.level(), x)
            .iter()
            .zip(&self.coeffs)
            .map(|(h, a)| h * a)
            .sum()
    }

    /// `E[f(Z)²] = Σ l!·a_l²`.
    pub fn energy(&self) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(l, a)| factorial(l) * a * a)
            .sum()
    }
}

impl TryFrom<Vec<f64>> for HermiteExpansion {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<HermiteExpansion> for Vec<f64> {
    fn from(e: HermiteExpansion) -> Vec<f64> {
        e.coeffs
    }
}

/// Hermite coefficients of `Σ c_j x^j`, unnormalized (`a_0` included).
fn monomials_to_hermite_raw(c: &[f64]) -> Vec<f64> {
    // x^n = Σ_k n!/(k!(n-2k)!2^k) He_{n-2k}
    let mut a = vec![0.0; c.len()];
    for (n, &cn) in c.iter().enumerate() {
        if cn == 0.0 {
            continue;
        }
        let mut k = 0;
        while 2 * k <= n {
            let w = factorial(n) / (factorial(k) * factorial(n - 2 * k) * 2f64.powi(k as i32));
            a[n - 2 * k] += cn * w;
            k += 1;
        }
    }
    a
}

/// Exact change of basis from monomials to Hermite polynomials.
pub fn monomial_to_hermite(p: &PolynomialSpec) -> Result<HermiteExpansion> {
    let a = monomials_to_hermite_raw(p.coeffs());
    let scale = p.coeffs().iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let a0 = a[0];
    if a0.abs() > 1e-12 * scale.max(1.0) * factorial(p.degree()) {
        return Err(Error::NotCentered(a0));
    }
    let mut a = a;
    a[0] = 0.0;
    HermiteExpansion::new(a)
}

/// Monomial coefficients of `Σ a_l He_l`.
pub fn hermite_to_monomial(e: &HermiteExpansion) -> Vec<f64> {
    // build He_l in the monomial basis by the recurrence
    let n = e.level();
    let mut out = vec![0.0; n + 1];
    let mut prev = vec![0.0; n + 1];
    let mut cur = vec![0.0; n + 1];
    prev[0] = 1.0;
    out[0] += e.coeff(0);
    if n >= 1 {
        cur[1] = 1.0;
        for (o, c) in out.iter_mut().zip(&cur) {
            *o += e.coeff(1) * c;
        }
    }
    for l in 1..n {
        let mut next = vec![0.0; n + 1];
        for j in 0..n {
            next[j + 1] += cur[j];
        }
        for j in 0..=n {
            next[j] -= l as f64 * prev[j];
        }
        for (o, c) in out.iter_mut().zip(&next) {
            *o += e.coeff(l + 1) * c;
        }
        prev = cur;
        cur = next;
    }
    out
}

/// `a_l = E[f(Z) He_l(Z)]/l!` for `l ≤ level` by Gauss–Hermite quadrature
/// with `quad_points` nodes.
pub fn hermite_coefficients<F: Fn(f64) -> f64>(
    f: F,
    level: usize,
    quad_points: usize,
) -> Result<HermiteExpansion> {
    if level > MAX_NUMERIC_LEVEL {
        return Err(Error::QuadratureUnstable(format!(
            "truncation level {level} exceeds the supported maximum {MAX_NUMERIC_LEVEL}"
        )));
    }
    if level == 0 {
        return Err(Error::InvalidInput("truncation level must be >= 1".into()));
    }
    if quad_points <= level {
        return Err(Error::InvalidInput(format!(
            "need more than {level} quadrature points, got {quad_points}"
        )));
    }
    let (x, w) = gauss_hermite_prob(quad_points);
    let mut acc = vec![0.0; level + 1];
    let mut energy = 0.0;
    for (&xi, &wi) in x.iter().zip(&w) {
        let fx = f(xi);
        if !fx.is_finite() {
            return Err(Error::InvalidInput(format!("f is not finite at {xi}")));
        }
        energy += wi * fx * fx;
        for (a, h) in acc.iter_mut().zip(hermite_all(level, xi)) {
            *a += wi * fx * h;
        }
    }
    for (l, a) in acc.iter_mut().enumerate() {
        *a /= factorial(l);
    }
    let tol = 1e-10 * energy.sqrt().max(1e-300);
    if acc[0].abs() > tol.max(1e-10) {
        return Err(Error::NotCentered(acc[0]));
    }
    HermiteExpansion::with_tolerance(acc, tol)
}
