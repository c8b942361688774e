//! Weakly singular double integrals
//! `∫∫ f(u) g(v) |v - u - a|^{2H-2} du dv` over `[0, ∞)²` and line integrals
//! `∫ ρ(a)^l da` of their `a`-profiles.
//!
//! The inner integral is desingularized by the substitution
//! `z = |v - c|^{2H-1}` around the singular point `c = u + a`, which turns
//! `|v - c|^{2H-2} dv` into a constant multiple of `dz`. The outer integrand
//! inherits cusps `|u - u₀|^{2H-1}` wherever the singular line crosses a
//! breakpoint of `g`; those are flattened by `u = u₀ + z^m` with
//! `m = 2/(2H-1)`. Everything else is globally adaptive Gauss–Kronrod 7/15.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fgn::HurstParam;
use crate::gauss::{self, kronrod_nodes, Adaptive};
use crate::kernels::Kernel;

/// Tolerances for the singular quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-9,
            abs_tol: 1e-12,
            max_subdivisions: 2000,
        }
    }
}

impl QuadConfig {
    pub fn new(rel_tol: f64, abs_tol: f64, max_subdivisions: usize) -> Result<Self> {
        if !(rel_tol > 0.0 && abs_tol > 0.0 && rel_tol.is_finite() && abs_tol.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "quadrature tolerances must be positive, got rel={rel_tol}, abs={abs_tol}"
            )));
        }
        if max_subdivisions == 0 {
            return Err(Error::InvalidInput("max_subdivisions must be >= 1".into()));
        }
        Ok(Self {
            rel_tol,
            abs_tol,
            max_subdivisions,
        })
    }

    /// Tolerances divided by `factor`, for quantities that feed a larger
    /// computation with its own error budget.
    pub fn tightened(&self, factor: f64) -> Self {
        Self {
            rel_tol: self.rel_tol / factor,
            abs_tol: self.abs_tol / factor,
            max_subdivisions: self.max_subdivisions,
        }
    }

    fn target(&self, value: f64) -> f64 {
        self.abs_tol.max(self.rel_tol * value.abs())
    }
}

/// A certified integral value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegralResult {
    pub value: f64,
    pub error_estimate: f64,
    pub truncation_bound: f64,
}

impl IntegralResult {
    pub fn exact(value: f64) -> Self {
        Self {
            value,
            error_estimate: 0.0,
            truncation_bound: 0.0,
        }
    }

    pub fn total_error(&self) -> f64 {
        self.error_estimate + self.truncation_bound
    }

    pub fn scaled(self, c: f64) -> Self {
        Self {
            value: self.value * c,
            error_estimate: self.error_estimate * c.abs(),
            truncation_bound: self.truncation_bound * c.abs(),
        }
    }

    fn certify(self, cfg: &QuadConfig) -> Result<Self> {
        let requested = cfg.target(self.value);
        if !(self.value.is_finite() && self.total_error() <= requested) {
            return Err(Error::ToleranceNotMet {
                achieved: self.total_error(),
                requested,
            });
        }
        Ok(self)
    }
}

fn sorted_dedup(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * a.abs().max(1.0));
    v
}

/// `∫_0^∞ t^k x(t) dt` by adaptive quadrature over the kernel's pieces.
pub fn kernel_moment<K: Kernel + ?Sized>(x: &K, k: u32) -> f64 {
    let env = x.envelope();
    let r = match x.support_end() {
        Some(e) => e,
        // t^k e^{-λt} tail is negligible well past k/λ
        None => env.radius_for(1e-18) + 2.0 * f64::from(k) / env.lambda,
    };
    if r <= 0.0 {
        return 0.0;
    }
    let mut breaks = vec![0.0];
    breaks.extend(x.breakpoints().into_iter().filter(|&b| b > 0.0 && b < r));
    breaks.push(r);
    let breaks = sorted_dedup(breaks);
    gauss::adaptive_scalar(|t| t.powi(k as i32) * x.value(t), &breaks, 1e-300, 1e-14, 4000)
        .value
}

/// Bound on `sup_u ∫ |g(v)| |v - c|^β dv`.
fn inner_sup_bound(g: &dyn Kernel, beta: f64) -> f64 {
    let env = g.envelope();
    let mass = match g.support_end() {
        Some(e) => env.c * e,
        None => env.c / env.lambda,
    };
    env.c * 2.0 / (beta + 1.0) + mass
}

fn l1_bound(f: &dyn Kernel) -> f64 {
    let env = f.envelope();
    match f.support_end() {
        Some(e) => env.c * e,
        None => env.c / env.lambda,
    }
}

/// `∫_lo^hi g(v) |v - c|^β dv` for `β ∈ (-1, 0)`, with `c` anywhere.
#[allow(clippy::too_many_arguments)]
pub(crate) fn singular_inner(
    g: &dyn Kernel,
    g_breaks: &[f64],
    lo: f64,
    hi: f64,
    c: f64,
    beta: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_sub: usize,
) -> Adaptive {
    if hi <= lo {
        return Adaptive {
            value: 0.0,
            error: 0.0,
            converged: true,
        };
    }
    let mut pts = Vec::with_capacity(g_breaks.len() + 3);
    pts.push(lo);
    pts.extend(g_breaks.iter().copied().filter(|&b| b > lo && b < hi));
    if c > lo && c < hi {
        pts.push(c);
    }
    pts.push(hi);
    // exact dedup only: c must stay a breakpoint however close it is to
    // another one, since the singular mass next to it is not negligible
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let env = g.envelope();
    let scale = (1.0 / env.lambda).min(1.0);
    let gamma = beta + 1.0;
    let m = 1.0 / gamma;
    let pieces = (pts.len() - 1) as f64;
    let (atol, rtol) = (abs_tol / pieces, rel_tol);

    let mut total = Adaptive {
        value: 0.0,
        error: 0.0,
        converged: true,
    };
    let mut add = |r: Adaptive| {
        total.value += r.value;
        total.error += r.error;
        total.converged &= r.converged;
    };
    let plain = |a: f64, b: f64| {
        gauss::adaptive_scalar(
            |v| g.value(v) * (v - c).abs().powf(beta),
            &[a, b],
            atol,
            rtol,
            max_sub,
        )
    };
    // ∫ over w = |v - c| ∈ [w0, w1] on one side, in the variable z = w^γ
    let desing = |w0: f64, w1: f64, side: f64| {
        let r = gauss::adaptive_scalar(
            |z| g.value(c + side * z.powf(m)),
            &[w0.powf(gamma), w1.powf(gamma)],
            atol * gamma,
            rtol,
            max_sub,
        );
        Adaptive {
            value: r.value / gamma,
            error: r.error / gamma,
            converged: r.converged,
        }
    };

    for w in pts.windows(2) {
        let (s0, s1) = (w[0], w[1]);
        let len = s1 - s0;
        let dl = if c <= s0 { s0 - c } else { f64::INFINITY };
        let dr = if c >= s1 { c - s1 } else { f64::INFINITY };
        if dl <= dr && dl < len.max(scale) {
            let near = len.min(dl + scale);
            add(desing(dl, dl + near, 1.0));
            if near < len {
                add(plain(s0 + near, s1));
            }
        } else if dr < dl && dr < len.max(scale) {
            let near = len.min(dr + scale);
            add(desing(dr, dr + near, -1.0));
            if near < len {
                add(plain(s0, s1 - near));
            }
        } else {
            add(plain(s0, s1));
        }
    }
    total
}

/// Shared driver for the full-quadrant (`upper_only = false`) and
/// upper-triangle (`v ≥ u`, `a = 0`) variants.
fn nested(
    f: &dyn Kernel,
    g: &dyn Kernel,
    a: f64,
    beta: f64,
    upper_only: bool,
    cfg: &QuadConfig,
) -> Result<IntegralResult> {
    let gamma = beta + 1.0;
    let budget = cfg.abs_tol / 20.0;
    let g_sup = inner_sup_bound(g, beta);
    let f_l1 = l1_bound(f);
    if f.envelope().c == 0.0 || g.envelope().c == 0.0 {
        return Ok(IntegralResult::exact(0.0));
    }

    // truncation radii from the envelopes
    let ru = f.radius(budget / g_sup.max(1e-300));
    let g_env = g.envelope();
    let rv = match g.support_end() {
        Some(e) => e,
        None => {
            let k = (2.0 / gamma + 1.0 / g_env.lambda) * f_l1;
            ((g_env.c * k / budget).ln() / g_env.lambda).max(0.0)
        }
    };
    let trunc_u = match f.support_end() {
        Some(_) => 0.0,
        None => f.envelope().tail_mass(ru) * g_sup,
    };
    let trunc_v = match g.support_end() {
        Some(_) => 0.0,
        None => g_env.at(rv) * (2.0 / gamma + 1.0 / g_env.lambda) * f_l1,
    };
    if ru <= 0.0 || rv <= 0.0 {
        return Ok(IntegralResult::exact(0.0));
    }

    let g_breaks: Vec<f64> = g.breakpoints().into_iter().filter(|&b| b < rv).collect();
    let mut cusps = vec![0.0 - if upper_only { 0.0 } else { a }];
    let g_end = g.support_end().map(|_| rv);
    for &b in g_breaks.iter().chain(g_end.iter()) {
        cusps.push(if upper_only { b } else { b - a });
    }
    let cusps = sorted_dedup(cusps);

    let mut breaks = vec![0.0, ru];
    breaks.extend(f.breakpoints().into_iter().filter(|&b| b > 0.0 && b < ru));
    breaks.extend(cusps.iter().copied().filter(|&u0| u0 > 0.0 && u0 < ru));
    let breaks = sorted_dedup(breaks);

    // the outer integrand may cancel, so the inner noise must sit well below
    // the outer relative target
    let inner_abs = 0.01 * cfg.abs_tol / f_l1.max(1e-300);
    let inner_rel = 0.01 * cfg.rel_tol;
    let max_sub = cfg.max_subdivisions;
    let mut inner_ok = true;

    let mut integrand = |u: f64| -> (f64, f64) {
        let fu = f.value(u);
        if fu == 0.0 {
            return (0.0, 0.0);
        }
        let (lo, c) = if upper_only { (u, u) } else { (0.0, u + a) };
        let r = singular_inner(g, &g_breaks, lo, rv, c, beta, inner_abs, inner_rel, max_sub);
        inner_ok &= r.converged;
        (fu * r.value, fu.abs() * r.error)
    };

    let m = 2.0 / gamma;
    let pieces = (breaks.len() - 1) as f64;
    let (oabs, orel) = (0.5 * cfg.abs_tol / pieces, 0.5 * cfg.rel_tol);
    let mut value = 0.0;
    let mut error = 0.0;
    let mut converged = true;

    let nearest_cusp = |x: f64, left: bool| -> f64 {
        // distance from x to the closest cusp on the given side (inclusive)
        cusps
            .iter()
            .filter(|&&u0| if left { u0 <= x } else { u0 >= x })
            .map(|&u0| (x - u0).abs())
            .fold(f64::INFINITY, f64::min)
    };

    for w in breaks.windows(2) {
        let (s0, s1) = (w[0], w[1]);
        let len = s1 - s0;
        let dl = nearest_cusp(s0, true);
        let dr = nearest_cusp(s1, false);
        let near_l = dl < len;
        let near_r = dr < len;
        let mut segs: Vec<(f64, f64, Option<(f64, f64)>)> = Vec::new();
        match (near_l, near_r) {
            (true, true) => {
                let mid = 0.5 * (s0 + s1);
                segs.push((s0, mid, Some((s0 - dl, 1.0))));
                segs.push((mid, s1, Some((s1 + dr, -1.0))));
            }
            (true, false) => segs.push((s0, s1, Some((s0 - dl, 1.0)))),
            (false, true) => segs.push((s0, s1, Some((s1 + dr, -1.0)))),
            (false, false) => segs.push((s0, s1, None)),
        }
        for (x0, x1, grade) in segs {
            let r = match grade {
                None => gauss::adaptive(&mut integrand, &[x0, x1], oabs, orel, max_sub),
                Some((u0, side)) => {
                    // u = u0 + side·z^m
                    let (z0, z1) = if side > 0.0 {
                        ((x0 - u0).powf(1.0 / m), (x1 - u0).powf(1.0 / m))
                    } else {
                        ((u0 - x1).powf(1.0 / m), (u0 - x0).powf(1.0 / m))
                    };
                    gauss::adaptive(
                        |z: f64| {
                            let jac = m * z.powf(m - 1.0);
                            let (v, e) = integrand(u0 + side * z.powf(m));
                            (v * jac, e * jac)
                        },
                        &[z0, z1],
                        oabs,
                        orel,
                        max_sub,
                    )
                }
            };
            value += r.value;
            error += r.error;
            converged &= r.converged;
        }
    }
    let out = IntegralResult {
        value,
        error_estimate: error,
        truncation_bound: trunc_u + trunc_v,
    };
    // sub-budget misses are tolerable when the summed error still fits
    let _ = (converged, inner_ok);
    out.certify(cfg)
}

/// `∫_{[0,∞)²} f(u) g(v) |v - u - a|^{2H-2} du dv`.
pub fn double_weighted_integral(
    f: &dyn Kernel,
    g: &dyn Kernel,
    a: f64,
    h: HurstParam,
    cfg: &QuadConfig,
) -> Result<IntegralResult> {
    if !a.is_finite() {
        return Err(Error::InvalidInput(format!("shift a must be finite, got {a}")));
    }
    nested(f, g, a, h.beta(), false, cfg)
}

/// `∫_0^∞ f(u) ∫_u^∞ g(v) (v - u)^β dv du`.
pub fn upper_triangle_integral(
    f: &dyn Kernel,
    g: &dyn Kernel,
    beta: f64,
    cfg: &QuadConfig,
) -> Result<IntegralResult> {
    nested(f, g, 0.0, beta, true, cfg)
}

/// Large-`|a|` behaviour of a line integrand:
/// `ρ(a) ≈ Σ_n coef[n]·|a|^{exponent - n}` separately for `a → ±∞`.
#[derive(Debug, Clone, PartialEq)]
pub enum Tail {
    /// Zero outside the core interval.
    Compact,
    Power {
        exponent: f64,
        right: Vec<f64>,
        left: Vec<f64>,
    },
}

/// A function of the shift `a` to be integrated in powers.
pub trait LineFunction: Sync {
    /// Value and absolute error at `a`.
    fn eval(&self, a: f64) -> Result<(f64, f64)>;

    /// Points where the function is not smooth.
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }

    /// Half-width of the interval holding all the structure; beyond it the
    /// function follows [`LineFunction::tail`].
    fn core_radius(&self) -> f64;

    fn tail(&self) -> Tail {
        Tail::Compact
    }
}

/// A closure that vanishes outside `[-radius, radius]`.
pub struct CompactLine<F> {
    pub func: F,
    pub radius: f64,
    pub breaks: Vec<f64>,
}

impl<F: Fn(f64) -> f64 + Sync> LineFunction for CompactLine<F> {
    fn eval(&self, a: f64) -> Result<(f64, f64)> {
        Ok((if a.abs() <= self.radius { (self.func)(a) } else { 0.0 }, 0.0))
    }
    fn breakpoints(&self) -> Vec<f64> {
        self.breaks.clone()
    }
    fn core_radius(&self) -> f64 {
        self.radius
    }
}

/// Terms kept in the large-shift expansion of [`RhoBar`]; the leading
/// coefficient vanishes when a kernel integrates to zero.
const TAIL_TERMS: usize = 6;

/// `ρ̄(a) = ∫∫ f(u) g(v) |v - u - a|^{2H-2} du dv` as a function of `a`.
pub struct RhoBar<'a> {
    f: &'a dyn Kernel,
    g: &'a dyn Kernel,
    h: HurstParam,
    cfg: QuadConfig,
}

impl<'a> RhoBar<'a> {
    pub fn new(f: &'a dyn Kernel, g: &'a dyn Kernel, h: HurstParam, cfg: QuadConfig) -> Self {
        Self { f, g, h, cfg }
    }

    /// `E_n = ∫∫ f(u) g(v) (v - u)^n du dv` for `n < TAIL_TERMS`.
    fn cross_moments(&self) -> [f64; TAIL_TERMS] {
        let mf: Vec<f64> = (0..TAIL_TERMS as u32).map(|k| self.f.moment(k)).collect();
        let mg: Vec<f64> = (0..TAIL_TERMS as u32).map(|k| self.g.moment(k)).collect();
        let binom = |n: usize, k: usize| -> f64 {
            (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
        };
        let mut e = [0.0; TAIL_TERMS];
        for (n, slot) in e.iter_mut().enumerate() {
            *slot = (0..=n)
                .map(|k| {
                    let sign = if (n - k) % 2 == 0 { 1.0 } else { -1.0 };
                    binom(n, k) * mg[k] * sign * mf[n - k]
                })
                .sum();
        }
        e
    }
}

impl LineFunction for RhoBar<'_> {
    fn eval(&self, a: f64) -> Result<(f64, f64)> {
        let r = double_weighted_integral(self.f, self.g, a, self.h, &self.cfg)?;
        Ok((r.value, r.total_error()))
    }

    fn breakpoints(&self) -> Vec<f64> {
        let ends = |k: &dyn Kernel| -> Vec<f64> {
            let mut b = vec![0.0];
            let kb = k.breakpoints();
            if kb.len() <= 8 {
                b.extend(kb);
            } else if let Some(e) = k.support_end() {
                b.push(e);
            }
            b
        };
        let bf = ends(self.f);
        let bg = ends(self.g);
        let mut out = Vec::new();
        for &x in &bg {
            for &y in &bf {
                out.push(x - y);
            }
        }
        sorted_dedup(out)
    }

    fn core_radius(&self) -> f64 {
        let r = |k: &dyn Kernel| k.radius(1e-6 * k.envelope().c.max(1e-300));
        (r(self.f) + r(self.g)).max(1e-3)
    }

    fn tail(&self) -> Tail {
        let beta = self.h.beta();
        let e = self.cross_moments();
        // binom(β, n)
        let mut gb = [1.0; TAIL_TERMS];
        for n in 1..TAIL_TERMS {
            gb[n] = gb[n - 1] * (beta - (n - 1) as f64) / n as f64;
        }
        let right: Vec<f64> = (0..TAIL_TERMS)
            .map(|n| {
                let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
                gb[n] * e[n] * sign
            })
            .collect();
        let left: Vec<f64> = (0..TAIL_TERMS).map(|n| gb[n] * e[n]).collect();
        Tail::Power {
            exponent: beta,
            right,
            left,
        }
    }
}

/// Which power of the line integrand to integrate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Power {
    Plain(u32),
    Abs(u32),
}

impl Power {
    fn order(self) -> u32 {
        match self {
            Power::Plain(l) | Power::Abs(l) => l,
        }
    }

    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Power::Plain(l) => x.powi(l as i32),
            Power::Abs(l) => x.abs().powi(l as i32),
        }
    }

    fn is_abs(self) -> bool {
        matches!(self, Power::Abs(_))
    }

    /// |d/dx x^l| · err
    #[inline]
    fn propagate(self, x: f64, err: f64) -> f64 {
        let l = self.order();
        f64::from(l) * x.abs().powi(l as i32 - 1) * err
    }
}

/// Integration domain in `a`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Full,
    HalfLine,
}

#[derive(Debug, Clone, Copy)]
enum PanelMap {
    Linear,
    /// `a = side·r0·e^y`
    Log { r0: f64, side: f64 },
}

#[derive(Debug, Clone, Copy)]
struct LinePanel {
    lo: f64,
    hi: f64,
    map: PanelMap,
}

impl LinePanel {
    #[inline]
    fn point(&self, x: f64) -> (f64, f64) {
        match self.map {
            PanelMap::Linear => (x, 1.0),
            PanelMap::Log { r0, side } => {
                let a = r0 * x.exp();
                (side * a, a)
            }
        }
    }
}

/// Integrates several powers of one line function, sharing every function
/// evaluation between them.
pub fn line_integral_powers(
    rho: &dyn LineFunction,
    powers: &[Power],
    domain: Domain,
    cfg: &QuadConfig,
) -> Result<Vec<IntegralResult>> {
    if powers.is_empty() {
        return Ok(Vec::new());
    }
    if powers.iter().any(|p| p.order() == 0) {
        return Err(Error::InvalidInput("powers must be >= 1".into()));
    }
    let r0 = rho.core_radius();
    let tail = rho.tail();
    let lo = match domain {
        Domain::Full => -r0,
        Domain::HalfLine => 0.0,
    };
    let far: f64 = 50.0;
    let mut breaks = vec![lo, r0];
    breaks.extend(rho.breakpoints().into_iter().filter(|&b| b > lo && b < r0));
    // the correlation-type functions are least smooth at the origin
    if lo < 0.0 {
        breaks.push(0.0);
    }
    let breaks = sorted_dedup(breaks);
    let mut panels: Vec<LinePanel> = breaks
        .windows(2)
        .map(|w| LinePanel {
            lo: w[0],
            hi: w[1],
            map: PanelMap::Linear,
        })
        .collect();
    let log_sides: Vec<f64> = match (&tail, domain) {
        (Tail::Compact, _) => vec![],
        (_, Domain::Full) => vec![1.0, -1.0],
        (_, Domain::HalfLine) => vec![1.0],
    };
    let y_max = far.ln();
    let n_log = y_max.ceil() as usize;
    for &side in &log_sides {
        for k in 0..n_log {
            panels.push(LinePanel {
                lo: y_max * k as f64 / n_log as f64,
                hi: y_max * (k + 1) as f64 / n_log as f64,
                map: PanelMap::Log { r0, side },
            });
        }
    }

    // cache keyed by the panel-local abscissa and the panel's map
    let key = |p: &LinePanel, x: f64| -> (u64, u64) {
        let tag = match p.map {
            PanelMap::Linear => 0u64,
            PanelMap::Log { side, .. } => {
                if side > 0.0 {
                    1
                } else {
                    2
                }
            }
        };
        (tag, x.to_bits())
    };
    let mut cache: HashMap<(u64, u64), (f64, f64)> = HashMap::new();
    let evaluate = |panels: &[LinePanel], cache: &mut HashMap<(u64, u64), (f64, f64)>| -> Result<()> {
        let mut todo: Vec<((u64, u64), f64)> = Vec::new();
        for p in panels {
            for (x, _) in kronrod_nodes(p.lo, p.hi) {
                let k = key(p, x);
                if !cache.contains_key(&k) {
                    todo.push((k, p.point(x).0));
                }
            }
        }
        todo.sort_by(|a, b| a.0.cmp(&b.0));
        todo.dedup_by(|a, b| a.0 == b.0);
        let vals: Vec<Result<(f64, f64)>> = todo.par_iter().map(|&(_, a)| rho.eval(a)).collect();
        for ((k, _), v) in todo.into_iter().zip(vals) {
            cache.insert(k, v?);
        }
        Ok(())
    };

    let panel_result = |p: &LinePanel, pw: Power, cache: &HashMap<(u64, u64), (f64, f64)>| {
        gauss::gk15(
            &mut |x: f64| {
                let (v, e) = cache[&key(p, x)];
                let (_, jac) = p.point(x);
                (pw.apply(v) * jac, pw.propagate(v, e) * jac)
            },
            p.lo,
            p.hi,
        )
    };

    let max_panels = cfg.max_subdivisions.max(panels.len() + 1);
    loop {
        evaluate(&panels, &mut cache)?;
        let results: Vec<Vec<gauss::Panel>> = panels
            .iter()
            .map(|p| powers.iter().map(|&pw| panel_result(p, pw, &cache)).collect())
            .collect();
        let mut totals = vec![(0.0, 0.0); powers.len()];
        for r in &results {
            for (t, pr) in totals.iter_mut().zip(r) {
                t.0 += pr.value;
                t.1 += pr.error;
            }
        }
        let targets: Vec<f64> = totals.iter().map(|t| 0.5 * cfg.target(t.0)).collect();
        if totals.iter().zip(&targets).all(|(t, &tg)| t.1 <= tg) {
            let mut out = Vec::with_capacity(powers.len());
            for (i, &pw) in powers.iter().enumerate() {
                let (tv, te, tb) = tail_contribution(rho, &tail, pw, r0 * far, domain, cfg)?;
                let res = IntegralResult {
                    value: totals[i].0 + tv,
                    error_estimate: totals[i].1 + te,
                    truncation_bound: tb,
                };
                out.push(res.certify(cfg)?);
            }
            return Ok(out);
        }
        if panels.len() >= max_panels {
            let worst = totals
                .iter()
                .zip(&targets)
                .map(|(t, &tg)| (t.1, 2.0 * tg))
                .fold((0.0, 0.0), |acc, x| if x.0 > acc.0 { x } else { acc });
            return Err(Error::ToleranceNotMet {
                achieved: worst.0,
                requested: worst.1,
            });
        }
        let n = panels.len() as f64;
        let mut scored: Vec<(f64, usize)> = results
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let s = r
                    .iter()
                    .zip(&targets)
                    .map(|(pr, &tg)| pr.error * n / tg.max(1e-300))
                    .fold(0.0, f64::max);
                (s, i)
            })
            .filter(|&(s, _)| s > 1.0)
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        scored.truncate(32);
        if scored.is_empty() {
            // errors spread evenly but above target: split the worst panel
            let (i, _) = results
                .iter()
                .enumerate()
                .map(|(i, r)| (i, r.iter().map(|p| p.error).fold(0.0, f64::max)))
                .fold((0, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            scored.push((0.0, i));
        }
        let mut split: Vec<usize> = scored.into_iter().map(|(_, i)| i).collect();
        split.sort_unstable();
        let mut next = Vec::with_capacity(panels.len() + split.len());
        let mut it = split.iter().peekable();
        for (i, p) in panels.iter().enumerate() {
            if it.peek() == Some(&&i) {
                it.next();
                let mid = 0.5 * (p.lo + p.hi);
                next.push(LinePanel { hi: mid, ..*p });
                next.push(LinePanel { lo: mid, ..*p });
            } else {
                next.push(*p);
            }
        }
        panels = next;
    }
}

/// Contribution of `|a| > a_far` from the asymptotic series, with an error
/// estimate (series truncation plus the mismatch against the exact function
/// at `a_far`).
fn tail_contribution(
    rho: &dyn LineFunction,
    tail: &Tail,
    pw: Power,
    a_far: f64,
    domain: Domain,
    cfg: &QuadConfig,
) -> Result<(f64, f64, f64)> {
    let Tail::Power {
        exponent,
        right,
        left,
    } = tail
    else {
        return Ok((0.0, 0.0, 0.0));
    };
    let sides: Vec<(&Vec<f64>, f64)> = match domain {
        Domain::Full => vec![(right, 1.0), (left, -1.0)],
        Domain::HalfLine => vec![(right, 1.0)],
    };
    let l = f64::from(pw.order());
    let mut value = 0.0;
    let mut err = 0.0;
    let mut bound = 0.0;
    for (coef, side) in sides {
        let lead = coef.iter().position(|&c| c != 0.0);
        let Some(lead) = lead else { continue };
        let decay = l * (exponent - lead as f64);
        if decay >= -1.0 {
            return Err(Error::Validation(format!(
                "line integrand decays like |a|^{decay:.4}, so its integral diverges"
            )));
        }
        let series = |a: f64, terms: usize| -> f64 {
            coef.iter()
                .take(terms)
                .enumerate()
                .map(|(n, &c)| c * a.powf(exponent - n as f64))
                .sum()
        };
        let s_far = series(a_far, coef.len());
        // |·| only flips a constant sign once the leading term dominates
        if pw.is_abs() && series_changes_sign(&series, a_far, coef.len()) {
            return Err(Error::ToleranceNotMet {
                achieved: f64::INFINITY,
                requested: cfg.abs_tol,
            });
        }
        let sign = if pw.is_abs() && s_far < 0.0 && pw.order() % 2 == 1 {
            -1.0
        } else {
            1.0
        };
        let full = sign * series_power_integral(&coef[..], *exponent, pw.order(), a_far);
        let short = sign * series_power_integral(&coef[..coef.len() - 1], *exponent, pw.order(), a_far);
        let (exact, exact_err) = rho.eval(side * a_far)?;
        let mismatch = if s_far != 0.0 {
            ((exact - s_far).abs() + exact_err) / s_far.abs()
        } else {
            0.0
        };
        value += full;
        // the power series is integrated exactly; only rounding remains
        err += 1e-14 * full.abs();
        bound += (full - short).abs() + l * mismatch * full.abs();
    }
    Ok((value, err, bound))
}

/// `∫_A^∞ (Σ_n c_n a^{e-n})^l da`, term by term after expanding the power.
fn series_power_integral(coef: &[f64], exponent: f64, l: u32, a_far: f64) -> f64 {
    let mut prod = vec![1.0];
    for _ in 0..l {
        let mut next = vec![0.0; prod.len() + coef.len() - 1];
        for (i, &p) in prod.iter().enumerate() {
            for (j, &c) in coef.iter().enumerate() {
                next[i + j] += p * c;
            }
        }
        prod = next;
    }
    let le = f64::from(l) * exponent;
    prod.iter()
        .enumerate()
        .filter(|(_, &d)| d != 0.0)
        .map(|(k, &d)| {
            let p = le - k as f64 + 1.0;
            -d * a_far.powf(p) / p
        })
        .sum()
}

/// Whether the truncated series has a zero beyond `a_far`, probed on a
/// geometric grid out to where the leading term dominates by far.
fn series_changes_sign(series: &dyn Fn(f64, usize) -> f64, a_far: f64, terms: usize) -> bool {
    let s0 = series(a_far, terms).signum();
    (1..=40).any(|k| series(a_far * 1.5f64.powi(k), terms).signum() != s0)
}

/// `∫ ρ(a)^l da` over the real line.
pub fn line_integral_power(
    rho: &dyn LineFunction,
    l: u32,
    cfg: &QuadConfig,
) -> Result<IntegralResult> {
    if l == 0 {
        return Err(Error::InvalidInput("power l must be >= 1".into()));
    }
    line_integral_powers(rho, &[Power::Plain(l)], Domain::Full, cfg).map(|mut v| v.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{DecayEnvelope, KernelSpec};
    use approx::assert_relative_eq;
    use statrs::function::gamma::gamma;

    fn h(v: f64) -> HurstParam {
        HurstParam::new(v).unwrap()
    }

    fn indicator() -> KernelSpec {
        KernelSpec::tabulated(vec![1.0, 1.0], 1.0, DecayEnvelope::new(3.0, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn indicator_kernels_match_closed_form() {
        for &hv in &[0.55, 0.6, 0.65, 0.7, 0.9] {
            let k = indicator();
            let r = double_weighted_integral(&k, &k, 0.0, h(hv), &QuadConfig::default()).unwrap();
            let exact = 1.0 / (hv * (2.0 * hv - 1.0));
            assert_relative_eq!(r.value, exact, max_relative = 1e-9);
        }
    }

    #[test]
    fn shifted_indicator_closed_form() {
        // ∫_0^1∫_0^1 |v-u-a|^β for a = 2: ∫_0^1∫_0^1 (u + 2 - v)^β
        let hv = 0.7;
        let b = 2.0 * hv - 2.0;
        let k = indicator();
        let r = double_weighted_integral(&k, &k, 2.0, h(hv), &QuadConfig::default()).unwrap();
        let p = |x: f64| x.powf(b + 2.0) / ((b + 1.0) * (b + 2.0));
        let exact = p(3.0) - 2.0 * p(2.0) + p(1.0);
        assert_relative_eq!(r.value, exact, max_relative = 1e-9);
    }

    #[test]
    fn fou_stationary_variance() {
        for &theta in &[0.5, 1.0, 2.0] {
            for &hv in &[0.6, 0.7] {
                let k = KernelSpec::exponential(1.0, theta).unwrap();
                let r =
                    double_weighted_integral(&k, &k, 0.0, h(hv), &QuadConfig::default()).unwrap();
                let exact = theta.powf(-2.0 * hv) * hv * gamma(2.0 * hv);
                assert_relative_eq!(
                    r.value * hv * (2.0 * hv - 1.0),
                    exact,
                    max_relative = 1e-8
                );
            }
        }
    }

    #[test]
    fn swap_and_negate_symmetry() {
        let f = KernelSpec::car2_first(-1.0, -2.0).unwrap();
        let g = KernelSpec::exponential(0.7, 0.4).unwrap();
        let cfg = QuadConfig::default();
        for &a in &[-3.0, -0.5, 0.0, 0.25, 4.0] {
            let x = double_weighted_integral(&f, &g, a, h(0.65), &cfg).unwrap();
            let y = double_weighted_integral(&g, &f, -a, h(0.65), &cfg).unwrap();
            assert_relative_eq!(x.value, y.value, max_relative = 1e-9);
        }
    }

    #[test]
    fn box_line_integral() {
        let c = 0.7;
        let rho = CompactLine {
            func: |_a: f64| c,
            radius: 1.0,
            breaks: vec![-1.0, 1.0],
        };
        for l in 1..5 {
            let r = line_integral_power(&rho, l, &QuadConfig::default()).unwrap();
            assert_relative_eq!(r.value, 2.0 * c.powi(l as i32), max_relative = 1e-12);
        }
    }

    #[test]
    fn even_powers_are_nonnegative() {
        let rho = CompactLine {
            func: |a: f64| (3.0 * a).sin(),
            radius: 2.0,
            breaks: vec![],
        };
        for l in [2, 4, 6] {
            let r = line_integral_power(&rho, l, &QuadConfig::default()).unwrap();
            assert!(r.value >= 0.0);
        }
    }

    #[test]
    fn tolerance_not_met_is_reported() {
        let k = KernelSpec::exponential(1.0, 1.0).unwrap();
        let cfg = QuadConfig::new(1e-15, 1e-300, 1).unwrap();
        assert!(matches!(
            double_weighted_integral(&k, &k, 0.3, h(0.6), &cfg),
            Err(Error::ToleranceNotMet { .. })
        ));
    }

    #[test]
    fn refinement_is_consistent() {
        let f = KernelSpec::car2_second(-0.5, -1.5).unwrap();
        let g = KernelSpec::exponential(1.0, 0.8).unwrap();
        let cfg = QuadConfig::new(1e-6, 1e-9, 2000).unwrap();
        let a = double_weighted_integral(&f, &g, 0.8, h(0.6), &cfg).unwrap();
        let fine = QuadConfig::new(5e-7, 1e-9, 2000).unwrap();
        let b = double_weighted_integral(&f, &g, 0.8, h(0.6), &fine).unwrap();
        assert!((a.value - b.value).abs() <= a.total_error());
    }

    #[test]
    fn tail_series_matches_far_values() {
        let f = KernelSpec::car2_first(-1.0, -2.0).unwrap();
        let g = KernelSpec::car2_second(-1.0, -2.0).unwrap();
        let cfg = QuadConfig::new(1e-10, 1e-18, 4000).unwrap();
        let rho = RhoBar::new(&f, &g, h(0.6), cfg);
        let Tail::Power { exponent, right, left } = rho.tail() else {
            panic!()
        };
        for (a, coef) in [(200.0, &right), (-200.0, &left)] {
            let s: f64 = coef
                .iter()
                .enumerate()
                .map(|(n, c)| c * f64::abs(a).powf(exponent - n as f64))
                .sum();
            let (v, _) = rho.eval(a).unwrap();
            assert_relative_eq!(v, s, max_relative = 1e-8);
        }
    }
}
