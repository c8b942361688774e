//! Fixed rules and the adaptive Gauss–Kronrod driver shared by the
//! quadrature-heavy modules.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::{DMatrix, SymmetricEigen};

// Kronrod 15-point abscissae; odd indices are the Gauss 7-point nodes.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// Nodes and weights of the 15-point Kronrod rule mapped to `[a, b]`.
pub(crate) fn kronrod_nodes(a: f64, b: f64) -> [(f64, f64); 15] {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut out = [(0.0, 0.0); 15];
    for j in 0..7 {
        out[2 * j] = (c - h * XGK[j], h * WGK[j]);
        out[2 * j + 1] = (c + h * XGK[j], h * WGK[j]);
    }
    out[14] = (c, h * WGK[7]);
    out
}

/// Result of one 15-point panel.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Panel {
    pub a: f64,
    pub b: f64,
    pub value: f64,
    pub error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn rescale_error(err: f64, res_abs: f64, res_asc: f64) -> f64 {
    let mut e = err.abs();
    if res_asc != 0.0 && e != 0.0 {
        let scale = (200.0 * e / res_asc).powf(1.5);
        e = if scale < 1.0 { res_asc * scale } else { res_asc };
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        e = e.max(50.0 * f64::EPSILON * res_abs);
    }
    e
}

/// Gauss–Kronrod 7/15 on `[a, b]`. The integrand returns a value together
/// with an absolute error already present in that value (for nested
/// integrals); those inner errors are integrated with the Kronrod weights
/// and added to the panel error.
pub(crate) fn gk15<F>(f: &mut F, a: f64, b: f64) -> Panel
where
    F: FnMut(f64) -> (f64, f64),
{
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let ah = h.abs();
    let (fc, ec) = f(c);
    let mut res_g = fc * WG[3];
    let mut res_k = fc * WGK[7];
    let mut res_abs = fc.abs() * WGK[7];
    let mut inner = ec * WGK[7];
    let mut fv1 = [0.0; 7];
    let mut fv2 = [0.0; 7];
    for j in 0..7 {
        let x = h * XGK[j];
        let (f1, e1) = f(c - x);
        let (f2, e2) = f(c + x);
        fv1[j] = f1;
        fv2[j] = f2;
        res_k += WGK[j] * (f1 + f2);
        res_abs += WGK[j] * (f1.abs() + f2.abs());
        inner += WGK[j] * (e1 + e2);
        if j % 2 == 1 {
            res_g += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = res_k * 0.5;
    let mut res_asc = WGK[7] * (fc - mean).abs();
    for j in 0..7 {
        res_asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let err = rescale_error((res_k - res_g) * h, res_abs * ah, res_asc * ah);
    Panel {
        a,
        b,
        value: res_k * h,
        error: err + inner * ah,
    }
}

/// Outcome of an adaptive integration.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Adaptive {
    pub value: f64,
    pub error: f64,
    pub converged: bool,
}

/// Globally adaptive bisection over the panels delimited by `breaks`
/// (sorted, at least two entries). Stops when the summed error is below
/// `max(abs_tol, rel_tol·|value|)` or after `max_sub` bisections.
pub(crate) fn adaptive<F>(
    mut f: F,
    breaks: &[f64],
    abs_tol: f64,
    rel_tol: f64,
    max_sub: usize,
) -> Adaptive
where
    F: FnMut(f64) -> (f64, f64),
{
    let mut heap = BinaryHeap::new();
    for w in breaks.windows(2) {
        if w[1] > w[0] {
            heap.push(gk15(&mut f, w[0], w[1]));
        }
    }
    let mut frozen = (0.0, 0.0);
    let mut subs = 0;
    loop {
        let (value, error) = heap
            .iter()
            .fold(frozen, |(v, e), p| (v + p.value, e + p.error));
        let target = abs_tol.max(rel_tol * value.abs());
        if error <= target {
            return Adaptive {
                value,
                error,
                converged: true,
            };
        }
        if subs >= max_sub || heap.is_empty() {
            return Adaptive {
                value,
                error,
                converged: false,
            };
        }
        let worst = heap.pop().expect("nonempty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b || (worst.b - worst.a) < 1e-14 * mid.abs().max(1e-300) {
            frozen.0 += worst.value;
            frozen.1 += worst.error;
            continue;
        }
        heap.push(gk15(&mut f, worst.a, mid));
        heap.push(gk15(&mut f, mid, worst.b));
        subs += 1;
    }
}

/// Convenience wrapper for plain scalar integrands.
pub(crate) fn adaptive_scalar<F>(
    mut f: F,
    breaks: &[f64],
    abs_tol: f64,
    rel_tol: f64,
    max_sub: usize,
) -> Adaptive
where
    F: FnMut(f64) -> f64,
{
    adaptive(|x| (f(x), 0.0), breaks, abs_tol, rel_tol, max_sub)
}

/// `∫_{x0}^{x0+len} f` rewritten on `s ∈ [0, 1]` through `x = x0 + len·s^m`,
/// which flattens an algebraic endpoint singularity or cusp at `x0`.
/// `len` may be negative to grade toward the right end of an interval.
pub(crate) fn graded_toward<F>(
    mut f: F,
    x0: f64,
    len: f64,
    m: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_sub: usize,
) -> Adaptive
where
    F: FnMut(f64) -> (f64, f64),
{
    let scale = len.abs() * m;
    adaptive(
        |s: f64| {
            let jac = scale * s.powf(m - 1.0);
            let (v, e) = f(x0 + len * s.powf(m));
            (v * jac, e * jac)
        },
        &[0.0, 0.5, 1.0],
        abs_tol,
        rel_tol,
        max_sub,
    )
}

/// `∫_{x0}^∞ f` for `x0 > 0`. The half-line is mapped by `x = x0/s` onto
/// `(0, 1]` and integrated on dyadic levels accumulating at `s = 0`; the
/// loop stops once the geometrically extrapolated remainder is negligible.
/// Suited to algebraic decay `x^{-γ}` with `γ` not too close to 1.
pub(crate) fn semi_infinite<F>(mut f: F, x0: f64, abs_tol: f64, rel_tol: f64) -> Adaptive
where
    F: FnMut(f64) -> f64,
{
    assert!(x0 > 0.0);
    let mut g = |s: f64| {
        if s <= 0.0 {
            (0.0, 0.0)
        } else {
            let x = x0 / s;
            (f(x) * x0 / (s * s), 0.0)
        }
    };
    let mut total = 0.0;
    let mut err = 0.0;
    let mut hi = 1.0;
    let mut prev: Option<f64> = None;
    let mut converged = true;
    for _level in 0..2000 {
        let lo = 0.5 * hi;
        let p = gk15(&mut g, lo, hi);
        // refine inside the level if needed
        let level = if p.error > 0.25 * abs_tol.max(rel_tol * p.value.abs()) {
            let r = adaptive(&mut g, &[lo, hi], 0.25 * abs_tol, 0.25 * rel_tol, 200);
            converged &= r.converged;
            (r.value, r.error)
        } else {
            (p.value, p.error)
        };
        total += level.0;
        err += level.1;
        if let Some(pv) = prev {
            let ratio = if pv != 0.0 { (level.0 / pv).abs() } else { 0.0 };
            let tail = if ratio < 0.999 {
                level.0.abs() * ratio / (1.0 - ratio)
            } else {
                f64::INFINITY
            };
            if tail < 0.1 * abs_tol.max(rel_tol * total.abs()) && ratio < 0.95 {
                return Adaptive {
                    value: total,
                    error: err + tail,
                    converged,
                };
            }
        }
        prev = Some(level.0);
        hi = lo;
    }
    Adaptive {
        value: total,
        error: f64::INFINITY,
        converged: false,
    }
}

/// Orthonormal Hermite values `h_{n-1}(x), h_n(x)` with `h_k = He_k/√(k!)`.
fn orthonormal_hermite_pair(n: usize, x: f64) -> (f64, f64) {
    let (mut prev, mut cur) = (0.0, 1.0);
    for k in 0..n {
        let next = (x * cur - (k as f64).sqrt() * prev) / ((k + 1) as f64).sqrt();
        prev = cur;
        cur = next;
    }
    (prev, cur)
}

/// Gauss–Hermite rule for the standard normal density (probabilists'
/// weight). Nodes start from the Golub–Welsch eigenvalues and are polished
/// by Newton steps; weights come from `1/(n·h_{n-1}(x)²)`, which keeps the
/// tiny tail weights accurate to full relative precision.
pub fn gauss_hermite_prob(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for i in 1..n {
        let b = (i as f64).sqrt();
        jac[(i, i - 1)] = b;
        jac[(i - 1, i)] = b;
    }
    let eig = SymmetricEigen::new(jac);
    let mut x: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    x.sort_by(f64::total_cmp);
    let sn = (n as f64).sqrt();
    let mut w = vec![0.0; n];
    for (xi, wi) in x.iter_mut().zip(w.iter_mut()) {
        for _ in 0..3 {
            let (hm, h) = orthonormal_hermite_pair(n, *xi);
            *xi -= h / (sn * hm);
        }
        let (hm, _) = orthonormal_hermite_pair(n, *xi);
        *wi = 1.0 / (n as f64 * hm * hm);
    }
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let xs = 0.5 * (x[j] - x[i]);
        let ws = 0.5 * (w[i] + w[j]);
        x[i] = -xs;
        x[j] = xs;
        w[i] = ws;
        w[j] = ws;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    (x, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gk15_integrates_polynomials_exactly() {
        let p = gk15(&mut |x: f64| (x.powi(9) - 3.0 * x * x, 0.0), 0.0, 2.0);
        assert_relative_eq!(p.value, 102.4 - 8.0, max_relative = 1e-14);
    }

    #[test]
    fn adaptive_handles_endpoint_singularity_with_grading() {
        // ∫_0^1 x^{-0.9} dx = 10
        let r = graded_toward(
            |x: f64| (x.powf(-0.9), 0.0),
            0.0,
            1.0,
            10.0,
            1e-12,
            1e-12,
            100,
        );
        assert!(r.converged);
        assert_relative_eq!(r.value, 10.0, max_relative = 1e-10);
    }

    #[test]
    fn semi_infinite_slow_algebraic_tail() {
        // ∫_1^∞ x^{-1.2} dx = 5
        let r = semi_infinite(|x| x.powf(-1.2), 1.0, 1e-10, 1e-10);
        assert!(r.converged);
        assert_relative_eq!(r.value, 5.0, max_relative = 1e-8);
    }

    #[test]
    fn hermite_rule_moments() {
        let (x, w) = gauss_hermite_prob(20);
        let m = |k: i32| x.iter().zip(&w).map(|(x, w)| w * x.powi(k)).sum::<f64>();
        assert_relative_eq!(m(0), 1.0, epsilon = 1e-14);
        assert_relative_eq!(m(2), 1.0, epsilon = 1e-12);
        assert_relative_eq!(m(4), 3.0, epsilon = 1e-12);
        assert_relative_eq!(m(6), 15.0, epsilon = 1e-11);
        assert!(m(3).abs() < 1e-12);
    }
}
