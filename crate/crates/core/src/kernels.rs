//! Volterra kernels `x: [0, ∞) → ℝ`, their decay envelopes, and the
//! integrability checks required before any limit theorem applies.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fgn::HurstParam;
use crate::quadrature::{self, QuadConfig, RhoBar};

/// `|x(t)| ≤ c·e^{-λt}` for all `t ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayEnvelope {
    pub c: f64,
    pub lambda: f64,
}

impl DecayEnvelope {
    pub fn new(c: f64, lambda: f64) -> Result<Self> {
        if !(c.is_finite() && c >= 0.0) {
            return Err(Error::InvalidInput(format!("envelope c must be >= 0, got {c}")));
        }
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::InvalidInput(format!(
                "envelope lambda must be > 0, got {lambda}"
            )));
        }
        Ok(Self { c, lambda })
    }

    #[inline]
    pub fn at(&self, t: f64) -> f64 {
        self.c * (-self.lambda * t).exp()
    }

    /// `∫_r^∞ c e^{-λt} dt`.
    #[inline]
    pub fn tail_mass(&self, r: f64) -> f64 {
        self.at(r) / self.lambda
    }

    /// Smallest `r ≥ 0` with `tail_mass(r) ≤ eps`.
    pub fn radius_for(&self, eps: f64) -> f64 {
        if self.c == 0.0 {
            return 0.0;
        }
        ((self.c / (self.lambda * eps)).ln() / self.lambda).max(0.0)
    }
}

/// Anything the singular quadrature can integrate against: a function on
/// `[0, ∞)` that is smooth between its breakpoints and exponentially
/// dominated.
pub trait Kernel: Sync {
    /// Value at `t ≥ 0` (callers guarantee the sign of `t`).
    fn value(&self, t: f64) -> f64;

    /// Points in `(0, ∞)` where the function is not smooth, sorted.
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }

    fn envelope(&self) -> DecayEnvelope;

    /// End of the support when it is compact.
    fn support_end(&self) -> Option<f64> {
        None
    }

    /// Integration radius beyond which the remaining mass is below `eps`.
    fn radius(&self, eps: f64) -> f64 {
        match self.support_end() {
            Some(end) => end,
            None => self.envelope().radius_for(eps),
        }
    }

    /// `∫_0^∞ t^k x(t) dt`.
    fn moment(&self, k: u32) -> f64 {
        quadrature::kernel_moment(self, k)
    }
}

/// Closed-form and tabulated kernel families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", content = "params", rename_all = "snake_case")]
pub enum KernelKind {
    /// `σ e^{-θt}` (fractional Ornstein–Uhlenbeck).
    Exponential { sigma: f64, theta: f64 },
    /// `(e^{pt} - e^{qt})/(p - q)`, position of the CAR(2) solution.
    Car2First { p: f64, q: f64 },
    /// `(p e^{pt} - q e^{qt})/(p - q)`, velocity of the CAR(2) solution.
    Car2Second { p: f64, q: f64 },
    /// Samples at `t_k = k·dt`, linearly interpolated, zero beyond the last
    /// sample.
    Tabulated { samples: Vec<f64>, dt: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct KernelRepr {
    #[serde(flatten)]
    kind: KernelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    envelope: Option<DecayEnvelope>,
}

/// A validated kernel with its decay envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelRepr", into = "KernelRepr")]
pub struct KernelSpec {
    kind: KernelKind,
    envelope: DecayEnvelope,
}

impl TryFrom<KernelRepr> for KernelSpec {
    type Error = Error;
    fn try_from(r: KernelRepr) -> Result<Self> {
        match r.kind {
            KernelKind::Exponential { sigma, theta } => Self::exponential(sigma, theta),
            KernelKind::Car2First { p, q } => Self::car2_first(p, q),
            KernelKind::Car2Second { p, q } => Self::car2_second(p, q),
            KernelKind::Tabulated { samples, dt } => {
                let env = r.envelope.ok_or_else(|| {
                    Error::InvalidInput("tabulated kernels need an explicit envelope".into())
                })?;
                Self::tabulated(samples, dt, env)
            }
        }
    }
}

impl From<KernelSpec> for KernelRepr {
    fn from(k: KernelSpec) -> Self {
        let envelope = matches!(k.kind, KernelKind::Tabulated { .. }).then_some(k.envelope);
        KernelRepr {
            kind: k.kind,
            envelope,
        }
    }
}

fn check_car2_roots(p: f64, q: f64) -> Result<()> {
    if !(p.is_finite() && q.is_finite() && p < 0.0 && q < 0.0 && p != q) {
        return Err(Error::InadmissibleParams(format!(
            "CAR(2) kernels need distinct negative roots, got p={p}, q={q}"
        )));
    }
    Ok(())
}

impl KernelSpec {
    pub fn exponential(sigma: f64, theta: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0 && theta.is_finite() && theta > 0.0) {
            return Err(Error::InvalidInput(format!(
                "exponential kernel needs sigma > 0 and theta > 0, got ({sigma}, {theta})"
            )));
        }
        Ok(Self {
            kind: KernelKind::Exponential { sigma, theta },
            envelope: DecayEnvelope::new(sigma, theta)?,
        })
    }

    pub fn car2_first(p: f64, q: f64) -> Result<Self> {
        check_car2_roots(p, q)?;
        let slow = p.max(q);
        Ok(Self {
            kind: KernelKind::Car2First { p, q },
            envelope: DecayEnvelope::new(1.0 / (p - q).abs(), -slow)?,
        })
    }

    pub fn car2_second(p: f64, q: f64) -> Result<Self> {
        check_car2_roots(p, q)?;
        let slow = p.max(q);
        Ok(Self {
            kind: KernelKind::Car2Second { p, q },
            envelope: DecayEnvelope::new((p.abs() + q.abs()) / (p - q).abs(), -slow)?,
        })
    }

    pub fn tabulated(samples: Vec<f64>, dt: f64, envelope: DecayEnvelope) -> Result<Self> {
        if samples.is_empty() || samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "tabulated kernel needs finite samples".into(),
            ));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidInput(format!("tabulated dt must be > 0, got {dt}")));
        }
        DecayEnvelope::new(envelope.c, envelope.lambda)?;
        Ok(Self {
            kind: KernelKind::Tabulated { samples, dt },
            envelope,
        })
    }

    /// The same kernel multiplied by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(Error::InvalidInput("scale factor must be > 0".into()));
        }
        let samples = |s: &[f64]| s.iter().map(|v| v * factor).collect::<Vec<_>>();
        let env = DecayEnvelope::new(self.envelope.c * factor, self.envelope.lambda)?;
        match &self.kind {
            KernelKind::Exponential { sigma, theta } => Self::exponential(sigma * factor, *theta),
            KernelKind::Tabulated { samples: s, dt } => Self::tabulated(samples(s), *dt, env),
            KernelKind::Car2First { .. } | KernelKind::Car2Second { .. } => Err(
                Error::InvalidInput("CAR(2) kernels have a fixed amplitude".into()),
            ),
        }
    }

    pub fn kind(&self) -> &KernelKind {
        &self.kind
    }

    /// Terms `(w, r)` with `x(t) = Σ w e^{rt}` for the analytic variants.
    pub fn exp_terms(&self) -> Option<Vec<(f64, f64)>> {
        match self.kind {
            KernelKind::Exponential { sigma, theta } => Some(vec![(sigma, -theta)]),
            KernelKind::Car2First { p, q } => Some(vec![(1.0 / (p - q), p), (-1.0 / (p - q), q)]),
            KernelKind::Car2Second { p, q } => {
                Some(vec![(p / (p - q), p), (-q / (p - q), q)])
            }
            KernelKind::Tabulated { .. } => None,
        }
    }

    /// Samples the kernel against its envelope and reports the first
    /// violation.
    pub fn check_envelope(&self) -> Result<()> {
        let env = self.envelope;
        let horizon = self.radius(1e-14).max(1.0);
        let mut points: Vec<f64> = (0..=1000).map(|i| horizon * i as f64 / 1000.0).collect();
        points.extend(self.breakpoints());
        for t in points {
            let v = self.value(t).abs();
            let bound = env.at(t);
            if v > bound * (1.0 + 1e-12) + 1e-300 {
                return Err(Error::EnvelopeViolation { t, value: v, bound });
            }
        }
        Ok(())
    }

    pub fn is_identically_zero(&self) -> bool {
        match &self.kind {
            KernelKind::Tabulated { samples, .. } => samples.iter().all(|&v| v == 0.0),
            _ => false,
        }
    }
}

impl Kernel for KernelSpec {
    fn value(&self, t: f64) -> f64 {
        match &self.kind {
            KernelKind::Exponential { sigma, theta } => sigma * (-theta * t).exp(),
            KernelKind::Car2First { p, q } => ((p * t).exp() - (q * t).exp()) / (p - q),
            KernelKind::Car2Second { p, q } => (p * (p * t).exp() - q * (q * t).exp()) / (p - q),
            KernelKind::Tabulated { samples, dt } => {
                let x = t / dt;
                let last = samples.len() - 1;
                if x > last as f64 {
                    return 0.0;
                }
                let k = (x.floor() as usize).min(last);
                if k == last {
                    return samples[last];
                }
                let frac = x - k as f64;
                samples[k] + frac * (samples[k + 1] - samples[k])
            }
        }
    }

    fn breakpoints(&self) -> Vec<f64> {
        match &self.kind {
            KernelKind::Tabulated { samples, dt } => {
                (1..samples.len()).map(|k| k as f64 * dt).collect()
            }
            _ => Vec::new(),
        }
    }

    fn envelope(&self) -> DecayEnvelope {
        self.envelope
    }

    fn support_end(&self) -> Option<f64> {
        match &self.kind {
            KernelKind::Tabulated { samples, dt } => Some((samples.len() - 1) as f64 * dt),
            _ => None,
        }
    }

    fn moment(&self, k: u32) -> f64 {
        match self.exp_terms() {
            Some(terms) => {
                let fact: f64 = (1..=k).map(f64::from).product();
                terms
                    .iter()
                    .map(|&(w, r)| w * fact / (-r).powi(k as i32 + 1))
                    .sum()
            }
            None => quadrature::kernel_moment(self, k),
        }
    }
}

/// `|x|`, used by the absolute-integrability conditions.
pub struct AbsKernel<'a>(pub &'a dyn Kernel);

impl Kernel for AbsKernel<'_> {
    fn value(&self, t: f64) -> f64 {
        self.0.value(t).abs()
    }
    fn breakpoints(&self) -> Vec<f64> {
        self.0.breakpoints()
    }
    fn envelope(&self) -> DecayEnvelope {
        self.0.envelope()
    }
    fn support_end(&self) -> Option<f64> {
        self.0.support_end()
    }
}

/// `x·1_{[0, end]}`.
pub struct Truncated<'a> {
    pub inner: &'a dyn Kernel,
    pub end: f64,
}

impl Kernel for Truncated<'_> {
    fn value(&self, t: f64) -> f64 {
        if t <= self.end {
            self.inner.value(t)
        } else {
            0.0
        }
    }
    fn breakpoints(&self) -> Vec<f64> {
        let mut b: Vec<f64> = self
            .inner
            .breakpoints()
            .into_iter()
            .filter(|&t| t < self.end)
            .collect();
        b.push(self.end);
        b
    }
    fn envelope(&self) -> DecayEnvelope {
        self.inner.envelope()
    }
    fn support_end(&self) -> Option<f64> {
        Some(self.inner.support_end().map_or(self.end, |e| e.min(self.end)))
    }
}

/// `|x(t)|·max(t, 1)`, the weight of the kernel integrability check.
struct RampWeighted<'a>(&'a dyn Kernel);

impl Kernel for RampWeighted<'_> {
    fn value(&self, t: f64) -> f64 {
        self.0.value(t).abs() * t.max(1.0)
    }
    fn breakpoints(&self) -> Vec<f64> {
        let mut b = self.0.breakpoints();
        b.push(1.0);
        b.sort_by(f64::total_cmp);
        b.dedup();
        b
    }
    fn envelope(&self) -> DecayEnvelope {
        // t·e^{-λt} ≤ (2/(eλ))·e^{-λt/2}
        let env = self.0.envelope();
        let lam = 0.5 * env.lambda;
        DecayEnvelope {
            c: env.c * (2.0 / (std::f64::consts::E * env.lambda)).max(1.0),
            lambda: lam,
        }
    }
    fn support_end(&self) -> Option<f64> {
        self.0.support_end()
    }
}

/// Evaluates the kernel at `t ≥ 0`.
pub fn eval_kernel(spec: &KernelSpec, t: f64) -> Result<f64> {
    if t < 0.0 || t.is_nan() {
        return Err(Error::NegativeTime(t));
    }
    Ok(spec.value(t))
}

/// Roots `p > q` of `r² - θ₁r - θ₀ = 0`; both must be real, distinct and
/// negative.
pub fn car2_roots(theta0: f64, theta1: f64) -> Result<(f64, f64)> {
    if !(theta0.is_finite() && theta1.is_finite()) || theta0 >= 0.0 || theta1 >= 0.0 {
        return Err(Error::InadmissibleParams(format!(
            "need theta0 < 0 and theta1 < 0, got ({theta0}, {theta1})"
        )));
    }
    let disc = theta1 * theta1 + 4.0 * theta0;
    if disc <= 0.0 {
        return Err(Error::InadmissibleParams(format!(
            "theta1^2 + 4 theta0 = {disc} must be positive (real distinct roots)"
        )));
    }
    let s = disc.sqrt();
    Ok(((theta1 + s) / 2.0, (theta1 - s) / 2.0))
}

/// A computed condition: its integral, the numerical error, and whether it
/// is certified finite (or positive, for `η²`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionValue {
    pub holds: bool,
    pub value: f64,
    pub error_estimate: f64,
    pub truncation_bound: f64,
}

/// Verdicts on the integrability and positivity hypotheses for one kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    /// `∫∫|x(u)x(v)||v-u|^{2H-2} du dv < ∞`
    pub condition_integrable: bool,
    /// `∫_0^∞ (∫∫|x(u)x(v)||v-u-a|^{2H-2} du dv)^q da < ∞`
    pub condition_breuer: bool,
    /// `η² > 0`
    pub eta_positive: bool,
    /// `∫∫|x(u)x(v)|((u∧v)∨1)|v-u|^{2H-2} du dv < ∞`
    pub condition_dol2: bool,
    pub integrable: ConditionValue,
    pub breuer: ConditionValue,
    pub eta_sq: ConditionValue,
    pub dol2: ConditionValue,
}

impl AdmissibilityReport {
    pub fn all_hold(&self) -> bool {
        self.condition_integrable && self.condition_breuer && self.eta_positive && self.condition_dol2
    }
}

fn certified(r: &quadrature::IntegralResult, tol: f64) -> bool {
    r.value.is_finite() && r.error_estimate + r.truncation_bound <= tol.max(tol * r.value.abs())
}

/// Checks every hypothesis the limit theorems place on one kernel, for
/// Hermite rank `hermite_rank`. Each flag is set only when its integral was
/// computed to within `tol` (relative, or absolute near zero).
pub fn check_admissibility(
    spec: &KernelSpec,
    h: HurstParam,
    hermite_rank: u32,
    tol: f64,
) -> Result<AdmissibilityReport> {
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::InvalidInput(format!("tol must be > 0, got {tol}")));
    }
    if hermite_rank == 0 {
        return Err(Error::InvalidInput("Hermite rank must be >= 1".into()));
    }
    spec.check_envelope()?;
    let cfg = QuadConfig::new(0.1 * tol, 0.1 * tol * 1e-3, 4000)?;
    let abs = AbsKernel(spec);
    let beta = h.beta();

    let to_cond = |r: std::result::Result<quadrature::IntegralResult, Error>,
                   extra: bool|
     -> Result<ConditionValue> {
        match r {
            Ok(r) => Ok(ConditionValue {
                holds: extra && certified(&r, tol),
                value: r.value,
                error_estimate: r.error_estimate,
                truncation_bound: r.truncation_bound,
            }),
            Err(Error::ToleranceNotMet { achieved, .. }) => Ok(ConditionValue {
                holds: false,
                value: f64::NAN,
                error_estimate: achieved,
                truncation_bound: 0.0,
            }),
            Err(e) => Err(e),
        }
    };

    let zero = spec.is_identically_zero();
    let integrable = if zero {
        ConditionValue {
            holds: true,
            value: 0.0,
            error_estimate: 0.0,
            truncation_bound: 0.0,
        }
    } else {
        to_cond(
            quadrature::double_weighted_integral(&abs, &abs, 0.0, h, &cfg),
            true,
        )?
    };

    let eta_raw = if zero {
        Ok(quadrature::IntegralResult::exact(0.0))
    } else {
        quadrature::double_weighted_integral(spec, spec, 0.0, h, &cfg)
    };
    let mut eta_sq = to_cond(eta_raw, true)?;
    let c = h.isometry_const();
    eta_sq.value *= c;
    eta_sq.error_estimate *= c;
    eta_sq.truncation_bound *= c;
    eta_sq.holds = eta_sq.value.is_finite()
        && eta_sq.value > (eta_sq.error_estimate + eta_sq.truncation_bound).max(tol * 1e-3);

    // Algebraic decay |a|^{2H-2} of the correlation makes the Breuer
    // integral finite exactly when q(2H-2) < -1.
    let tail_ok = f64::from(hermite_rank) * beta < -1.0;
    let breuer = if zero {
        ConditionValue {
            holds: tail_ok,
            value: 0.0,
            error_estimate: 0.0,
            truncation_bound: 0.0,
        }
    } else if !tail_ok {
        ConditionValue {
            holds: false,
            value: f64::INFINITY,
            error_estimate: 0.0,
            truncation_bound: 0.0,
        }
    } else {
        let rho = RhoBar::new(&abs, &abs, h, cfg.tightened(10.0 * f64::from(hermite_rank)));
        let r = quadrature::line_integral_powers(
            &rho,
            &[quadrature::Power::Abs(hermite_rank)],
            quadrature::Domain::HalfLine,
            &cfg,
        )
        .map(|mut v| v.remove(0));
        to_cond(r, tail_ok)?
    };

    let dol2 = if zero {
        ConditionValue {
            holds: true,
            value: 0.0,
            error_estimate: 0.0,
            truncation_bound: 0.0,
        }
    } else {
        let ramp = RampWeighted(spec);
        let r = quadrature::upper_triangle_integral(&ramp, &abs, beta, &cfg).map(|mut r| {
            r.value *= 2.0;
            r.error_estimate *= 2.0;
            r.truncation_bound *= 2.0;
            r
        });
        to_cond(r, true)?
    };

    Ok(AdmissibilityReport {
        condition_integrable: integrable.holds,
        condition_breuer: breuer.holds,
        eta_positive: eta_sq.holds,
        condition_dol2: dol2.holds,
        integrable,
        breuer,
        eta_sq,
        dol2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn closed_form_values_at_origin() {
        let e = KernelSpec::exponential(1.0, 2.0).unwrap();
        assert_eq!(eval_kernel(&e, 0.0).unwrap(), 1.0);
        let k1 = KernelSpec::car2_first(-1.0, -2.0).unwrap();
        assert_eq!(eval_kernel(&k1, 0.0).unwrap(), 0.0);
        let k2 = KernelSpec::car2_second(-1.0, -2.0).unwrap();
        assert_eq!(eval_kernel(&k2, 0.0).unwrap(), 1.0);
        assert!(matches!(eval_kernel(&e, -0.1), Err(Error::NegativeTime(_))));
    }

    #[test]
    fn car2_roots_examples() {
        assert_eq!(car2_roots(-2.0, -3.0).unwrap(), (-1.0, -2.0));
        assert_eq!(car2_roots(-0.75, -2.0).unwrap(), (-0.5, -1.5));
        assert!(matches!(
            car2_roots(-1.0, -1.0),
            Err(Error::InadmissibleParams(_))
        ));
        assert!(car2_roots(1.0, -3.0).is_err());
        assert!(car2_roots(-2.0, 3.0).is_err());
    }

    #[test]
    fn second_kernel_is_derivative_of_first() {
        let k1 = KernelSpec::car2_first(-0.7, -2.3).unwrap();
        let k2 = KernelSpec::car2_second(-0.7, -2.3).unwrap();
        for &t in &[0.1, 0.5, 2.0, 7.0] {
            let d = (k1.value(t + 1e-6) - k1.value(t - 1e-6)) / 2e-6;
            assert_relative_eq!(d, k2.value(t), max_relative = 1e-7);
        }
    }

    #[test]
    fn tabulated_interpolates_and_vanishes_beyond_table() {
        let env = DecayEnvelope::new(2.0, 0.1).unwrap();
        let k = KernelSpec::tabulated(vec![0.0, 1.0, 0.5], 0.5, env).unwrap();
        assert_relative_eq!(k.value(0.25), 0.5);
        assert_relative_eq!(k.value(0.75), 0.75);
        assert_eq!(k.value(1.0), 0.5);
        assert_eq!(k.value(1.01), 0.0);
        assert_eq!(k.breakpoints(), vec![0.5, 1.0]);
        assert_eq!(k.support_end(), Some(1.0));
    }

    #[test]
    fn envelope_violation_detected() {
        let env = DecayEnvelope::new(0.5, 1.0).unwrap();
        let k = KernelSpec::tabulated(vec![1.0, 1.0], 1.0, env).unwrap();
        assert!(matches!(
            k.check_envelope(),
            Err(Error::EnvelopeViolation { .. })
        ));
    }

    #[test]
    fn analytic_moments_match_quadrature() {
        let k = KernelSpec::car2_second(-1.0, -2.5).unwrap();
        for m in 0..4 {
            let analytic = k.moment(m);
            let numeric = quadrature::kernel_moment(&k, m);
            assert_relative_eq!(analytic, numeric, epsilon = 1e-12, max_relative = 1e-10);
        }
    }

    #[test]
    fn serde_round_trip_and_envelope_requirement() {
        let k = KernelSpec::car2_first(-1.0, -2.0).unwrap();
        let s = serde_json::to_string(&k).unwrap();
        assert_eq!(s, r#"{"variant":"car2_first","params":{"p":-1.0,"q":-2.0}}"#);
        let back: KernelSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(back, k);

        let tab = r#"{"variant":"tabulated","params":{"samples":[1,1],"dt":1}}"#;
        assert!(serde_json::from_str::<KernelSpec>(tab).is_err());
        let tab = r#"{"variant":"tabulated","params":{"samples":[1,1],"dt":1},"envelope":{"c":3,"lambda":1}}"#;
        let k: KernelSpec = serde_json::from_str(tab).unwrap();
        assert_eq!(k.support_end(), Some(1.0));
        let bad = r#"{"variant":"exponential","params":{"sigma":-1,"theta":1}}"#;
        assert!(serde_json::from_str::<KernelSpec>(bad).is_err());
    }

    #[test]
    fn zero_kernel_fails_positivity() {
        let env = DecayEnvelope::new(1.0, 1.0).unwrap();
        let k = KernelSpec::tabulated(vec![0.0, 0.0], 1.0, env).unwrap();
        let r = check_admissibility(&k, HurstParam::new(0.6).unwrap(), 2, 1e-6).unwrap();
        assert!(!r.eta_positive);
        assert!(!r.all_hold());
    }

    #[test]
    fn rank_one_breuer_fails_for_long_memory() {
        let k = KernelSpec::exponential(1.0, 1.0).unwrap();
        let r = check_admissibility(&k, HurstParam::new(0.6).unwrap(), 1, 1e-6).unwrap();
        assert!(!r.condition_breuer);
        assert!(r.condition_integrable && r.eta_positive && r.condition_dol2);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn analytic_kernels_stay_under_envelope(
                sigma in 0.1f64..5.0, theta in 0.05f64..5.0,
                p in -3.0f64..-0.05, gap in 0.05f64..4.0,
                t in 0.0f64..60.0,
            ) {
                let q = p - gap;
                for k in [
                    KernelSpec::exponential(sigma, theta).unwrap(),
                    KernelSpec::car2_first(p, q).unwrap(),
                    KernelSpec::car2_second(p, q).unwrap(),
                ] {
                    let env = k.envelope();
                    prop_assert!(k.value(t).abs() <= env.at(t) * (1.0 + 1e-12) + 1e-300);
                }
            }

            #[test]
            fn roots_rebuild_parameters(p in -5.0f64..-0.01, gap in 0.01f64..5.0) {
                let q = p - gap;
                let (theta0, theta1) = (-p * q, p + q);
                let (pp, qq) = car2_roots(theta0, theta1).unwrap();
                prop_assert!(((pp + qq) - theta1).abs() <= 1e-12 * theta1.abs());
                prop_assert!((-(pp * qq) - theta0).abs() <= 1e-12 * theta0.abs());
            }
        }
    }
}
