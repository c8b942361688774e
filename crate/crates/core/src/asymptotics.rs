//! Normalizing constants `η_i`, the cross-correlation profiles `ρ̄_ij(a)`,
//! the variance profile `σ_i(t)` and the limit covariance `Λ`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fgn::{HurstParam, SimGrid};
use crate::gauss;
use crate::hermite::HermiteExpansion;
use crate::kernels::{check_admissibility, AbsKernel, Kernel, KernelSpec, Truncated};
use crate::quadrature::{
    self, double_weighted_integral, singular_inner, Domain, IntegralResult, Power, QuadConfig,
    RhoBar,
};

/// Kernels, Hermite expansions and Hurst index of a `k`-dimensional model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub h: HurstParam,
    pub kernels: Vec<KernelSpec>,
    pub expansions: Vec<HermiteExpansion>,
}

impl ModelSpec {
    /// Builds the model and enforces the hypotheses of the limit theorems.
    pub fn new(
        h: HurstParam,
        kernels: Vec<KernelSpec>,
        expansions: Vec<HermiteExpansion>,
    ) -> Result<Self> {
        let m = Self::unchecked(h, kernels, expansions)?;
        m.check_hypotheses()?;
        Ok(m)
    }

    /// Shape checks only; the rank and Hurst-range hypotheses are not
    /// enforced (exploratory runs outside the theorems' scope).
    pub fn unchecked(
        h: HurstParam,
        kernels: Vec<KernelSpec>,
        expansions: Vec<HermiteExpansion>,
    ) -> Result<Self> {
        if kernels.is_empty() {
            return Err(Error::InvalidInput("model needs at least one component".into()));
        }
        if kernels.len() != expansions.len() {
            return Err(Error::InvalidInput(format!(
                "{} kernels but {} expansions",
                kernels.len(),
                expansions.len()
            )));
        }
        Ok(Self {
            h,
            kernels,
            expansions,
        })
    }

    pub fn dim(&self) -> usize {
        self.kernels.len()
    }

    /// `q_* = min_i q_i`.
    pub fn q_star(&self) -> usize {
        self.expansions.iter().map(|e| e.rank()).min().unwrap_or(0)
    }

    /// `q_* ≥ 2` and `H < 1 - 1/(2 q_*)`.
    pub fn check_hypotheses(&self) -> Result<()> {
        let q = self.q_star();
        if q < 2 {
            return Err(Error::Validation(format!(
                "Hermite rank q_* >= 2: minimal Hermite rank is {q}"
            )));
        }
        let bound = 1.0 - 1.0 / (2.0 * q as f64);
        let h = self.h.value();
        if h >= bound {
            return Err(Error::Validation(format!(
                "Hurst range H < 1 - 1/(2 q_*): H = {h} but q_* = {q} requires H < {bound}"
            )));
        }
        Ok(())
    }

    fn index(&self, i: usize) -> Result<()> {
        if i >= self.dim() {
            return Err(Error::InvalidInput(format!(
                "component index {i} out of range for a model of dimension {}",
                self.dim()
            )));
        }
        Ok(())
    }
}

/// `η_i` for every component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaVector {
    pub eta: Vec<f64>,
    /// Absolute error bound on each `η_i²`.
    pub eta_sq_error: Vec<f64>,
}

impl EtaVector {
    pub fn eta_sq(&self) -> Vec<f64> {
        self.eta.iter().map(|e| e * e).collect()
    }
}

/// `η² = H(2H-1)∫∫ x(u)x(v)|v-u|^{2H-2} du dv` with its error.
pub fn eta_squared(kernel: &KernelSpec, h: HurstParam, cfg: &QuadConfig) -> Result<IntegralResult> {
    if kernel.is_identically_zero() {
        return Err(Error::DegenerateKernel(0.0));
    }
    let r = double_weighted_integral(kernel, kernel, 0.0, h, cfg)?.scaled(h.isometry_const());
    if !(r.value > r.total_error()) || r.value <= cfg.abs_tol {
        return Err(Error::DegenerateKernel(r.value));
    }
    Ok(r)
}

pub fn eta(model: &ModelSpec, cfg: &QuadConfig) -> Result<EtaVector> {
    let mut eta = Vec::with_capacity(model.dim());
    let mut err = Vec::with_capacity(model.dim());
    for k in &model.kernels {
        let r = eta_squared(k, model.h, cfg)?;
        eta.push(r.value.sqrt());
        err.push(r.total_error());
    }
    Ok(EtaVector {
        eta,
        eta_sq_error: err,
    })
}

/// `ρ̄_ij(a) = ∫∫ x_i(u) x_j(v) |v-u-a|^{2H-2} du dv`.
pub fn rho_bar(
    model: &ModelSpec,
    i: usize,
    j: usize,
    a: f64,
    cfg: &QuadConfig,
) -> Result<IntegralResult> {
    model.index(i)?;
    model.index(j)?;
    double_weighted_integral(&model.kernels[i], &model.kernels[j], a, model.h, cfg)
}

/// `σ(t) = √(E[X(t)²])` at a single time.
pub fn sigma_t(kernel: &KernelSpec, h: HurstParam, t: f64, cfg: &QuadConfig) -> Result<f64> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidInput(format!("t must be >= 0, got {t}")));
    }
    if t == 0.0 || kernel.is_identically_zero() {
        return Ok(0.0);
    }
    let tr = Truncated {
        inner: kernel,
        end: t,
    };
    let r = double_weighted_integral(&tr, &tr, 0.0, h, cfg)?;
    Ok((h.isometry_const() * r.value).max(0.0).sqrt())
}

/// `σ(t_m)` on every point of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaProfile {
    pub dt: f64,
    pub values: Vec<f64>,
}

impl SigmaProfile {
    pub fn at(&self, m: usize) -> f64 {
        self.values[m.min(self.values.len() - 1)]
    }
}

/// `σ(t_m)` for all grid points, accumulated cell by cell from
/// `σ²(t) = 2H(2H-1)∫_0^t x(v) φ(v) dv`, `φ(v) = ∫_0^v x(u)(v-u)^{2H-2} du`.
/// Once the remaining variation is below round-off the last value is
/// carried forward.
pub fn sigma_profile(
    kernel: &KernelSpec,
    h: HurstParam,
    grid: SimGrid,
    cfg: &QuadConfig,
) -> Result<SigmaProfile> {
    let n = grid.n_steps();
    let dt = grid.dt();
    let mut values = vec![0.0; n + 1];
    if kernel.is_identically_zero() {
        return Ok(SigmaProfile { dt, values });
    }
    let beta = h.beta();
    let gamma = beta + 1.0;
    let c2 = 2.0 * h.isometry_const();
    let g: &dyn Kernel = kernel;
    let env = kernel.envelope();
    let breaks = kernel.breakpoints();
    let phi_sup = env.c * 2.0 / gamma + env.c / env.lambda;
    let total = c2 * quadrature::double_weighted_integral(kernel, kernel, 0.0, h, cfg)?.value / 2.0;
    let mut integrand = |v: f64| -> (f64, f64) {
        let xv = g.value(v);
        if xv == 0.0 || v <= 0.0 {
            return (0.0, 0.0);
        }
        let r = singular_inner(g, &breaks, 0.0, v, v, beta, 1e-15, 1e-12, 200);
        (xv * r.value, xv.abs() * r.error)
    };
    let mut acc = 0.0;
    let mut err = 0.0;
    for m in 0..n {
        let (a, b) = (grid.time(m), grid.time(m + 1));
        let r = if m == 0 {
            gauss::graded_toward(&mut integrand, 0.0, b, 2.0 / gamma, 1e-15, 1e-12, 200)
        } else {
            let mut pts = vec![a];
            pts.extend(breaks.iter().copied().filter(|&t| t > a && t < b));
            pts.push(b);
            gauss::adaptive(&mut integrand, &pts, 1e-15, 1e-12, 200)
        };
        acc += r.value;
        err += r.error;
        values[m + 1] = (c2 * acc).max(0.0).sqrt();
        let rest = match kernel.support_end() {
            Some(e) if b >= e => 0.0,
            _ => c2 * phi_sup * env.tail_mass(b),
        };
        if rest <= 1e-13 * total.abs() {
            let last = values[m + 1];
            values[m + 2..].iter_mut().for_each(|v| *v = last);
            break;
        }
    }
    let requested = cfg.abs_tol.max(cfg.rel_tol * total.abs());
    if !(c2 * err <= requested) {
        return Err(Error::ToleranceNotMet {
            achieved: c2 * err,
            requested,
        });
    }
    Ok(SigmaProfile { dt, values })
}

/// Symmetric `k × k` limit covariance with per-entry error bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaMatrix {
    pub entries: Vec<Vec<f64>>,
    pub error_bounds: Vec<Vec<f64>>,
}

impl LambdaMatrix {
    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i][j]
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        let k = self.dim();
        DMatrix::from_fn(k, k, |i, j| self.entries[i][j])
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.to_matrix())
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |m, &v| m.min(v))
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.entries[i][i]).sum()
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

/// One entry `Λ_ij` given the `η`'s.
pub fn lambda_entry(
    model: &ModelSpec,
    etas: &EtaVector,
    i: usize,
    j: usize,
    cfg: &QuadConfig,
) -> Result<(f64, f64)> {
    model.index(i)?;
    model.index(j)?;
    let (ei, ej) = (&model.expansions[i], &model.expansions[j]);
    let lo = ei.rank().max(ej.rank());
    let hi = ei.level().min(ej.level());
    let levels: Vec<usize> = (lo..=hi)
        .filter(|&l| ei.coeff(l) != 0.0 && ej.coeff(l) != 0.0)
        .collect();
    if levels.is_empty() {
        return Ok((0.0, 0.0));
    }
    let c = model.h.isometry_const();
    let eta_prod = etas.eta[i] * etas.eta[j];
    let rel_eta_err = 0.5 * (etas.eta_sq_error[i] / (etas.eta[i] * etas.eta[i])
        + etas.eta_sq_error[j] / (etas.eta[j] * etas.eta[j]));
    let lmax = *levels.last().unwrap() as f64;
    // |ρ̄_ij| <= η_i η_j / c. Far out, ρ̄ is a small difference of large
    // parts and only an absolute accuracy on that scale is reachable; it is
    // also all the line integral needs.
    let mut rho_cfg = cfg.tightened(10.0 * lmax);
    rho_cfg.abs_tol = rho_cfg.abs_tol.max(0.1 * rho_cfg.rel_tol * eta_prod / c);
    let rho = RhoBar::new(&model.kernels[i], &model.kernels[j], model.h, rho_cfg);
    let powers: Vec<Power> = levels.iter().map(|&l| Power::Plain(l as u32)).collect();
    let ints = quadrature::line_integral_powers(&rho, &powers, Domain::Full, cfg)?;
    let mut value = 0.0;
    let mut err = 0.0;
    for (&l, r) in levels.iter().zip(&ints) {
        let w = ei.coeff(l) * ej.coeff(l) * factorial(l) * (c / eta_prod).powi(l as i32);
        let term = w * r.value;
        value += term;
        err += w.abs() * r.total_error() + term.abs() * l as f64 * rel_eta_err;
    }
    Ok((value, err))
}

/// `Λ_ij = Σ_l a_il a_jl l! (H(2H-1))^l/(η_i η_j)^l ∫ ρ̄_ij(a)^l da`.
pub fn lambda_matrix(model: &ModelSpec, cfg: &QuadConfig) -> Result<LambdaMatrix> {
    model.check_hypotheses()?;
    let etas = eta(model, cfg)?;
    lambda_matrix_with(model, &etas, cfg)
}

/// As [`lambda_matrix`] with precomputed `η`'s and no hypothesis check.
pub fn lambda_matrix_with(
    model: &ModelSpec,
    etas: &EtaVector,
    cfg: &QuadConfig,
) -> Result<LambdaMatrix> {
    let k = model.dim();
    let mut entries = vec![vec![0.0; k]; k];
    let mut bounds = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in i..k {
            let (v, e) = lambda_entry(model, etas, i, j, cfg)?;
            entries[i][j] = v;
            entries[j][i] = v;
            bounds[i][j] = e;
            bounds[j][i] = e;
        }
    }
    let out = LambdaMatrix {
        entries,
        error_bounds: bounds,
    };
    let min_eig = out.min_eigenvalue();
    let slack = 1e-10 * out.trace().abs();
    if min_eig < -slack {
        return Err(Error::ToleranceNotMet {
            achieved: -min_eig,
            requested: slack,
        });
    }
    Ok(out)
}

/// Hypothesis verdicts aggregated over all components and pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub breuer: bool,
    pub positivity: bool,
    pub dol2: bool,
    pub h_range: bool,
}

/// Evaluates every hypothesis: per-kernel checks plus the pairwise
/// Breuer integrals for `i ≠ j`.
pub fn check_conditions(model: &ModelSpec, tol: f64) -> Result<ConditionSummary> {
    let h_range = model.check_hypotheses().is_ok();
    let mut breuer = true;
    let mut positivity = true;
    let mut dol2 = true;
    for (k, e) in model.kernels.iter().zip(&model.expansions) {
        let rep = check_admissibility(k, model.h, e.rank() as u32, tol)?;
        breuer &= rep.condition_integrable && rep.condition_breuer;
        positivity &= rep.eta_positive;
        dol2 &= rep.condition_dol2;
    }
    let cfg = QuadConfig::new(0.1 * tol, 1e-4 * tol, 4000)?;
    for i in 0..model.dim() {
        for j in 0..model.dim() {
            if i == j {
                continue;
            }
            let q = model.expansions[i].rank().max(model.expansions[j].rank()) as u32;
            if f64::from(q) * model.h.beta() >= -1.0 {
                breuer = false;
                continue;
            }
            let (fi, fj) = (AbsKernel(&model.kernels[i]), AbsKernel(&model.kernels[j]));
            let rho = RhoBar::new(&fi, &fj, model.h, cfg.tightened(10.0 * f64::from(q)));
            match quadrature::line_integral_powers(&rho, &[Power::Abs(q)], Domain::HalfLine, &cfg) {
                Ok(v) => breuer &= v[0].value.is_finite(),
                Err(e) if e.is_numerical() => breuer = false,
                Err(e) => return Err(e),
            }
        }
    }
    Ok(ConditionSummary {
        breuer,
        positivity,
        dol2,
        h_range,
    })
}

/// Output of the `lambda` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaReport {
    pub schema_version: u32,
    pub h: f64,
    pub etas: Vec<f64>,
    pub lambda: Vec<Vec<f64>>,
    pub error_bounds: Vec<Vec<f64>>,
    pub conditions: ConditionSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scope: Option<String>,
}

pub fn lambda_report(model: &ModelSpec, cfg: &QuadConfig) -> Result<LambdaReport> {
    model.check_hypotheses()?;
    lambda_report_unchecked(model, cfg)
}

/// As [`lambda_report`] without the rank and Hurst-range hypotheses; the
/// report is stamped as outside the theorems' scope when they fail.
pub fn lambda_report_unchecked(model: &ModelSpec, cfg: &QuadConfig) -> Result<LambdaReport> {
    let scope = model
        .check_hypotheses()
        .err()
        .map(|_| crate::mc::OUT_OF_SCOPE.to_string());
    let conditions = check_conditions(model, cfg.rel_tol.max(1e-8) * 10.0)?;
    if !conditions.positivity {
        return Err(Error::DegenerateKernel(0.0));
    }
    if !(conditions.breuer && conditions.dol2) {
        return Err(Error::Validation(
            "kernel integrability: the covariance series could not be certified summable".into(),
        ));
    }
    let etas = eta(model, cfg)?;
    let lam = lambda_matrix_with(model, &etas, cfg)?;
    Ok(LambdaReport {
        schema_version: crate::SCHEMA_VERSION,
        h: model.h.value(),
        etas: etas.eta,
        lambda: lam.entries,
        error_bounds: lam.error_bounds,
        conditions,
        scope,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use statrs::function::gamma::gamma;

    fn h(v: f64) -> HurstParam {
        HurstParam::new(v).unwrap()
    }

    fn fou_model(hv: f64, q: usize) -> ModelSpec {
        ModelSpec::new(
            h(hv),
            vec![KernelSpec::exponential(1.0, 1.0).unwrap()],
            vec![HermiteExpansion::single(q).unwrap()],
        )
        .unwrap()
    }

    #[test]
    fn hypotheses_are_enforced() {
        let k = vec![KernelSpec::exponential(1.0, 1.0).unwrap()];
        let e = |q| vec![HermiteExpansion::single(q).unwrap()];
        let err = ModelSpec::new(h(0.8), k.clone(), e(2)).unwrap_err();
        assert!(matches!(err, Error::Validation(ref m) if m.contains("1 - 1/(2 q_*)")));
        let err = ModelSpec::new(h(0.6), k.clone(), e(1)).unwrap_err();
        assert!(matches!(err, Error::Validation(ref m) if m.contains("q_* >= 2")));
        assert!(ModelSpec::new(h(0.8), k, e(3)).is_ok());
    }

    #[test]
    fn eta_of_fou() {
        for &theta in &[0.5, 1.0, 2.0] {
            let k = KernelSpec::exponential(1.0, theta).unwrap();
            let r = eta_squared(&k, h(0.7), &QuadConfig::default()).unwrap();
            assert_relative_eq!(
                r.value,
                theta.powf(-1.4) * 0.7 * gamma(1.4),
                max_relative = 1e-8
            );
        }
    }

    #[test]
    fn zero_kernel_is_degenerate() {
        let z = KernelSpec::tabulated(
            vec![0.0, 0.0, 0.0],
            0.5,
            crate::kernels::DecayEnvelope::new(1.0, 1.0).unwrap(),
        )
        .unwrap();
        assert!(matches!(
            eta_squared(&z, h(0.6), &QuadConfig::default()),
            Err(Error::DegenerateKernel(_))
        ));
    }

    #[test]
    fn sigma_profile_matches_pointwise_values() {
        let k = KernelSpec::exponential(1.0, 1.0).unwrap();
        let grid = SimGrid::new(0.25, 200).unwrap();
        let cfg = QuadConfig::default();
        let prof = sigma_profile(&k, h(0.6), grid, &cfg).unwrap();
        assert_eq!(prof.values[0], 0.0);
        for m in [1usize, 3, 8, 40] {
            let s = sigma_t(&k, h(0.6), grid.time(m), &cfg).unwrap();
            assert_relative_eq!(prof.values[m], s, max_relative = 1e-8);
        }
        let eta = eta_squared(&k, h(0.6), &cfg).unwrap().value.sqrt();
        assert!((prof.values[200] - eta).abs() < 1e-9);
        assert!(prof.values.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn sigma_converges_to_eta() {
        let k = KernelSpec::exponential(1.0, 1.0).unwrap();
        let cfg = QuadConfig::default();
        let s = sigma_t(&k, h(0.6), 10.0, &cfg).unwrap();
        let eta = eta_squared(&k, h(0.6), &cfg).unwrap().value.sqrt();
        assert!((s - eta).abs() < 1e-3);
        assert_eq!(sigma_t(&k, h(0.6), 0.0, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn disjoint_levels_give_zero_cross_entry() {
        let k = KernelSpec::exponential(1.0, 1.0).unwrap();
        let m = ModelSpec::new(
            h(0.6),
            vec![k.clone(), k],
            vec![
                HermiteExpansion::single(2).unwrap(),
                HermiteExpansion::single(3).unwrap(),
            ],
        )
        .unwrap();
        let cfg = QuadConfig::new(1e-7, 1e-10, 2000).unwrap();
        let lam = lambda_matrix(&m, &cfg).unwrap();
        assert_eq!(lam.get(0, 1), 0.0);
        assert!(lam.get(0, 0) > 0.0 && lam.get(1, 1) > 0.0);
    }

    #[test]
    fn lambda_rejects_out_of_range() {
        let mut m = fou_model(0.6, 2);
        m.h = h(0.8);
        assert!(matches!(
            lambda_matrix(&m, &QuadConfig::default()),
            Err(Error::Validation(_))
        ));
    }
}
