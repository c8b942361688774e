//! Seeded Monte Carlo checks of the limit theorems: the law of `U_T` or
//! `V_T` against `N_k(0, Λ)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::asymptotics::{eta, lambda_matrix_with, sigma_profile, ModelSpec, SigmaProfile};
use crate::error::{Error, Result};
use crate::fgn::SimGrid;
use crate::quadrature::QuadConfig;
use crate::sim::{functional_u_with, functional_v, FunctionalKind, PathSimulator};

pub use crate::SCHEMA_VERSION;
pub const OUT_OF_SCOPE: &str = "OUT OF THEOREM SCOPE";
pub const QUANTILE_LEVELS: [f64; 7] = [0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub functional: FunctionalKind,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub master_seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Run even when the theorems' hypotheses fail.
    #[serde(default)]
    pub force: bool,
}

fn default_workers() -> usize {
    1
}

impl ExperimentConfig {
    pub fn grid(&self) -> Result<SimGrid> {
        SimGrid::from_horizon(self.horizon, self.dt)
    }

    fn validate(&self) -> Result<()> {
        if self.n_paths < 2 {
            return Err(Error::InvalidInput(format!(
                "n_paths must be >= 2, got {}",
                self.n_paths
            )));
        }
        if self.workers == 0 {
            return Err(Error::InvalidInput("workers must be >= 1".into()));
        }
        self.grid()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileRow {
    pub level: f64,
    pub values: Vec<f64>,
}

/// Aggregated experiment outcome. Deterministic for a fixed configuration,
/// so wall-clock time is not part of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MCReport {
    pub schema_version: u32,
    pub seed: u64,
    pub functional: FunctionalKind,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub empirical_mean: Vec<f64>,
    pub empirical_cov: Vec<Vec<f64>>,
    /// Absent for forced runs whose covariance series diverges.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_lambda: Option<Vec<Vec<f64>>>,
    pub cov_se: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_scores: Option<Vec<Vec<f64>>>,
    pub ks: Vec<KsResult>,
    pub quantiles: Vec<QuantileRow>,
    /// Path averages of `(1/T)∫ X_i²` and their standard errors.
    pub mean_square: Vec<f64>,
    pub mean_square_se: Vec<f64>,
    /// The limits `η_i²` of those averages.
    pub eta_sq: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scope: Option<String>,
}

/// Tolerance for the target `Λ`; far below Monte Carlo noise.
fn target_cfg() -> QuadConfig {
    QuadConfig::new(1e-7, 1e-10, 2000).expect("valid constants")
}

struct PathOutcome {
    functional: Vec<f64>,
    mean_square: Vec<f64>,
}

/// Functional samples, one row per path, in path order.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRun {
    pub report: MCReport,
    pub samples: Vec<Vec<f64>>,
}

pub fn run_clt_experiment(cfg: &ExperimentConfig) -> Result<MCReport> {
    Ok(run_clt_experiment_with_samples(cfg)?.report)
}

pub fn run_clt_experiment_with_samples(cfg: &ExperimentConfig) -> Result<ExperimentRun> {
    cfg.validate()?;
    let model = &cfg.model;
    let scope = match model.check_hypotheses() {
        Ok(()) => None,
        Err(_) if cfg.force => Some(OUT_OF_SCOPE.to_string()),
        Err(e) => return Err(e),
    };
    let qcfg = target_cfg();
    let etas = eta(model, &qcfg)?;
    // outside the hypotheses the series for Λ usually diverges; a forced run
    // then reports the empirical side only
    let lambda = match lambda_matrix_with(model, &etas, &qcfg) {
        Ok(l) => Some(l),
        Err(Error::Validation(_)) if scope.is_some() => None,
        Err(e) => return Err(e),
    };
    let grid = cfg.grid()?;
    let sigmas: Vec<SigmaProfile> = match cfg.functional {
        FunctionalKind::U => model
            .kernels
            .iter()
            .map(|k| sigma_profile(k, model.h, grid, &qcfg))
            .collect::<Result<_>>()?,
        FunctionalKind::V => Vec::new(),
    };
    let sim = PathSimulator::new(&model.kernels, grid, model.h)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    // collect keeps path order, so every reduction below is sequential
    let outcomes: Vec<Result<PathOutcome>> = pool.install(|| {
        (0..cfg.n_paths)
            .into_par_iter()
            .map(|i| {
                let bundle = sim.simulate(cfg.master_seed ^ i as u64);
                let f = match cfg.functional {
                    FunctionalKind::U => functional_u_with(&bundle, model, &sigmas)?,
                    FunctionalKind::V => functional_v(&bundle, model, &etas)?,
                };
                Ok(PathOutcome {
                    functional: f.values,
                    mean_square: bundle.time_average_squares(),
                })
            })
            .collect()
    });
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    let samples: Vec<Vec<f64>> = outcomes.iter().map(|o| o.functional.clone()).collect();
    let squares: Vec<Vec<f64>> = outcomes.into_iter().map(|o| o.mean_square).collect();

    let k = model.dim();
    let stats = SampleStats::new(&samples, k);
    let target = lambda.map(|l| l.entries);
    let z = target.as_ref().map(|t| {
        (0..k)
            .map(|i| {
                (0..k)
                    .map(|j| z_score(stats.cov[i][j], t[i][j], stats.cov_se[i][j]))
                    .collect()
            })
            .collect()
    });
    let columns: Vec<Vec<f64>> = (0..k).map(|i| samples.iter().map(|s| s[i]).collect()).collect();
    let ks = match &target {
        Some(t) if cfg.n_paths >= MIN_KS_SAMPLES => {
            let variances: Vec<f64> = (0..k).map(|i| t[i][i]).collect();
            normality_diagnostics(&columns, &variances)?
        }
        _ => Vec::new(),
    };
    let quantiles = QUANTILE_LEVELS
        .iter()
        .map(|&level| QuantileRow {
            level,
            values: columns.iter().map(|c| quantile(c, level)).collect(),
        })
        .collect();
    let sq = SampleStats::new(&squares, k);
    let n = cfg.n_paths as f64;
    Ok(ExperimentRun {
        report: MCReport {
            schema_version: SCHEMA_VERSION,
            seed: cfg.master_seed,
            functional: cfg.functional,
            horizon: cfg.horizon,
            dt: cfg.dt,
            n_paths: cfg.n_paths,
            empirical_mean: stats.mean,
            empirical_cov: stats.cov,
            target_lambda: target,
            cov_se: stats.cov_se,
            z_scores: z,
            ks,
            quantiles,
            mean_square_se: (0..k).map(|i| (sq.cov[i][i] / n).sqrt()).collect(),
            mean_square: sq.mean,
            eta_sq: etas.eta_sq(),
            scope,
        },
        samples,
    })
}

fn z_score(emp: f64, target: f64, se: f64) -> f64 {
    let d = emp - target;
    if d == 0.0 {
        0.0
    } else {
        d / se
    }
}

/// Mean, unbiased covariance and jackknife standard errors of the
/// covariance entries.
struct SampleStats {
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
    cov_se: Vec<Vec<f64>>,
}

impl SampleStats {
    fn new(rows: &[Vec<f64>], k: usize) -> Self {
        let n = rows.len() as f64;
        let mut sum = vec![0.0; k];
        for r in rows {
            for (s, v) in sum.iter_mut().zip(r) {
                *s += v;
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let mut cov = vec![vec![0.0; k]; k];
        let mut cov_se = vec![vec![0.0; k]; k];
        for i in 0..k {
            for j in 0..k {
                // centred second moments avoid cancellation in the
                // leave-one-out formula
                let c: f64 = rows
                    .iter()
                    .map(|r| (r[i] - mean[i]) * (r[j] - mean[j]))
                    .sum();
                cov[i][j] = c / (n - 1.0);
                if rows.len() < 3 {
                    cov_se[i][j] = f64::NAN;
                    continue;
                }
                // leaving out row r: C' = C - n/(n-1)·d_i d_j, d = r - mean
                let loo: Vec<f64> = rows
                    .iter()
                    .map(|r| {
                        let (di, dj) = (r[i] - mean[i], r[j] - mean[j]);
                        (c - n / (n - 1.0) * di * dj) / (n - 2.0)
                    })
                    .collect();
                let avg = loo.iter().sum::<f64>() / n;
                let var = loo.iter().map(|v| (v - avg).powi(2)).sum::<f64>() * (n - 1.0) / n;
                cov_se[i][j] = var.sqrt();
            }
        }
        Self { mean, cov, cov_se }
    }
}

/// Per-entry verdict of [`compare_covariance`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryVerdict {
    pub i: usize,
    pub j: usize,
    pub z: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceVerdict {
    pub pass: bool,
    pub entries: Vec<EntryVerdict>,
}

/// Passes iff every `|z|` is at most `tol_sigmas`; never passes without a
/// target.
pub fn compare_covariance(report: &MCReport, tol_sigmas: f64) -> CovarianceVerdict {
    let Some(target) = &report.target_lambda else {
        return CovarianceVerdict {
            pass: false,
            entries: Vec::new(),
        };
    };
    let k = report.empirical_cov.len();
    let mut entries = Vec::new();
    for i in 0..k {
        for j in i..k {
            let z = z_score(
                report.empirical_cov[i][j],
                target[i][j],
                report.cov_se[i][j],
            );
            entries.push(EntryVerdict {
                i,
                j,
                z,
                pass: z.abs() <= tol_sigmas,
            });
        }
    }
    CovarianceVerdict {
        pass: entries.iter().all(|e| e.pass),
        entries,
    }
}

pub const MIN_KS_SAMPLES: usize = 100;

/// Asymptotic Kolmogorov tail `P(K > x)`.
pub fn kolmogorov_tail(x: f64) -> f64 {
    // the alternating series is useless near 0, where the tail is 1 anyway
    if x < 0.2 {
        return 1.0;
    }
    let mut acc = 0.0;
    for k in 1..=100 {
        let kf = f64::from(k);
        let term = (-2.0 * kf * kf * x * x).exp();
        acc += if k % 2 == 1 { term } else { -term };
        if term < 1e-18 {
            break;
        }
    }
    (2.0 * acc).clamp(0.0, 1.0)
}

/// One-sample KS of each column against `N(0, variances[i])`.
pub fn normality_diagnostics(columns: &[Vec<f64>], variances: &[f64]) -> Result<Vec<KsResult>> {
    if columns.len() != variances.len() {
        return Err(Error::InvalidInput("one variance per component".into()));
    }
    columns
        .iter()
        .zip(variances)
        .map(|(col, &var)| {
            if col.len() < MIN_KS_SAMPLES {
                return Err(Error::TooFewSamples {
                    got: col.len(),
                    needed: MIN_KS_SAMPLES,
                });
            }
            let normal = Normal::new(0.0, var.max(0.0).sqrt())
                .map_err(|e| Error::InvalidInput(format!("variance {var}: {e}")))?;
            let mut xs = col.clone();
            xs.sort_by(f64::total_cmp);
            let n = xs.len() as f64;
            let mut d = 0.0f64;
            for (idx, &x) in xs.iter().enumerate() {
                let f = normal.cdf(x);
                let i = idx as f64;
                d = d.max((i + 1.0) / n - f).max(f - i / n);
            }
            let sn = n.sqrt();
            let p = kolmogorov_tail((sn + 0.12 + 0.11 / sn) * d);
            Ok(KsResult {
                statistic: d,
                p_value: p,
            })
        })
        .collect()
}

/// Linear-interpolation sample quantile.
pub fn quantile(values: &[f64], level: f64) -> f64 {
    let mut xs = values.to_vec();
    xs.sort_by(f64::total_cmp);
    if xs.is_empty() {
        return f64::NAN;
    }
    let pos = level.clamp(0.0, 1.0) * (xs.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    xs[lo] + (pos - lo as f64) * (xs[hi] - xs[lo])
}

/// Writes `path_id,V1,...,Vk` (or `U1..Uk`).
pub fn write_samples_csv<W: std::io::Write>(
    samples: &[Vec<f64>],
    kind: FunctionalKind,
    w: W,
) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let k = samples.first().map_or(0, Vec::len);
    let prefix = match kind {
        FunctionalKind::U => "U",
        FunctionalKind::V => "V",
    };
    let io = |e: csv::Error| Error::InvalidInput(format!("csv write failed: {e}"));
    let mut header = vec!["path_id".to_string()];
    header.extend((1..=k).map(|i| format!("{prefix}{i}")));
    out.write_record(&header).map_err(io)?;
    for (id, s) in samples.iter().enumerate() {
        let mut row = vec![id.to_string()];
        row.extend(s.iter().map(f64::to_string));
        out.write_record(&row).map_err(io)?;
    }
    out.flush()
        .map_err(|e| Error::InvalidInput(format!("csv write failed: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normals(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn ks_self_calibration() {
        let mut ok = 0;
        for rep in 0..100 {
            let r = normality_diagnostics(&[normals(1000 + rep, 10_000)], &[1.0]).unwrap();
            if r[0].p_value > 0.01 {
                ok += 1;
            }
        }
        assert!(ok >= 99, "{ok}");
    }

    #[test]
    fn ks_constant_and_too_few() {
        let r = normality_diagnostics(&[vec![0.0; 500]], &[1.0]).unwrap();
        assert!((r[0].statistic - 0.5).abs() < 1e-12);
        assert!(r[0].p_value < 1e-10);
        assert!(matches!(
            normality_diagnostics(&[vec![0.0; 50]], &[1.0]),
            Err(Error::TooFewSamples { .. })
        ));
    }

    #[test]
    fn jackknife_matches_normal_theory() {
        // for Gaussian data SE(var) ≈ σ²·√(2/n)
        let xs = normals(3, 4000);
        let rows: Vec<Vec<f64>> = xs.iter().map(|&x| vec![2.0 * x]).collect();
        let s = SampleStats::new(&rows, 1);
        let expect = 4.0 * (2.0f64 / 4000.0).sqrt();
        assert!((s.cov_se[0][0] / expect - 1.0).abs() < 0.1);
        assert!((s.cov[0][0] - 4.0).abs() < 4.0 * s.cov_se[0][0]);
    }

    #[test]
    fn quantiles_interpolate() {
        let v = vec![3.0, 1.0, 2.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
    }

    fn report(emp: f64, target: f64, se: f64) -> MCReport {
        MCReport {
            schema_version: 1,
            seed: 0,
            functional: FunctionalKind::V,
            horizon: 1.0,
            dt: 0.1,
            n_paths: 2,
            empirical_mean: vec![0.0, 0.0],
            empirical_cov: vec![vec![emp, 0.1], vec![0.1, 1.0]],
            target_lambda: Some(vec![vec![target, 0.1], vec![0.1, 1.0]]),
            cov_se: vec![vec![se, 0.01], vec![0.01, 0.01]],
            z_scores: Some(vec![vec![0.0; 2]; 2]),
            ks: vec![],
            quantiles: vec![],
            mean_square: vec![],
            mean_square_se: vec![],
            eta_sq: vec![],
            scope: None,
        }
    }

    #[test]
    fn covariance_verdicts() {
        assert!(compare_covariance(&report(1.0, 1.0, 0.0), 4.0).pass);
        let v = compare_covariance(&report(1.0, 1.0 + 10.0 * 0.05, 0.05), 4.0);
        assert!(!v.pass);
        let bad: Vec<_> = v.entries.iter().filter(|e| !e.pass).collect();
        assert_eq!(bad.len(), 1);
        assert_eq!((bad[0].i, bad[0].j), (0, 0));
    }
}
