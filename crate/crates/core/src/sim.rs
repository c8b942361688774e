//! Joint paths of `X_i(t) = ∫_0^t x_i(t-s) dB^H(s)` on a uniform grid and the
//! normalized functionals `U_T`, `V_T`.

use std::io::Write;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::asymptotics::{sigma_profile, EtaVector, ModelSpec, SigmaProfile};
use crate::car2::Car2Params;
use crate::error::{Error, Result};
use crate::fgn::{FgnSampler, HurstParam, SimGrid};
use crate::kernels::{Kernel, KernelSpec};
use crate::quadrature::QuadConfig;

/// `k` paths driven by one fBm realization. `values[i][m] = X_i(t_m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    pub grid: SimGrid,
    pub values: Vec<Vec<f64>>,
    pub driving_seed: u64,
}

impl PathBundle {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// `(1/T) ∫_0^T X_i(t)² dt` by the trapezoid rule.
    pub fn time_average_squares(&self) -> Vec<f64> {
        let t = self.grid.horizon();
        self.values
            .iter()
            .map(|x| trapezoid(x.iter().map(|v| v * v), self.grid.dt()) / t)
            .collect()
    }
}

fn trapezoid<I: ExactSizeIterator<Item = f64>>(values: I, dt: f64) -> f64 {
    let n = values.len();
    let mut acc = 0.0;
    for (m, v) in values.enumerate() {
        acc += if m == 0 || m + 1 == n { 0.5 * v } else { v };
    }
    acc * dt
}

/// Kernel weights of the midpoint sum: `x((n + 1/2) dt)`, `n = 0..N`.
pub fn kernel_weights(kernel: &KernelSpec, grid: &SimGrid) -> Vec<f64> {
    let dt = grid.dt();
    (0..grid.n_steps())
        .map(|n| kernel.value((n as f64 + 0.5) * dt))
        .collect()
}

/// `X_m = Σ_{j<m} w_{m-1-j} ΔB_j` for `m = 0..=N` by the O(N²) sum.
pub fn convolve_direct(weights: &[f64], increments: &[f64]) -> Vec<f64> {
    let n = increments.len();
    let mut out = vec![0.0; n + 1];
    for m in 1..=n {
        out[m] = (0..m).map(|j| weights[m - 1 - j] * increments[j]).sum();
    }
    out
}

/// Reusable simulator: the fGn sampler and the kernel spectra are built once.
#[derive(Clone)]
pub struct PathSimulator {
    grid: SimGrid,
    sampler: FgnSampler,
    spectra: Vec<Vec<Complex64>>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    len: usize,
}

impl std::fmt::Debug for PathSimulator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PathSimulator")
            .field("grid", &self.grid)
            .field("components", &self.spectra.len())
            .finish()
    }
}

impl PathSimulator {
    pub fn new(kernels: &[KernelSpec], grid: SimGrid, h: HurstParam) -> Result<Self> {
        if kernels.is_empty() {
            return Err(Error::InvalidInput("no kernels to simulate".into()));
        }
        for k in kernels {
            k.check_envelope()?;
        }
        let n = grid.n_steps();
        let len = (2 * n).next_power_of_two();
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(len);
        let ifft = planner.plan_fft_inverse(len);
        let spectra = kernels
            .iter()
            .map(|k| {
                let mut buf = vec![Complex64::new(0.0, 0.0); len];
                for (b, w) in buf.iter_mut().zip(kernel_weights(k, &grid)) {
                    b.re = w;
                }
                fft.process(&mut buf);
                buf
            })
            .collect();
        Ok(Self {
            grid,
            sampler: FgnSampler::new(grid, h)?,
            spectra,
            fft,
            ifft,
            len,
        })
    }

    pub fn grid(&self) -> SimGrid {
        self.grid
    }

    /// The fGn increments a given seed produces.
    pub fn increments(&self, seed: u64) -> Vec<f64> {
        self.sampler.sample(seed)
    }

    /// Paths for given increments, one FFT forward and one back per component.
    pub fn paths_from_increments(&self, increments: &[f64]) -> Result<Vec<Vec<f64>>> {
        let n = self.grid.n_steps();
        if increments.len() != n {
            return Err(Error::InvalidInput(format!(
                "expected {n} increments, got {}",
                increments.len()
            )));
        }
        let mut db = vec![Complex64::new(0.0, 0.0); self.len];
        for (b, &v) in db.iter_mut().zip(increments) {
            b.re = v;
        }
        self.fft.process(&mut db);
        let norm = 1.0 / self.len as f64;
        Ok(self
            .spectra
            .iter()
            .map(|spec| {
                let mut buf: Vec<Complex64> = spec.iter().zip(&db).map(|(a, b)| a * b).collect();
                self.ifft.process(&mut buf);
                let mut out = Vec::with_capacity(n + 1);
                out.push(0.0);
                out.extend(buf[..n].iter().map(|c| c.re * norm));
                out
            })
            .collect())
    }

    pub fn simulate(&self, seed: u64) -> PathBundle {
        let inc = self.increments(seed);
        let values = self
            .paths_from_increments(&inc)
            .expect("sampler length matches grid");
        PathBundle {
            grid: self.grid,
            values,
            driving_seed: seed,
        }
    }
}

/// One bundle from scratch; see [`PathSimulator`] for repeated draws.
pub fn simulate_paths(
    kernels: &[KernelSpec],
    grid: SimGrid,
    h: HurstParam,
    seed: u64,
) -> Result<PathBundle> {
    Ok(PathSimulator::new(kernels, grid, h)?.simulate(seed))
}

/// Euler scheme for the state `(X, Ẋ)` driven by given increments.
pub fn car2_recursion_from_increments(
    params: &Car2Params,
    dt: f64,
    increments: &[f64],
) -> Vec<Vec<f64>> {
    let (t0, t1) = (params.theta0(), params.theta1());
    let n = increments.len();
    let mut x = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    for m in 0..n {
        v[m + 1] = v[m] + (t0 * x[m] + t1 * v[m]) * dt + increments[m];
        x[m + 1] = x[m] + v[m] * dt;
    }
    vec![x, v]
}

/// `(X, Ẋ)` of the CAR(2) equation by the Euler recursion, driven by the
/// same increments as [`simulate_paths`] with the same seed.
pub fn simulate_car2_recursion(
    params: &Car2Params,
    grid: SimGrid,
    h: HurstParam,
    seed: u64,
) -> Result<PathBundle> {
    let inc = FgnSampler::new(grid, h)?.sample(seed);
    Ok(PathBundle {
        grid,
        values: car2_recursion_from_increments(params, grid.dt(), &inc),
        driving_seed: seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FunctionalKind {
    U,
    V,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalSample {
    pub kind: FunctionalKind,
    pub values: Vec<f64>,
    pub horizon: f64,
}

/// `(1/√T) ∫_0^T f_i(X_i(t)/s_i(t)) dt` by the trapezoid rule. Where
/// `s_i(t) = 0` (always at `t = 0`) the integrand is `f_i(0)`.
fn normalized_functional<S>(
    bundle: &PathBundle,
    model: &ModelSpec,
    kind: FunctionalKind,
    scale: S,
) -> Result<FunctionalSample>
where
    S: Fn(usize, usize) -> f64,
{
    if model.dim() != bundle.dim() {
        return Err(Error::InvalidInput(format!(
            "model has {} components, bundle has {}",
            model.dim(),
            bundle.dim()
        )));
    }
    let t = bundle.grid.horizon();
    let values = bundle
        .values
        .iter()
        .zip(&model.expansions)
        .enumerate()
        .map(|(i, (x, f))| {
            let it = x.iter().enumerate().map(|(m, &v)| {
                let s = scale(i, m);
                f.eval(if s > 0.0 { v / s } else { 0.0 })
            });
            trapezoid(it, bundle.grid.dt()) / t.sqrt()
        })
        .collect::<Vec<f64>>();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("functional is not finite".into()));
    }
    Ok(FunctionalSample {
        kind,
        values,
        horizon: t,
    })
}

/// `U_T` with precomputed variance profiles `σ_i(t_m)`.
pub fn functional_u_with(
    bundle: &PathBundle,
    model: &ModelSpec,
    sigmas: &[SigmaProfile],
) -> Result<FunctionalSample> {
    if sigmas.len() != model.dim() {
        return Err(Error::InvalidInput("one variance profile per component".into()));
    }
    normalized_functional(bundle, model, FunctionalKind::U, |i, m| sigmas[i].at(m))
}

/// `U_T`, computing `σ_i(t)` by quadrature.
pub fn functional_u(
    bundle: &PathBundle,
    model: &ModelSpec,
    cfg: &QuadConfig,
) -> Result<FunctionalSample> {
    let sigmas = model
        .kernels
        .iter()
        .map(|k| sigma_profile(k, model.h, bundle.grid, cfg))
        .collect::<Result<Vec<_>>>()?;
    functional_u_with(bundle, model, &sigmas)
}

/// `V_T`: as `U_T` with the constant normalization `η_i`.
pub fn functional_v(
    bundle: &PathBundle,
    model: &ModelSpec,
    etas: &EtaVector,
) -> Result<FunctionalSample> {
    if etas.eta.len() != model.dim() {
        return Err(Error::InvalidInput("one eta per component".into()));
    }
    normalized_functional(bundle, model, FunctionalKind::V, |i, _| etas.eta[i])
}

/// CSV with columns `path_id,t,X1,...,Xk`, one row per path and grid point.
pub fn write_paths_csv<W: Write>(bundles: &[PathBundle], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let k = bundles.first().map_or(0, |b| b.dim());
    let mut header = vec!["path_id".to_string(), "t".to_string()];
    header.extend((1..=k).map(|i| format!("X{i}")));
    let io = |e: csv::Error| Error::InvalidInput(format!("csv write failed: {e}"));
    out.write_record(&header).map_err(io)?;
    for (id, b) in bundles.iter().enumerate() {
        if b.dim() != k {
            return Err(Error::InvalidInput("bundles differ in dimension".into()));
        }
        for m in 0..=b.grid.n_steps() {
            let mut row = vec![id.to_string(), b.grid.time(m).to_string()];
            row.extend(b.values.iter().map(|x| x[m].to_string()));
            out.write_record(&row).map_err(io)?;
        }
    }
    out.flush()
        .map_err(|e| Error::InvalidInput(format!("csv write failed: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fgn::fbm_from_fgn;
    use crate::hermite::HermiteExpansion;
    use crate::kernels::DecayEnvelope;

    fn h(v: f64) -> HurstParam {
        HurstParam::new(v).unwrap()
    }

    #[test]
    fn fft_matches_direct_sum() {
        let grid = SimGrid::new(0.05, 1000).unwrap();
        let k = KernelSpec::car2_second(-0.5, -2.0).unwrap();
        let sim = PathSimulator::new(std::slice::from_ref(&k), grid, h(0.7)).unwrap();
        let inc = sim.increments(5);
        let fast = &sim.paths_from_increments(&inc).unwrap()[0];
        let slow = convolve_direct(&kernel_weights(&k, &grid), &inc);
        let scale = slow.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn unit_kernel_gives_fbm() {
        let grid = SimGrid::new(0.1, 64).unwrap();
        let env = DecayEnvelope::new(2.0, 1e-3).unwrap();
        let k = KernelSpec::tabulated(vec![1.0; 65], 0.1, env).unwrap();
        let b = simulate_paths(&[k], grid, h(0.6), 9).unwrap();
        let fbm = fbm_from_fgn(&generate(grid, 9), 0.1);
        for (a, e) in b.values[0].iter().zip(&fbm.values) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    fn generate(grid: SimGrid, seed: u64) -> Vec<f64> {
        crate::fgn::generate_fgn(grid, h(0.6), seed).unwrap()
    }

    #[test]
    fn zero_kernel_and_zero_noise() {
        let grid = SimGrid::new(0.1, 50).unwrap();
        let env = DecayEnvelope::new(1.0, 1.0).unwrap();
        let k = KernelSpec::tabulated(vec![0.0; 51], 0.1, env).unwrap();
        let b = simulate_paths(&[k], grid, h(0.6), 1).unwrap();
        assert!(b.values[0].iter().all(|&v| v == 0.0));
        let p = Car2Params::new(-2.0, -3.0).unwrap();
        let z = car2_recursion_from_increments(&p, 0.1, &[0.0; 50]);
        assert!(z.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic_per_seed() {
        let grid = SimGrid::new(0.1, 200).unwrap();
        let k = KernelSpec::exponential(1.0, 1.0).unwrap();
        let a = simulate_paths(std::slice::from_ref(&k), grid, h(0.6), 3).unwrap();
        let b = simulate_paths(std::slice::from_ref(&k), grid, h(0.6), 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.values[0][0], 0.0);
    }

    #[test]
    fn zero_path_functionals() {
        let grid = SimGrid::new(0.25, 64).unwrap();
        let k = KernelSpec::exponential(1.0, 1.0).unwrap();
        let model = ModelSpec::new(h(0.6), vec![k], vec![HermiteExpansion::single(2).unwrap()])
            .unwrap();
        let b = PathBundle {
            grid,
            values: vec![vec![0.0; 65]],
            driving_seed: 0,
        };
        let etas = EtaVector {
            eta: vec![0.7],
            eta_sq_error: vec![0.0],
        };
        let v = functional_v(&b, &model, &etas).unwrap();
        assert!((v.values[0] + 16f64.sqrt()).abs() < 1e-12);
        let sig = SigmaProfile {
            dt: 0.25,
            values: vec![0.7; 65],
        };
        let u = functional_u_with(&b, &model, &[sig]).unwrap();
        assert_eq!(u.values, v.values);
    }

    #[test]
    fn csv_layout() {
        let grid = SimGrid::new(0.5, 2).unwrap();
        let b = PathBundle {
            grid,
            values: vec![vec![0.0, 1.0, 2.0], vec![0.0, -1.0, -2.0]],
            driving_seed: 0,
        };
        let mut buf = Vec::new();
        write_paths_csv(&[b.clone(), b], &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "path_id,t,X1,X2");
        assert_eq!(lines[2], "0,0.5,1,-1");
        assert_eq!(lines.len(), 7);
    }
}
