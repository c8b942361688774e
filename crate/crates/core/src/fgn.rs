//! Exact fractional Gaussian noise and fractional Brownian motion on uniform
//! grids, sampled by circulant embedding of the increment covariance.

use std::io::Write;
use std::sync::Arc;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hurst index restricted to the long-memory range `(1/2, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct HurstParam(f64);

impl HurstParam {
    pub fn new(h: f64) -> Result<Self> {
        if h.is_finite() && h > 0.5 && h < 1.0 {
            Ok(Self(h))
        } else {
            Err(Error::InvalidInput(format!(
                "Hurst index must lie in (1/2, 1), got {h}"
            )))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    /// Exponent `2H - 2` of the covariance kernel `|v - u|^{2H-2}`.
    #[inline]
    pub fn beta(self) -> f64 {
        2.0 * self.0 - 2.0
    }

    /// `H(2H - 1)`, the constant of the Wiener-integral isometry.
    #[inline]
    pub fn isometry_const(self) -> f64 {
        self.0 * (2.0 * self.0 - 1.0)
    }
}

impl TryFrom<f64> for HurstParam {
    type Error = Error;
    fn try_from(h: f64) -> Result<Self> {
        Self::new(h)
    }
}

impl From<HurstParam> for f64 {
    fn from(h: HurstParam) -> f64 {
        h.0
    }
}

/// Uniform time grid `t_m = m·dt`, `m = 0..=n_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimGrid {
    dt: f64,
    n_steps: usize,
}

impl SimGrid {
    pub fn new(dt: f64, n_steps: usize) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidInput(format!("dt must be positive, got {dt}")));
        }
        if n_steps == 0 {
            return Err(Error::InvalidInput("n_steps must be at least 1".into()));
        }
        Ok(Self { dt, n_steps })
    }

    /// Grid covering `[0, horizon]`; `horizon/dt` must be an integer up to
    /// rounding noise.
    pub fn from_horizon(horizon: f64, dt: f64) -> Result<Self> {
        let ratio = horizon / dt;
        let n = ratio.round();
        if !(ratio.is_finite() && n >= 1.0 && (ratio - n).abs() <= 1e-9 * n) {
            return Err(Error::InvalidInput(format!(
                "horizon {horizon} is not an integer multiple of dt {dt}"
            )));
        }
        Self::new(dt, n as usize)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.n_steps as f64
    }

    pub fn time(&self, m: usize) -> f64 {
        self.dt * m as f64
    }
}

/// A sampled trajectory starting at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPath {
    pub dt: f64,
    pub values: Vec<f64>,
}

impl GaussianPath {
    /// Writes `t,value` rows at round-trip precision.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,value")?;
        for (m, v) in self.values.iter().enumerate() {
            writeln!(w, "{},{}", self.dt * m as f64, v)?;
        }
        Ok(())
    }
}

/// Autocovariance of unit-step fGn at lag `k`:
/// `½(|k+1|^{2H} + |k-1|^{2H} - 2|k|^{2H})`.
pub fn fgn_autocovariance(k: usize, h: HurstParam) -> f64 {
    let two_h = 2.0 * h.value();
    let k = k as f64;
    0.5 * ((k + 1.0).powf(two_h) + (k - 1.0).abs().powf(two_h) - 2.0 * k.powf(two_h))
}

/// Eigenvalues of the circulant matrix whose first row is the fGn covariance
/// row `γ_0..γ_{n-1}` mirrored to length `2(n-1)`.
pub fn circulant_eigenvalues(n: usize, h: HurstParam) -> Vec<f64> {
    if n <= 1 {
        return vec![1.0];
    }
    let len = 2 * (n - 1);
    let mut row: Vec<Complex64> = (0..len)
        .map(|j| {
            let lag = if j < n { j } else { len - j };
            Complex64::new(fgn_autocovariance(lag, h), 0.0)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(len).process(&mut row);
    row.into_iter().map(|c| c.re).collect()
}

/// Reusable sampler for `n` consecutive fGn increments at spacing `dt`.
///
/// Holds the spectral square root of the embedding and the FFT plan, so
/// repeated draws (one per path seed) cost a single FFT each.
#[derive(Clone)]
pub struct FgnSampler {
    n: usize,
    scale: f64,
    sqrt_eig: Arc<Vec<f64>>,
    fft: Option<Arc<dyn Fft<f64>>>,
}

impl std::fmt::Debug for FgnSampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FgnSampler")
            .field("n", &self.n)
            .field("scale", &self.scale)
            .finish()
    }
}

impl FgnSampler {
    pub fn new(grid: SimGrid, h: HurstParam) -> Result<Self> {
        let n = grid.n_steps();
        let scale = grid.dt().powf(h.value());
        if n == 1 {
            return Ok(Self {
                n,
                scale,
                sqrt_eig: Arc::new(vec![1.0]),
                fft: None,
            });
        }
        let eig = circulant_eigenvalues(n, h);
        let len = eig.len();
        let mut sqrt_eig = Vec::with_capacity(len);
        let tol = 1e-12 * eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (index, &value) in eig.iter().enumerate() {
            if value < -tol {
                return Err(Error::NegativeEigenvalue { index, value });
            }
            sqrt_eig.push((value.max(0.0) / len as f64).sqrt());
        }
        let fft = FftPlanner::new().plan_fft_forward(len);
        Ok(Self {
            n,
            scale,
            sqrt_eig: Arc::new(sqrt_eig),
            fft: Some(fft),
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Draws one increment vector; a pure function of `seed`.
    pub fn sample(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let Some(fft) = &self.fft else {
            let z: f64 = StandardNormal.sample(&mut rng);
            return vec![self.scale * z];
        };
        let mut buf: Vec<Complex64> = self
            .sqrt_eig
            .iter()
            .map(|&s| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                Complex64::new(s * re, s * im)
            })
            .collect();
        fft.process(&mut buf);
        buf.truncate(self.n);
        buf.into_iter().map(|c| self.scale * c.re).collect()
    }
}

/// `n_steps` exact fGn increments of spacing `dt`:
/// `Cov(ΔB_j, ΔB_k) = dt^{2H} γ(|j-k|)`.
pub fn generate_fgn(grid: SimGrid, h: HurstParam, seed: u64) -> Result<Vec<f64>> {
    Ok(FgnSampler::new(grid, h)?.sample(seed))
}

/// Cumulative sum prefixed with zero.
pub fn fbm_from_fgn(increments: &[f64], dt: f64) -> GaussianPath {
    let mut values = Vec::with_capacity(increments.len() + 1);
    let mut acc = 0.0;
    values.push(0.0);
    for dx in increments {
        acc += dx;
        values.push(acc);
    }
    GaussianPath { dt, values }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn h(v: f64) -> HurstParam {
        HurstParam::new(v).unwrap()
    }

    #[test]
    fn hurst_range_is_enforced() {
        assert!(HurstParam::new(0.5).is_err());
        assert!(HurstParam::new(1.0).is_err());
        assert!(HurstParam::new(f64::NAN).is_err());
        assert!(HurstParam::new(0.51).is_ok());
    }

    #[test]
    fn autocovariance_reference_values() {
        assert_eq!(fgn_autocovariance(0, h(0.7)), 1.0);
        assert_relative_eq!(
            fgn_autocovariance(1, h(0.75)),
            2f64.sqrt() - 1.0,
            max_relative = 1e-14
        );
    }

    #[test]
    fn partial_sums_of_autocovariance_increase() {
        for &hv in &[0.51, 0.6, 0.75, 0.9, 0.99] {
            let mut s = 0.0;
            for k in 0..=100 {
                let next = s + fgn_autocovariance(k, h(hv));
                assert!(next > s, "h={hv} k={k}");
                s = next;
            }
        }
    }

    #[test]
    fn grid_rejects_bad_values() {
        assert!(SimGrid::new(0.0, 10).is_err());
        assert!(SimGrid::new(0.1, 0).is_err());
        assert!(SimGrid::from_horizon(1.0, 0.3).is_err());
        assert_eq!(SimGrid::from_horizon(200.0, 1.0 / 64.0).unwrap().n_steps(), 12800);
    }

    #[test]
    fn embedding_eigenvalues_nonnegative() {
        let eig = circulant_eigenvalues(1024, h(0.6));
        assert_eq!(eig.len(), 2046);
        assert!(eig.iter().all(|&v| v >= -1e-12));
    }

    #[test]
    fn sampling_is_deterministic() {
        let g = SimGrid::new(0.01, 500).unwrap();
        let a = generate_fgn(g, h(0.7), 42).unwrap();
        let b = generate_fgn(g, h(0.7), 42).unwrap();
        let c = generate_fgn(g, h(0.7), 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 500);
    }

    #[test]
    fn empty_increments_give_origin() {
        assert_eq!(fbm_from_fgn(&[], 1.0).values, vec![0.0]);
        assert_eq!(fbm_from_fgn(&[1.0, -0.5], 1.0).values, vec![0.0, 1.0, 0.5]);
    }

    #[test]
    fn csv_export_has_header_and_rows() {
        let p = fbm_from_fgn(&[0.1, 0.2], 0.5);
        let mut out = Vec::new();
        p.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "t,value");
        assert_eq!(lines.len(), 4);
        let last: Vec<f64> = lines[3].split(',').map(|s| s.parse().unwrap()).collect();
        assert_eq!(last, vec![1.0, 0.1 + 0.2]);
    }
}
