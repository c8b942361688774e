//! Oracle-equivalence checks bundled for the command line and the
//! acceptance suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::asymptotics::eta_squared;
use crate::car2::{eta_sq_frequency, Car2Params};
use crate::error::Result;
use crate::fgn::{HurstParam, SimGrid};
use crate::kernels::{AbsKernel, KernelSpec};
use crate::quadrature::{double_weighted_integral, QuadConfig};
use crate::sim::{convolve_direct, kernel_weights, PathSimulator};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    /// Worst observed discrepancy in the check's own units.
    pub worst: f64,
    pub tolerance: f64,
}

/// Largest `|fft - direct| / max|direct|` over a few kernels and seeds.
pub fn fft_vs_direct(n: usize) -> Result<CheckResult> {
    let grid = SimGrid::new(1.0 / 64.0, n)?;
    let h = HurstParam::new(0.7)?;
    let kernels = vec![
        KernelSpec::exponential(1.0, 1.0)?,
        KernelSpec::car2_first(-1.0, -2.0)?,
        KernelSpec::car2_second(-1.0, -2.0)?,
    ];
    let sim = PathSimulator::new(&kernels, grid, h)?;
    let mut worst = 0.0f64;
    for seed in 0..3 {
        let inc = sim.increments(seed);
        let fast = sim.paths_from_increments(&inc)?;
        for (k, path) in kernels.iter().zip(&fast) {
            let slow = convolve_direct(&kernel_weights(k, &grid), &inc);
            let scale = slow.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (a, b) in path.iter().zip(&slow) {
                worst = worst.max((a - b).abs() / scale);
            }
        }
    }
    Ok(CheckResult {
        name: "fft_vs_direct_convolution".into(),
        pass: worst <= 1e-10,
        worst,
        tolerance: 1e-10,
    })
}

/// Time-domain `η²` against `d_h ∫|Fx|²|ξ|^{1-2H}` for the CAR(2) kernels.
pub fn plancherel(params: &Car2Params, hs: &[f64]) -> Result<CheckResult> {
    let cfg = QuadConfig::default();
    let (k1, k2) = params.kernels()?;
    let mut worst = 0.0f64;
    for &hv in hs {
        let h = HurstParam::new(hv)?;
        for (i, k) in [(1, &k1), (2, &k2)] {
            let time = eta_squared(k, h, &cfg)?.value;
            let freq = eta_sq_frequency(params, h, i)?;
            worst = worst.max((time - freq).abs() / freq.abs());
        }
    }
    Ok(CheckResult {
        name: "plancherel".into(),
        pass: worst <= 1e-4,
        worst,
        tolerance: 1e-4,
    })
}

/// `I(|x|,|y|,a)² ≤ I(|x|,|x|,0)·I(|y|,|y|,0)` on random exponential
/// kernels, shifts `a ∈ [-10, 10]` and `h ∈ (1/2, 1)`. The reported
/// `worst` is the largest `(lhs - rhs)/rhs`; quadrature error bars are
/// added to the slack.
pub fn cauchy_schwarz_battery(trials: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let cfg = QuadConfig::new(1e-10, 1e-14, 4000)?;
    let slack = 1e-10;
    let mut worst = f64::NEG_INFINITY;
    let mut violations = 0;
    for _ in 0..trials {
        let h = HurstParam::new(rng.random_range(0.52..0.98))?;
        let x = KernelSpec::exponential(rng.random_range(0.2..3.0), rng.random_range(0.2..4.0))?;
        let y = KernelSpec::exponential(rng.random_range(0.2..3.0), rng.random_range(0.2..4.0))?;
        let a = rng.random_range(-10.0..10.0);
        let (ax, ay) = (AbsKernel(&x), AbsKernel(&y));
        let xy = double_weighted_integral(&ax, &ay, a, h, &cfg)?;
        let xx = double_weighted_integral(&ax, &ax, 0.0, h, &cfg)?;
        let yy = double_weighted_integral(&ay, &ay, 0.0, h, &cfg)?;
        let lhs = xy.value * xy.value;
        let rhs = xx.value * yy.value;
        let err = 2.0 * xy.value.abs() * xy.total_error()
            + xx.value * yy.total_error()
            + yy.value * xx.total_error();
        let excess = (lhs - rhs) / rhs;
        worst = worst.max(excess);
        if lhs - rhs > slack * rhs + err {
            violations += 1;
        }
    }
    Ok(CheckResult {
        name: "cauchy_schwarz_bound".into(),
        pass: violations == 0,
        worst,
        tolerance: slack,
    })
}

/// The bundle run by `selftest`.
pub fn run_all() -> Result<Vec<CheckResult>> {
    let params = Car2Params::new(-2.0, -3.0)?;
    Ok(vec![
        fft_vs_direct(4096)?,
        plancherel(&params, &[0.6, 0.7])?,
        cauchy_schwarz_battery(100, 2024)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundle_passes() {
        for c in run_all().unwrap() {
            assert!(c.pass, "{c:?}");
        }
    }
}
