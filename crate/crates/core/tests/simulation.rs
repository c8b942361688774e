use fracvolterra::asymptotics::{sigma_t, ModelSpec};
use fracvolterra::car2::Car2Params;
use fracvolterra::fgn::FgnSampler;
use fracvolterra::mc::{run_clt_experiment_with_samples, ExperimentConfig};
use fracvolterra::sim::{car2_recursion_from_increments, FunctionalKind, PathSimulator};
use fracvolterra::{HermiteExpansion, HurstParam, KernelSpec, QuadConfig, SimGrid};

fn h(v: f64) -> HurstParam {
    HurstParam::new(v).unwrap()
}

/// Sums consecutive pairs: the same noise on a grid twice as coarse.
fn coarsen(inc: &[f64]) -> Vec<f64> {
    inc.chunks(2).map(|c| c.iter().sum()).collect()
}

/// Largest gap between the convolution and recursion routes on `[0, T]`,
/// per dt, for one seed of noise generated on the finest grid.
fn route_gaps(seed: u64, horizon: f64, levels: &[u32]) -> Vec<f64> {
    let params = Car2Params::new(-2.0, -3.0).unwrap();
    let (k1, k2) = params.kernels().unwrap();
    let finest = *levels.iter().max().unwrap();
    let fine = SimGrid::from_horizon(horizon, 2f64.powi(-(finest as i32))).unwrap();
    let mut inc = FgnSampler::new(fine, h(0.6)).unwrap().sample(seed);
    let mut by_level = Vec::new();
    for level in (levels.iter().copied().min().unwrap()..=finest).rev() {
        by_level.push((level, inc.clone()));
        inc = coarsen(&inc);
    }
    levels
        .iter()
        .map(|&level| {
            let inc = &by_level.iter().find(|(l, _)| *l == level).unwrap().1;
            let grid = SimGrid::from_horizon(horizon, 2f64.powi(-(level as i32))).unwrap();
            let sim = PathSimulator::new(&[k1.clone(), k2.clone()], grid, h(0.6)).unwrap();
            let conv = sim.paths_from_increments(inc).unwrap();
            let rec = car2_recursion_from_increments(&params, grid.dt(), inc);
            let mut gap = 0.0f64;
            for c in 0..2 {
                for (a, b) in conv[c].iter().zip(&rec[c]) {
                    gap = gap.max((a - b).abs());
                }
            }
            gap
        })
        .collect()
}

#[test]
fn convolution_and_recursion_converge_at_first_order() {
    let levels = [6, 7, 8];
    let mut orders = Vec::new();
    for seed in 0..4 {
        let gaps = route_gaps(seed, 16.0, &levels);
        orders.push((gaps[0] / gaps[1]).log2());
        orders.push((gaps[1] / gaps[2]).log2());
    }
    let mean = orders.iter().sum::<f64>() / orders.len() as f64;
    assert!((mean - 1.0).abs() < 0.25, "orders {orders:?}");
}

#[test]
fn variance_at_horizon_matches_sigma() {
    let k = KernelSpec::car2_second(-1.0, -2.0).unwrap();
    let t_end = 4.0;
    let grid = SimGrid::from_horizon(t_end, 1.0 / 64.0).unwrap();
    let sim = PathSimulator::new(std::slice::from_ref(&k), grid, h(0.6)).unwrap();
    let n = 4000;
    let xs: Vec<f64> = (0..n).map(|s| *sim.simulate(s).values[0].last().unwrap()).collect();
    let var = xs.iter().map(|x| x * x).sum::<f64>() / n as f64;
    // E X² is σ²; Var(X²) = 2σ⁴ for a centred Gaussian
    let sigma = sigma_t(&k, h(0.6), t_end, &QuadConfig::default()).unwrap();
    let se = (2.0f64).sqrt() * sigma * sigma / (n as f64).sqrt();
    // the discretization bias is O(dt); it is well inside 4 SE here
    assert!((var - sigma * sigma).abs() < 4.0 * se, "{var} vs {}", sigma * sigma);
}

fn fou_experiment(functional: FunctionalKind, horizon: f64, workers: usize) -> ExperimentConfig {
    let model = ModelSpec::new(
        h(0.6),
        vec![KernelSpec::exponential(1.0, 1.0).unwrap()],
        vec![HermiteExpansion::single(2).unwrap()],
    )
    .unwrap();
    ExperimentConfig {
        model,
        functional,
        horizon,
        dt: 1.0 / 16.0,
        n_paths: 120,
        master_seed: 17,
        workers,
        force: false,
    }
}

#[test]
fn reports_do_not_depend_on_worker_count() {
    let base = run_clt_experiment_with_samples(&fou_experiment(FunctionalKind::V, 20.0, 1)).unwrap();
    for workers in [3, 8] {
        let other =
            run_clt_experiment_with_samples(&fou_experiment(FunctionalKind::V, 20.0, workers)).unwrap();
        assert_eq!(base, other);
        let a = serde_json::to_string(&base.report).unwrap();
        let b = serde_json::to_string(&other.report).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn u_and_v_functionals_approach_each_other() {
    let mut gaps = Vec::new();
    for horizon in [50.0, 200.0, 800.0] {
        let u = run_clt_experiment_with_samples(&fou_experiment(FunctionalKind::U, horizon, 1)).unwrap();
        let v = run_clt_experiment_with_samples(&fou_experiment(FunctionalKind::V, horizon, 1)).unwrap();
        let msd = u
            .samples
            .iter()
            .zip(&v.samples)
            .map(|(a, b)| (a[0] - b[0]).powi(2))
            .sum::<f64>()
            / u.samples.len() as f64;
        gaps.push(msd);
    }
    assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
}
