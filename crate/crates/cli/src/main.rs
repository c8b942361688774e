use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use fracvolterra::asymptotics::{eta, lambda_report, lambda_report_unchecked};
use fracvolterra::car2::{
    estimate_report, lambda_closed_form, m_infinity, spectral_constants, Car2Params,
};
use fracvolterra::config::{default_dt, from_json, ExperimentFile, ModelConfig};
use fracvolterra::mc::{run_clt_experiment_with_samples, write_samples_csv};
use fracvolterra::sim::{write_paths_csv, PathBundle, PathSimulator};
use fracvolterra::{selftest, Error, HurstParam, QuadConfig, SimGrid, SCHEMA_VERSION, VERSION};

const EXIT_VALIDATION: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(
    name = "fracvolt",
    version = concat!(env!("CARGO_PKG_VERSION"), " (schema 1)"),
    about = "Fractional Volterra processes: simulation, limit covariances, CAR(2) estimation"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Master seed for every random draw.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for path-parallel work.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Relative tolerance of the quadratures [default: 1e-7].
    #[arg(long, global = true)]
    tol: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate paths and write them as CSV.
    Simulate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "T", default_value_t = 10.0)]
        horizon: f64,
        #[arg(long, default_value_t = default_dt())]
        dt: f64,
        #[arg(long, default_value_t = 1)]
        paths: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Normalizing constants of each component.
    Eta {
        #[arg(long)]
        model: PathBuf,
    },
    /// Limit covariance matrix with its hypothesis checks.
    Lambda {
        #[arg(long)]
        model: PathBuf,
        /// Compute even when the hypotheses fail; the report is stamped.
        #[arg(long)]
        force: bool,
    },
    /// CAR(2) roots, constants, moment limits and covariance.
    Car2 {
        #[arg(long, allow_hyphen_values = true)]
        theta0: f64,
        #[arg(long, allow_hyphen_values = true)]
        theta1: f64,
        #[arg(long)]
        h: f64,
    },
    /// Method-of-moments estimate of the CAR(2) coefficients.
    Estimate {
        /// CSV written by `simulate` for a CAR(2) model (columns X1, X2).
        #[arg(long, conflicts_with_all = ["m1", "m2"])]
        input: Option<PathBuf>,
        /// Path to use from the CSV.
        #[arg(long, default_value_t = 0)]
        path_id: usize,
        #[arg(long, requires = "m2", allow_hyphen_values = true)]
        m1: Option<f64>,
        #[arg(long, requires = "m1", allow_hyphen_values = true)]
        m2: Option<f64>,
        #[arg(long)]
        h: f64,
        /// Observation horizon; read from the CSV when omitted there.
        #[arg(long = "T")]
        horizon: Option<f64>,
        #[arg(long, allow_hyphen_values = true, default_value_t = -2.0)]
        init_theta0: f64,
        #[arg(long, allow_hyphen_values = true, default_value_t = -3.0)]
        init_theta1: f64,
    },
    /// Monte Carlo check of the limit law.
    CltCheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        samples_out: Option<PathBuf>,
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long = "T")]
        horizon: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        force: bool,
    },
    /// Oracle-equivalence checks.
    Selftest,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::from(if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_VALIDATION
            })
        }
    }
}

/// CLI default relative tolerance; the library default is tighter and
/// makes `lambda` take minutes.
const DEFAULT_TOL: f64 = 1e-7;

fn quad_config(g: &Global) -> fracvolterra::Result<QuadConfig> {
    let t = g.tol.unwrap_or(DEFAULT_TOL);
    QuadConfig::new(t, t * 1e-3, QuadConfig::default().max_subdivisions)
}

fn read_text(path: &Path) -> fracvolterra::Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", path.display())))
}

fn create(path: &Path) -> fracvolterra::Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::InvalidInput(format!("cannot write {}: {e}", path.display())))
}

fn emit<T: Serialize>(value: &T) -> fracvolterra::Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::InvalidInput(format!("serialization failed: {e}")))?;
    // A closed pipe downstream is not our error.
    let _ = writeln!(std::io::stdout().lock(), "{text}");
    Ok(())
}

fn pool(threads: Option<usize>) -> fracvolterra::Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(1))
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> fracvolterra::Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::Simulate {
            model,
            horizon,
            dt,
            paths,
            out,
        } => {
            let cfg: ModelConfig = from_json(&read_text(&model)?)?;
            let model = cfg.to_model_unchecked()?;
            let grid = SimGrid::from_horizon(horizon, dt)?;
            if paths == 0 {
                return Err(Error::InvalidInput("paths must be >= 1".into()));
            }
            let sim = PathSimulator::new(&model.kernels, grid, model.h)?;
            let seed = g.seed.unwrap_or(0);
            let bundles: Vec<PathBundle> = pool(g.threads)?.install(|| {
                (0..paths)
                    .into_par_iter()
                    .map(|i| sim.simulate(seed ^ i as u64))
                    .collect()
            });
            let mut w = create(&out)?;
            write_paths_csv(&bundles, &mut w)?;
            w.flush()
                .map_err(|e| Error::InvalidInput(format!("cannot write {}: {e}", out.display())))?;
            emit(&json!({
                "schema_version": SCHEMA_VERSION,
                "paths": paths,
                "n_steps": grid.n_steps(),
                "dt": grid.dt(),
                "T": grid.horizon(),
                "seed": seed,
                "out": out.display().to_string(),
            }))
        }
        Command::Eta { model } => {
            let cfg: ModelConfig = from_json(&read_text(&model)?)?;
            let model = cfg.to_model_unchecked()?;
            let e = eta(&model, &quad_config(g)?)?;
            emit(&json!({
                "schema_version": SCHEMA_VERSION,
                "h": model.h.value(),
                "eta": e.eta,
                "eta_sq": e.eta_sq(),
                "eta_sq_error": e.eta_sq_error,
            }))
        }
        Command::Lambda { model, force } => {
            let cfg: ModelConfig = from_json(&read_text(&model)?)?;
            let model = cfg.to_model_unchecked()?;
            let q = quad_config(g)?;
            let report = if force {
                lambda_report_unchecked(&model, &q)?
            } else {
                lambda_report(&model, &q)?
            };
            emit(&report)
        }
        Command::Car2 { theta0, theta1, h } => {
            let params = Car2Params::new(theta0, theta1)?;
            let h = HurstParam::new(h)?;
            let constants = spectral_constants(h)?;
            let (e1, e2) = m_infinity(&params, h)?;
            let closed = lambda_closed_form(&params, h)?;
            emit(&json!({
                "schema_version": SCHEMA_VERSION,
                "theta0": theta0,
                "theta1": theta1,
                "h": h.value(),
                "p": params.p(),
                "q": params.q(),
                "constants": constants,
                "m_infinity": [e1, e2],
                "lambda": closed.lambda(),
                "provenance": closed.provenance,
                "printed_form_discrepancies": closed.printed_form_discrepancies,
            }))
        }
        Command::Estimate {
            input,
            path_id,
            m1,
            m2,
            h,
            horizon,
            init_theta0,
            init_theta1,
        } => {
            let h = HurstParam::new(h)?;
            let init = Car2Params::new(init_theta0, init_theta1)?;
            let (m_hat, t) = match (input, m1, m2) {
                (Some(path), _, _) => {
                    let (m, t_csv) = moments_from_csv(&path, path_id)?;
                    (m, horizon.unwrap_or(t_csv))
                }
                (None, Some(a), Some(b)) => {
                    let t = horizon.ok_or_else(|| {
                        Error::InvalidInput("--T is required with --m1/--m2".into())
                    })?;
                    ((a, b), t)
                }
                _ => {
                    return Err(Error::InvalidInput(
                        "give either --input or both --m1 and --m2".into(),
                    ))
                }
            };
            let rep = estimate_report(m_hat, h, t, &init)?;
            emit(&json!({
                "schema_version": SCHEMA_VERSION,
                "m_hat": [m_hat.0, m_hat.1],
                "T": t,
                "theta_hat": rep.theta_hat,
                "cov": rep.cov,
                "ci_99": rep.ci_99,
                "real_roots": rep.real_roots,
            }))
        }
        Command::CltCheck {
            config,
            out,
            samples_out,
            paths,
            horizon,
            dt,
            force,
        } => {
            let mut file: ExperimentFile = from_json(&read_text(&config)?)?;
            // flags > file > defaults
            if let Some(p) = paths {
                file.n_paths = p;
            }
            if let Some(t) = horizon {
                file.horizon = t;
            }
            if let Some(d) = dt {
                file.dt = d;
            }
            if let Some(s) = g.seed {
                file.master_seed = s;
            }
            if let Some(w) = g.threads {
                file.workers = w;
            }
            file.force |= force;
            let exp = file.to_experiment()?;
            let run = run_clt_experiment_with_samples(&exp)?;
            if let Some(path) = &samples_out {
                let mut w = create(path)?;
                write_samples_csv(&run.samples, exp.functional, &mut w)?;
                w.flush().map_err(|e| {
                    Error::InvalidInput(format!("cannot write {}: {e}", path.display()))
                })?;
            }
            if let Some(path) = &out {
                let text = serde_json::to_string_pretty(&run.report)
                    .map_err(|e| Error::InvalidInput(format!("serialization failed: {e}")))?;
                std::fs::write(path, text + "\n").map_err(|e| {
                    Error::InvalidInput(format!("cannot write {}: {e}", path.display()))
                })?;
            }
            emit(&run.report)
        }
        Command::Selftest => {
            let checks = selftest::run_all()?;
            let pass = checks.iter().all(|c| c.pass);
            emit(&json!({
                "schema_version": SCHEMA_VERSION,
                "version": VERSION,
                "pass": pass,
                "checks": checks,
            }))?;
            if pass {
                Ok(())
            } else {
                Err(Error::ToleranceNotMet {
                    achieved: checks
                        .iter()
                        .filter(|c| !c.pass)
                        .map(|c| c.worst)
                        .fold(0.0, f64::max),
                    requested: 0.0,
                })
            }
        }
    }
}

/// `((1/T)∫X₁², (1/T)∫X₂²)` of one path in a `simulate` CSV, and its `T`.
fn moments_from_csv(path: &Path, path_id: usize) -> fracvolterra::Result<((f64, f64), f64)> {
    let bad = |m: String| Error::InvalidInput(format!("{}: {m}", path.display()));
    let mut rdr = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| bad(format!("missing column {name}")))
    };
    let (ci, ct, c1, c2) = (col("path_id")?, col("t")?, col("X1")?, col("X2")?);
    let mut rows: Vec<(f64, f64, f64)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let num = |i: usize| -> fracvolterra::Result<f64> {
            rec[i].parse::<f64>().map_err(|e| bad(e.to_string()))
        };
        if num(ci)? as usize == path_id {
            rows.push((num(ct)?, num(c1)?, num(c2)?));
        }
    }
    if rows.len() < 2 {
        return Err(bad(format!("path {path_id} has fewer than two rows")));
    }
    let t = rows[rows.len() - 1].0 - rows[0].0;
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    for w in rows.windows(2) {
        let h = w[1].0 - w[0].0;
        s1 += 0.5 * h * (w[0].1 * w[0].1 + w[1].1 * w[1].1);
        s2 += 0.5 * h * (w[0].2 * w[0].2 + w[1].2 * w[1].2);
    }
    Ok(((s1 / t, s2 / t), t))
}
