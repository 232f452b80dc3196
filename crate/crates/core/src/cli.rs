//! Command-line front end: argument parsing, dispatch, on-disk outputs and
//! run manifests.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::brownian::brownian_increments;
use crate::cell::{grid_csv, poisson_residual, solve_cell_problem, solve_periodic_poisson};
use crate::config::{
    load_config, parse_eps_list, parse_manifest, Invocation, Manifest, RunConfig, SystemChoice, SCHEMA_VERSION,
};
use crate::effective::{assemble_effective_generator, compute_effective_coefficients, EffectiveCoefficients};
use crate::error::{Error, Result};
use crate::harness::{eps_sweep, prepare};
use crate::integrator::{simulate, snapshot_csv, RecordOptions, System};
use crate::kernel::{assemble_heterogeneous_generator, fractional_laplacian, Grid1D, KernelParams};
use crate::validation::run_suite;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "nlhomog", version, about = "Nonlocal stochastic Schrödinger homogenization toolkit")]
pub struct Cli {
    /// Worker threads for parallel sweeps (1 gives serial mode).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Root directory for outputs when --out is not given.
    #[arg(long, env = "NLHOMOG_OUT", global = true)]
    pub out_root: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON configuration file; omitted keys take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the cell problem and write the corrector (and the potential's
    /// Poisson solution when the potential is non-zero).
    Cell(Common),
    /// Compute the effective coefficients.
    Coefficients(Common),
    /// Integrate one path of the heterogeneous or effective equation.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_system, default_value = "het")]
        system: SystemChoice,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Write a snapshot every this many steps.
        #[arg(long, default_value_t = 16)]
        snapshot_every: usize,
    },
    /// Coupled ε-sweep of strong and weak errors.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma separated, strictly decreasing, e.g. "1/2,1/4,1/8".
        #[arg(long)]
        eps: Option<String>,
        #[arg(long)]
        paths: Option<usize>,
    },
    /// Run the oracle and property suite.
    Validate {
        #[command(flatten)]
        common: Common,
        /// Also write the named matrices as CSV.
        #[arg(long, value_delimiter = ',')]
        export_matrix: Vec<MatrixExport>,
    },
    /// Repeat the run recorded in a manifest.
    Replay {
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixExport {
    Fractional,
    Heterogeneous,
    Effective,
}

impl FromStr for MatrixExport {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "fractional" => Ok(MatrixExport::Fractional),
            "heterogeneous" => Ok(MatrixExport::Heterogeneous),
            "effective" => Ok(MatrixExport::Effective),
            _ => Err(format!("unknown matrix '{s}' (fractional, heterogeneous, effective)")),
        }
    }
}

fn parse_system(s: &str) -> std::result::Result<SystemChoice, String> {
    match s {
        "het" => Ok(SystemChoice::Het),
        "eff" => Ok(SystemChoice::Eff),
        _ => Err(format!("unknown system '{s}' (het, eff)")),
    }
}

/// Exit code for a library error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Domain(_) | Error::Json(_) => EXIT_VALIDATION,
        Error::Convergence { .. } | Error::Solve(_) | Error::Diverged { .. } => EXIT_NUMERICAL,
        Error::Io(_) => EXIT_USAGE,
    }
}

/// Files written by a run and whether its checks passed.
#[derive(Debug, Default)]
pub struct Outcome {
    pub outputs: Vec<String>,
    pub seeds: Vec<u64>,
    pub code: i32,
}

struct Writer<'a> {
    dir: &'a Path,
    written: Vec<String>,
}

impl Writer<'_> {
    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, contents)?;
        self.written.push(name.to_string());
        Ok(())
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, &text)
    }
}

fn coefficients_for(cfg: &RunConfig) -> Result<(crate::cell::CellSolution, EffectiveCoefficients)> {
    let grid = cfg.cell_grid()?;
    let theta = cfg.theta.spec();
    let chi = solve_cell_problem(&theta, cfg.alpha, &grid, cfg.kernel_mode)?;
    let v = cfg.potential;
    let coeffs = compute_effective_coefficients(&theta, &|y, t| v.eval(y, t), &chi, cfg.alpha, &grid)?;
    Ok((chi, coeffs))
}

/// Runs one invocation against a validated config, writing into `out`.
pub fn execute(inv: &Invocation, cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    fs::create_dir_all(out)?;
    let mut w = Writer { dir: out, written: Vec::new() };
    let mut seeds = Vec::new();
    let mut code = EXIT_OK;
    match inv {
        Invocation::Cell => {
            let grid = cfg.cell_grid()?;
            let chi = solve_cell_problem(&cfg.theta.spec(), cfg.alpha, &grid, cfg.kernel_mode)?;
            w.write("chi.csv", &chi.chi_csv())?;
            let mut poisson = None;
            if !cfg.potential.is_zero() {
                let v = cfg.potential;
                let f = |y: f64, t: f64| v.eval(y, t);
                let xi = solve_periodic_poisson(&f, cfg.alpha, &grid)?;
                poisson = Some(poisson_residual(&xi, &f, cfg.alpha, &grid)?);
                w.write("xi.csv", &grid_csv(&xi, &grid))?;
            }
            w.json("cell.json", &json!({ "solution": chi, "poisson_residual": poisson }))?;
            println!(
                "cell: coercivity {:.6e}, residual {:.3e}, max |chi| {:.6e}",
                chi.coercivity,
                chi.residual,
                chi.chi.amax()
            );
        }
        Invocation::Coefficients => {
            let (chi, c) = coefficients_for(cfg)?;
            let report = json!({
                "alpha": cfg.alpha,
                "kernel_mode": cfg.kernel_mode,
                "theta": cfg.theta,
                "potential": cfg.potential,
                "xi1": c.xi1,
                "xi2": c.xi2,
                "xi3": c.xi3,
                "grid": cfg.cell,
                "tolerances": {
                    "cell_residual": chi.residual,
                    "cell_rhs_norm": chi.rhs_norm,
                    "coercivity": chi.coercivity,
                },
            });
            w.json("coefficients.json", &report)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Invocation::Simulate { system, eps, seed, snapshot_every } => {
            let sim = cfg.sim_config(*eps);
            let grid = Grid1D::new(cfg.n)?;
            let sys = match system {
                SystemChoice::Het => {
                    System::Heterogeneous(KernelParams { kernel_mode: cfg.kernel_mode, ..KernelParams::new(cfg.alpha, cfg.theta.spec(), *eps)? })
                }
                SystemChoice::Eff => System::Effective(coefficients_for(cfg)?.1),
            };
            let path = brownian_increments(*seed, sim.n_steps(), sim.dt)?;
            seeds.push(*seed);
            let record = RecordOptions { snapshot_every: Some((*snapshot_every).max(1)), keep_states: false };
            let traj = simulate(&sys, &sim, &grid, &path, record)?;
            w.write("norm.csv", &traj.norm_csv())?;
            let every = (*snapshot_every).max(1);
            for (i, snap) in traj.snapshots.iter().enumerate() {
                w.write(&format!("snapshots/step_{:06}.csv", i * every), &snapshot_csv(snap, &grid))?;
            }
            println!(
                "simulate: {} steps of {:.6e}, |u(T)|^2 = {:.12e}",
                sim.n_steps(),
                sim.dt,
                traj.norm2.last().copied().unwrap_or(f64::NAN)
            );
        }
        Invocation::Sweep { eps_list, paths } => {
            let prepared = prepare(&cfg.harness_config()?)?;
            let report = eps_sweep(&prepared, eps_list, *paths)?;
            seeds = report.seeds.clone();
            w.write("sweep.csv", &report.to_csv())?;
            w.json("fit.json", &report.fit)?;
            w.json("report.json", &report)?;
            println!("{:>10} {:>14} {:>12} {:>9}", "eps", "strong_err", "strong_se", "excluded");
            for r in &report.rows {
                println!("{:>10.6} {:>14.6e} {:>12.3e} {:>9}", r.eps, r.strong_err, r.strong_se, r.excluded);
            }
            match report.fit.slope {
                Some(s) => println!("log-log slope {s:.4}"),
                None => println!("log-log slope {}", report.fit.status),
            }
            if !report.passed() {
                eprintln!("too many excluded paths at eps = {:?}", report.failed_eps);
                code = EXIT_NUMERICAL;
            }
        }
        Invocation::Validate => {
            let checks = run_suite();
            println!("{:<30} {:>14} {:<28} {}", "check", "measured", "threshold", "result");
            for c in &checks {
                println!(
                    "{:<30} {:>14.4e} {:<28} {}",
                    c.name,
                    c.measured,
                    c.threshold,
                    if c.passed { "PASS" } else { "FAIL" }
                );
            }
            w.json("validate.json", &checks)?;
            if !checks.iter().all(|c| c.passed) {
                code = EXIT_VALIDATION;
            }
        }
    }
    Ok(Outcome { outputs: w.written, seeds, code })
}

fn export_matrices(which: &[MatrixExport], cfg: &RunConfig, out: &Path) -> Result<Vec<String>> {
    let grid = Grid1D::new(cfg.n)?;
    let mut w = Writer { dir: out, written: Vec::new() };
    for m in which {
        let (name, matrix) = match m {
            MatrixExport::Fractional => ("fractional", fractional_laplacian(&grid, cfg.alpha)?),
            MatrixExport::Heterogeneous => {
                let params = KernelParams {
                    kernel_mode: cfg.kernel_mode,
                    ..KernelParams::new(cfg.alpha, cfg.theta.spec(), cfg.epsilon)?
                };
                ("heterogeneous", assemble_heterogeneous_generator(&grid, &params)?)
            }
            MatrixExport::Effective => {
                ("effective", assemble_effective_generator(&coefficients_for(cfg)?.1, &grid, cfg.alpha)?)
            }
        };
        w.write(&format!("matrices/{name}.csv"), &matrix.to_csv())?;
    }
    Ok(w.written)
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

fn write_manifest(
    out: &Path,
    inv: Invocation,
    cfg: &RunConfig,
    started: f64,
    outcome: &Outcome,
) -> Result<()> {
    let mut outputs = outcome.outputs.clone();
    outputs.push("manifest.json".into());
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        software_version: env!("CARGO_PKG_VERSION").to_string(),
        invocation: inv,
        config_hash: cfg.hash(),
        config: cfg.clone(),
        seeds: outcome.seeds.clone(),
        threads: rayon::current_num_threads(),
        started_unix: started,
        finished_unix: unix_now(),
        outputs,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(out.join("manifest.json"), text)?;
    Ok(())
}

fn output_dir(explicit: Option<PathBuf>, cfg: &RunConfig, root: Option<&Path>, name: &str) -> PathBuf {
    explicit.or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| {
        let leaf = format!("{name}-{}", &cfg.hash()[..12]);
        root.map(|r| r.join(&leaf)).unwrap_or_else(|| PathBuf::from("nlhomog-runs").join(leaf))
    })
}

fn config_from(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => load_config(p),
        None => Ok(RunConfig::default()),
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::config(e.to_string()))?;
    pool.install(|| dispatch_in_pool(cli))
}

fn dispatch_in_pool(cli: Cli) -> Result<i32> {
    let root = cli.out_root.as_deref();
    let started = unix_now();
    let (inv, cfg, out, exports) = match cli.command {
        Command::Cell(c) => {
            let cfg = config_from(c.config.as_deref())?;
            let out = output_dir(c.out, &cfg, root, "cell");
            (Invocation::Cell, cfg, out, Vec::new())
        }
        Command::Coefficients(c) => {
            let cfg = config_from(c.config.as_deref())?;
            let out = output_dir(c.out, &cfg, root, "coefficients");
            (Invocation::Coefficients, cfg, out, Vec::new())
        }
        Command::Simulate { common, system, eps, seed, snapshot_every } => {
            let cfg = config_from(common.config.as_deref())?;
            let eps = eps.unwrap_or(cfg.epsilon);
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(Error::config("--eps must be positive"));
            }
            let seed = seed.unwrap_or(cfg.seeds.base);
            let out = output_dir(common.out, &cfg, root, "simulate");
            (Invocation::Simulate { system, eps, seed, snapshot_every }, cfg, out, Vec::new())
        }
        Command::Sweep { common, eps, paths } => {
            let cfg = config_from(common.config.as_deref())?;
            let eps_list = match eps {
                Some(text) => parse_eps_list(&text)?,
                None => cfg.eps_list.clone(),
            };
            let paths = paths.unwrap_or(cfg.seeds.paths);
            let out = output_dir(common.out, &cfg, root, "sweep");
            (Invocation::Sweep { eps_list, paths }, cfg, out, Vec::new())
        }
        Command::Validate { common, export_matrix } => {
            let cfg = config_from(common.config.as_deref())?;
            let out = output_dir(common.out, &cfg, root, "validate");
            (Invocation::Validate, cfg, out, export_matrix)
        }
        Command::Replay { manifest, out } => {
            let m = parse_manifest(&fs::read_to_string(&manifest)?)?;
            let out = out.ok_or_else(|| Error::config("replay needs --out"))?;
            (m.invocation, m.config, out, Vec::new())
        }
    };
    let mut outcome = execute(&inv, &cfg, &out)?;
    if !exports.is_empty() {
        outcome.outputs.extend(export_matrices(&exports, &cfg, &out)?);
    }
    write_manifest(&out, inv, &cfg, started, &outcome)?;
    println!("outputs in {}", out.display());
    Ok(outcome.code)
}

/// Parses `args` (including the program name) and runs; returns the exit
/// code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
