//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nlhomog::cell::{solve_cell_problem, CellGrid};
use nlhomog::cli;
use nlhomog::harness::{eps_sweep, prepare, HarnessConfig};
use nlhomog::integrator::SimConfig;
use nlhomog::kernel::{KernelMode, ThetaSpec};
use nlhomog::presets::{NoiseModel, PotentialPreset};
use nlhomog::validation::{
    constant_theta_reduction, ito_growth_errors, manufactured_cell_error, norm_drift, poisson_residuals,
    quadratic_form_defects, rho_quadrature_error, strong_self_convergence,
};

type Check = std::result::Result<String, String>;

fn verdict(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err(e: impl std::fmt::Display) -> String {
    format!("error: {e}")
}

fn sci(values: &[f64]) -> String {
    let parts: Vec<String> = values.iter().map(|v| format!("{v:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn default_cell() -> CellGrid {
    CellGrid::new(256, 8, 64).unwrap()
}

fn constant_theta_example() -> Check {
    let mut lines = Vec::new();
    let mut ok = true;
    for alpha in [1.25, 1.5, 1.75] {
        let r = constant_theta_reduction(alpha, 256, &default_cell()).map_err(err)?;
        let c = &r.coefficients;
        let dev = r.effective_vs_fractional.max(r.heterogeneous_vs_fractional);
        ok &= c.xi1 == 1.0 && c.xi2.abs() < 1e-8 && c.xi3.abs() < 1e-8 && dev < 1e-12;
        lines.push(format!("a={alpha}: xi1={} |xi2|={:.1e} |xi3|={:.1e} dev={dev:.1e}", c.xi1, c.xi2.abs(), c.xi3.abs()));
    }
    verdict(ok, lines.join("; "))
}

fn quadratic_form() -> Check {
    let d = quadratic_form_defects(512, 1.5).map_err(err)?;
    let worst = d.iter().map(|x| x.1).fold(0.0, f64::max);
    verdict(d.len() == 5 && worst < 1e-6, format!("{} fields at n=512, worst rel {worst:.2e}", d.len()))
}

fn rho_closed_form() -> Check {
    let mut worst = 0.0f64;
    for (k, alpha) in [1.25, 1.5, 1.75].into_iter().enumerate() {
        worst = worst.max(rho_quadrature_error(alpha, 100, 1000 + k as u64).map_err(err)?);
    }
    verdict(worst < 1e-8, format!("100 points x 3 alphas, worst rel {worst:.2e}"))
}

fn cell_solver() -> Check {
    let grid = default_cell();
    let osc = solve_cell_problem(&ThetaSpec::SumCos { mean: 1.5, amp: 0.4 }, 1.5, &grid, KernelMode::Periodized)
        .map_err(err)?;
    let manufactured = manufactured_cell_error(256, 64, 1.5).map_err(err)?;
    let flat = solve_cell_problem(&ThetaSpec::Constant(1.0), 1.5, &grid, KernelMode::Periodized).map_err(err)?;
    let chi_norm = (flat.chi.iter().map(|v| v * v).sum::<f64>() / flat.chi.len() as f64).sqrt();
    verdict(
        osc.coercivity > 0.0 && manufactured < 1e-6 && chi_norm < 1e-8,
        format!("coercivity {:.3e}, manufactured rel {manufactured:.2e}, |chi| for constant theta {chi_norm:.1e}", osc.coercivity),
    )
}

fn periodic_poisson() -> Check {
    let r = poisson_residuals(1.5, &default_cell()).map_err(err)?;
    let worst = r.iter().map(|x| x.1).fold(0.0, f64::max);
    verdict(r.len() == 3 && worst < 1e-8, format!("3 presets, worst residual {worst:.2e}"))
}

fn norm_conservation() -> Check {
    let cfg = SimConfig { potential: PotentialPreset::CosYCosTau, theta_scheme: 0.5, t_final: 1.0, ..SimConfig::default() };
    let e = norm_drift(256, &cfg).map_err(err)?;
    verdict(e < 1e-8, format!("n=256 T=1 relative drift {e:.2e}"))
}

fn ito_growth() -> Check {
    let errs = ito_growth_errors(256, &SimConfig::default(), 0.5, 3, 5).map_err(err)?;
    let ratios: Vec<f64> = errs.windows(2).map(|w| w[0] / w[1]).collect();
    let ok = ratios.len() == 3 && ratios.iter().all(|r| (1.6..=2.4).contains(r));
    verdict(ok, format!("errors {}, ratios {ratios:.3?}", sci(&errs)))
}

fn strong_self_convergence_order() -> Check {
    let cfg = SimConfig { dt: 1.0 / 16.0, noise: NoiseModel::Bounded { sigma: 0.5 }, ..SimConfig::default() };
    let s = strong_self_convergence(256, &cfg, 32, 3, 3, 100).map_err(err)?;
    verdict(s.order >= 0.4, format!("32 paths, errors {}, order {:.3}", sci(&s.errors), s.order))
}

fn homogenization_sweep() -> Check {
    let cfg = HarnessConfig {
        sim: SimConfig {
            alpha: 1.5,
            potential: PotentialPreset::CosYCosTau,
            noise: NoiseModel::Bounded { sigma: 0.5 },
            ..SimConfig::default()
        },
        n: 256,
        theta: ThetaSpec::Constant(1.0),
        kernel_mode: KernelMode::Periodized,
        cell: default_cell(),
        dt_max: 1.0 / 64.0,
        steps_per_eps: 8.0,
        base_seed: 2024,
    };
    let prepared = prepare(&cfg).map_err(err)?;
    let r = eps_sweep(&prepared, &[0.5, 0.25, 0.125, 0.0625], 32).map_err(err)?;
    let errs: Vec<f64> = r.rows.iter().map(|x| x.strong_err).collect();
    let first = errs[0];
    let last = errs[errs.len() - 1];
    let excluded_ok = r.rows.iter().all(|x| x.excluded as f64 <= 0.2 * x.paths as f64);
    let ok = r.is_monotone_decreasing() && last <= first / 2.0 && excluded_ok && r.passed();
    let slope = r.fit.slope.map(|s| format!("{s:.3}")).unwrap_or_else(|| r.fit.status.clone());
    verdict(ok, format!("errors {}, excluded {:?}, slope {slope}", sci(&errs), r.rows.iter().map(|x| x.excluded).collect::<Vec<_>>()))
}

/// Every CSV under `dir`, keyed by relative path, with the timing column of
/// sweep tables removed.
fn csv_outputs(dir: &Path) -> BTreeMap<PathBuf, String> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, String>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else if path.extension().is_some_and(|e| e == "csv") {
                let text = fs::read_to_string(&path).unwrap();
                let text = if path.file_name().is_some_and(|n| n == "sweep.csv") { drop_last_column(&text) } else { text };
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), text);
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

fn drop_last_column(text: &str) -> String {
    text.lines().map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head)).collect::<Vec<_>>().join("\n")
}

fn reproducibility() -> Check {
    let tmp = tempfile::tempdir().map_err(err)?;
    let config = tmp.path().join("config.json");
    fs::write(&config, r#"{"n": 64, "cell": {"m": 64, "m_tau": 4, "images": 16}, "seeds": {"base": 9, "paths": 4}}"#)
        .map_err(err)?;
    let config = config.to_str().unwrap();
    let runs: Vec<(&str, Vec<&str>)> = vec![
        ("cell", vec!["cell"]),
        ("het", vec!["simulate", "--system", "het", "--eps", "0.125", "--seed", "4"]),
        ("eff", vec!["simulate", "--system", "eff", "--seed", "4"]),
        ("sweep", vec!["sweep", "--eps", "1/2,1/4,1/8"]),
    ];
    let mut compared = 0;
    for (name, args) in runs {
        let first = tmp.path().join(format!("{name}-a"));
        let second = tmp.path().join(format!("{name}-b"));
        let mut argv = vec!["nlhomog", "--threads", "1"];
        argv.extend(&args);
        argv.extend(["--config", config, "--out", first.to_str().unwrap()]);
        if cli::run(argv) != 0 {
            return Err(format!("{name}: first run failed"));
        }
        let manifest = first.join("manifest.json");
        let code = cli::run(["nlhomog", "--threads", "1", "replay", manifest.to_str().unwrap(), "--out", second.to_str().unwrap()]);
        if code != 0 {
            return Err(format!("{name}: replay failed"));
        }
        let (a, b) = (csv_outputs(&first), csv_outputs(&second));
        if a.is_empty() || a != b {
            return Err(format!("{name}: CSV outputs differ"));
        }
        compared += a.len();
    }
    Ok(format!("{compared} CSV files identical after manifest replay (sweep wall_s column excluded)"))
}

fn main() {
    let criteria: Vec<(&str, f64, fn() -> Check)> = vec![
        ("1 constant-theta example", 10.0, constant_theta_example),
        ("2 quadratic-form identity", 30.0, quadratic_form),
        ("3 rho closed form", 5.0, rho_closed_form),
        ("4 cell solver", 60.0, cell_solver),
        ("5 periodic Poisson", 10.0, periodic_poisson),
        ("6 norm conservation", 30.0, norm_conservation),
        ("7 Ito growth law", 120.0, ito_growth),
        ("8 strong self-convergence", 300.0, strong_self_convergence_order),
        ("9 homogenization sweep", 900.0, homogenization_sweep),
        ("10 reproducibility", f64::INFINITY, reproducibility),
    ];
    let mut failures = 0;
    for (name, budget, run) in criteria {
        let start = Instant::now();
        let result = run();
        let secs = start.elapsed().as_secs_f64();
        let (ok, detail) = match result {
            Ok(d) if secs <= budget => (true, d),
            Ok(d) => (false, format!("{d}; over the {budget} s budget")),
            Err(d) => (false, d),
        };
        failures += usize::from(!ok);
        println!("criterion {name}: {} ({secs:.1} s) {detail}", if ok { "PASS" } else { "FAIL" });
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
