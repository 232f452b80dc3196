//! Coupled heterogeneous/effective simulations and ε-sweeps measuring the
//! strong space-time L² error, tested weak errors and a corrector check.
//!
//! For one path the strong error is dt·h·Σ_{k≥1}Σ_i |u_ε(t_k, x_i) - ũ(t_k, x_i)|²;
//! the reported value is its mean over paths.

use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::brownian::brownian_increments;
use crate::cell::{solve_cell_problem, CellGrid, CellSolution};
use crate::effective::{compute_effective_coefficients, DriftOperators, EffectiveCoefficients};
use crate::error::{Error, Result};
use crate::integrator::{Propagator, SimConfig, System};
use crate::kernel::{gamma, Grid1D, KernelMode, KernelParams, ThetaSpec};

/// Largest share of diverged paths tolerated per ε.
pub const MAX_EXCLUDED_FRACTION: f64 = 0.2;

/// dt = T / ceil(T / min(dt_max, ε / steps_per_eps)), with the step count.
pub fn step_rule(t_final: f64, dt_max: f64, steps_per_eps: f64, eps: f64) -> (f64, usize) {
    let target = dt_max.min(eps / steps_per_eps);
    let steps = (t_final / target - 1e-9).ceil().max(1.0) as usize;
    (t_final / steps as f64, steps)
}

#[derive(Debug, Clone)]
pub struct HarnessConfig {
    /// Base simulation settings; ε and dt are set per sweep entry.
    pub sim: SimConfig,
    pub n: usize,
    pub theta: ThetaSpec,
    pub kernel_mode: KernelMode,
    pub cell: CellGrid,
    pub dt_max: f64,
    /// dt ≤ ε / steps_per_eps resolves the fast time scale.
    pub steps_per_eps: f64,
    pub base_seed: u64,
}

impl HarnessConfig {
    /// Time step and step count for a given ε.
    pub fn step_for(&self, eps: f64) -> (f64, usize) {
        step_rule(self.sim.t_final, self.dt_max, self.steps_per_eps, eps)
    }

    pub fn seeds(&self, paths: usize) -> Vec<u64> {
        (0..paths as u64).map(|p| self.base_seed.wrapping_add(p)).collect()
    }
}

/// Effective data shared by every ε.
pub struct Prepared {
    pub cfg: HarnessConfig,
    pub grid: Grid1D,
    pub chi: CellSolution,
    pub coeffs: EffectiveCoefficients,
}

pub fn prepare(cfg: &HarnessConfig) -> Result<Prepared> {
    let grid = Grid1D::new(cfg.n)?;
    cfg.sim.potential.validate()?;
    let chi = solve_cell_problem(&cfg.theta, cfg.sim.alpha, &cfg.cell, cfg.kernel_mode)?;
    let v = cfg.sim.potential;
    let coeffs = compute_effective_coefficients(&cfg.theta, &|y, t| v.eval(y, t), &chi, cfg.sim.alpha, &cfg.cell)?;
    Ok(Prepared { cfg: cfg.clone(), grid, chi, coeffs })
}

/// Test functions for the weak errors.
pub fn test_functions() -> Vec<(&'static str, fn(f64) -> f64)> {
    fn poly(x: f64) -> f64 {
        (1.0 - x * x).powi(2)
    }
    fn mode(x: f64) -> f64 {
        (2.0 * PI * x).sin() * (1.0 - x * x)
    }
    vec![("poly_bump", poly), ("fourier_mode", mode)]
}

#[derive(Debug, Clone)]
pub struct BatchResult {
    pub seeds: Vec<u64>,
    pub strong: Vec<f64>,
    /// weak[ψ][path] = dt·h·ΣΣ (u_ε - ũ)·ψ
    pub weak: Vec<Vec<Complex64>>,
    pub alive: Vec<bool>,
    pub dt: f64,
    pub steps: usize,
}

impl Prepared {
    fn sim_for(&self, eps: f64) -> (SimConfig, usize) {
        let (dt, steps) = self.cfg.step_for(eps);
        (SimConfig { epsilon: eps, dt, ..self.cfg.sim.clone() }, steps)
    }

    fn propagators(&self, eps: f64) -> Result<(Propagator, Propagator, SimConfig, usize)> {
        let (sim, steps) = self.sim_for(eps);
        let params = KernelParams {
            alpha: sim.alpha,
            theta: self.cfg.theta.clone(),
            epsilon: eps,
            kernel_mode: self.cfg.kernel_mode,
        };
        let het = Propagator::new(&System::Heterogeneous(params), &self.grid, &sim)?;
        let eff = Propagator::new(&System::Effective(self.coeffs.clone()), &self.grid, &sim)?;
        Ok((het, eff, sim, steps))
    }

    /// Runs both systems on the paths given by `seeds`, stepping all paths
    /// together.
    pub fn coupled_batch(&self, eps: f64, seeds: &[u64]) -> Result<BatchResult> {
        let (het, eff, sim, steps) = self.propagators(eps)?;
        let paths: Vec<Vec<f64>> = seeds
            .iter()
            .map(|&s| brownian_increments(s, steps, sim.dt).map(|p| p.increments))
            .collect::<Result<_>>()?;
        let p = seeds.len();
        let n = self.grid.n();
        let h = self.grid.h();
        let psis: Vec<Vec<f64>> =
            test_functions().iter().map(|(_, f)| self.grid.nodes().iter().map(|&x| f(x)).collect()).collect();
        let mut u = het.initial_state(p);
        let mut w = eff.initial_state(p);
        let mut strong = vec![0.0; p];
        let mut weak = vec![vec![Complex64::new(0.0, 0.0); p]; psis.len()];
        let mut alive = vec![true; p];
        let mut dw = vec![0.0; p];
        for k in 0..steps {
            for j in 0..p {
                dw[j] = paths[j][k];
            }
            let ok_u = het.step(&mut u, k, &dw)?;
            let ok_w = eff.step(&mut w, k, &dw)?;
            for j in 0..p {
                if !(ok_u[j] && ok_w[j]) {
                    alive[j] = false;
                }
                if !alive[j] {
                    continue;
                }
                let mut acc = 0.0;
                for i in 0..n {
                    let d = u[(i, j)] - w[(i, j)];
                    acc += d.norm_sqr();
                    for (q, psi) in psis.iter().enumerate() {
                        weak[q][j] += d * (psi[i] * sim.dt * h);
                    }
                }
                strong[j] += sim.dt * h * acc;
            }
        }
        Ok(BatchResult { seeds: seeds.to_vec(), strong, weak, alive, dt: sim.dt, steps })
    }

    /// Strong error of one coupled path, or `None` if it diverged.
    pub fn coupled_pair_error(&self, eps: f64, seed: u64) -> Result<Option<f64>> {
        let b = self.coupled_batch(eps, &[seed])?;
        Ok(b.alive[0].then_some(b.strong[0]))
    }

    /// Discrete L²(Q×D) norm of D*u_ε - D*ũ - D*_y u₁ with
    /// u₁(x, t, y) = -ζ̃(x, t) χ(y, t/ε), evaluated at y = x/ε, η = z/ε.
    pub fn corrector_residual(&self, eps: f64, seed: u64) -> Result<f64> {
        let (het, eff, sim, steps) = self.propagators(eps)?;
        let path = brownian_increments(seed, steps, sim.dt)?;
        let ops = DriftOperators::new(&self.grid, sim.alpha)?;
        let zeta_int = ops.zeta_interior();
        let n = self.grid.n();
        let h = self.grid.h();
        let alpha = sim.alpha;
        let x = self.grid.nodes().to_vec();
        let mut g_x = DMatrix::zeros(n, n);
        let mut g_y = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    g_x[(i, j)] = gamma(x[i], x[j], alpha)?;
                    g_y[(i, j)] = gamma(x[i] / eps, x[j] / eps, alpha)?;
                }
            }
        }
        let mut u = het.initial_state(1);
        let mut w = eff.initial_state(1);
        let mut total = 0.0;
        for k in 0..steps {
            let ok_u = het.step(&mut u, k, &path.increments[k..k + 1])?;
            let ok_w = eff.step(&mut w, k, &path.increments[k..k + 1])?;
            if !(ok_u[0] && ok_w[0]) {
                return Err(Error::Diverged { step: k + 1 });
            }
            let t = (k + 1) as f64 * sim.dt;
            let wv: Vec<Complex64> = w.column(0).iter().copied().collect();
            let zeta: Vec<Complex64> = (0..n)
                .map(|i| (0..n).map(|j| wv[j] * zeta_int[(i, j)]).sum())
                .collect();
            let chi: Vec<f64> = x.iter().map(|&xi| self.chi.chi_at(xi / eps, t / eps)).collect();
            let mut acc = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let d_het = -(u[(j, 0)] - u[(i, 0)]) * g_x[(i, j)];
                    let d_eff = -(wv[j] - wv[i]) * g_x[(i, j)];
                    // D*_y u₁ = ζ̃(x)(χ(η) - χ(y)) γ(y, η)
                    let d_cor = zeta[i] * ((chi[j] - chi[i]) * g_y[(i, j)]);
                    acc += (d_het - d_eff - d_cor).norm_sqr();
                }
            }
            total += sim.dt * h * h * acc;
        }
        Ok(total.sqrt())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub eps: f64,
    pub dt: f64,
    pub steps: usize,
    pub paths: usize,
    pub strong_err: f64,
    pub strong_se: f64,
    pub weak_err: Vec<f64>,
    /// Cauchy–Schwarz bound sqrt(strong_err)·‖ψ‖ for each weak error.
    pub weak_bound: Vec<f64>,
    pub excluded: usize,
    pub wall_s: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct FitReport {
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub r2: Option<f64>,
    pub status: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub fit: FitReport,
    pub seeds: Vec<u64>,
    pub test_functions: Vec<String>,
    pub coefficients: EffectiveCoefficients,
    /// ε values whose exclusion rate exceeded the limit.
    pub failed_eps: Vec<f64>,
    pub metric: String,
}

impl SweepReport {
    pub fn passed(&self) -> bool {
        self.failed_eps.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let k = self.test_functions.len();
        let mut out = String::from("eps,strong_err,strong_se");
        for q in 1..=k {
            out.push_str(&format!(",weak_err_{q}"));
        }
        out.push_str(",excluded,wall_s\n");
        for r in &self.rows {
            out.push_str(&format!("{:.17e},{:.17e},{:.17e}", r.eps, r.strong_err, r.strong_se));
            for v in &r.weak_err {
                out.push_str(&format!(",{v:.17e}"));
            }
            out.push_str(&format!(",{},{:.3}\n", r.excluded, r.wall_s));
        }
        out
    }

    pub fn is_monotone_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].strong_err < w[0].strong_err)
    }
}

/// Least-squares fit of ln E against ln ε.
pub fn loglog_fit(eps: &[f64], err: &[f64]) -> FitReport {
    let undefined = |why: &str| FitReport { slope: None, intercept: None, r2: None, status: format!("undefined: {why}") };
    if eps.len() < 2 {
        return undefined("fewer than two epsilon values");
    }
    if err.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
        return undefined("errors at the round-off floor");
    }
    let xs: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let ys: Vec<f64> = err.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return undefined("repeated epsilon values");
    }
    if syy <= 1e-24 * my.abs().max(1.0) {
        return undefined("errors do not vary with epsilon");
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = sxy * sxy / (sxx * syy);
    FitReport { slope: Some(slope), intercept: Some(intercept), r2: Some(r2), status: "ok".into() }
}

pub fn validate_eps_list(eps_list: &[f64]) -> Result<()> {
    if eps_list.is_empty() {
        return Err(Error::config("epsilon list is empty"));
    }
    if eps_list.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
        return Err(Error::config("epsilon values must be positive"));
    }
    if eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::config("epsilon list must be strictly decreasing"));
    }
    Ok(())
}

/// Mean strong errors, standard errors and weak errors for each ε.
pub fn eps_sweep(prepared: &Prepared, eps_list: &[f64], paths: usize) -> Result<SweepReport> {
    validate_eps_list(eps_list)?;
    if paths < 2 {
        return Err(Error::config("a sweep needs at least two paths"));
    }
    let seeds = prepared.cfg.seeds(paths);
    let h = prepared.grid.h();
    let t_final = prepared.cfg.sim.t_final;
    let psi_norms: Vec<f64> = test_functions()
        .iter()
        .map(|(_, f)| (t_final * h * prepared.grid.nodes().iter().map(|&x| f(x).powi(2)).sum::<f64>()).sqrt())
        .collect();

    let rows: Vec<SweepRow> = eps_list
        .par_iter()
        .map(|&eps| -> Result<SweepRow> {
            let start = Instant::now();
            let b = prepared.coupled_batch(eps, &seeds)?;
            let kept: Vec<usize> = (0..paths).filter(|&j| b.alive[j]).collect();
            let m = kept.len();
            let (strong_err, strong_se) = if m == 0 {
                (f64::NAN, f64::NAN)
            } else {
                let mean = kept.iter().map(|&j| b.strong[j]).sum::<f64>() / m as f64;
                let var = if m > 1 {
                    kept.iter().map(|&j| (b.strong[j] - mean).powi(2)).sum::<f64>() / (m - 1) as f64
                } else {
                    0.0
                };
                (mean, (var / m as f64).sqrt())
            };
            let weak_err: Vec<f64> = b
                .weak
                .iter()
                .map(|w| (kept.iter().map(|&j| w[j]).sum::<Complex64>() / m.max(1) as f64).norm())
                .collect();
            let weak_bound = psi_norms.iter().map(|nrm| strong_err.sqrt() * nrm).collect();
            Ok(SweepRow {
                eps,
                dt: b.dt,
                steps: b.steps,
                paths,
                strong_err,
                strong_se,
                weak_err,
                weak_bound,
                excluded: paths - m,
                wall_s: start.elapsed().as_secs_f64(),
            })
        })
        .collect::<Result<_>>()?;

    let failed_eps = rows
        .iter()
        .filter(|r| r.excluded as f64 > MAX_EXCLUDED_FRACTION * r.paths as f64)
        .map(|r| r.eps)
        .collect();
    let fit = loglog_fit(
        &rows.iter().map(|r| r.eps).collect::<Vec<_>>(),
        &rows.iter().map(|r| r.strong_err).collect::<Vec<_>>(),
    );
    Ok(SweepReport {
        rows,
        fit,
        seeds,
        test_functions: test_functions().iter().map(|(n, _)| n.to_string()).collect(),
        coefficients: prepared.coeffs.clone(),
        failed_eps,
        metric: "mean over paths of dt*h*sum_{k>=1} sum_i |u_eps(t_k,x_i) - u_eff(t_k,x_i)|^2".into(),
    })
}
