//! θ-scheme time stepping for i du = (H u + f) dt + g(u) dW with Itô noise.
//!
//! Several paths may be advanced together: the state is an n × P matrix
//! whose columns are independent paths sharing the same generator, so each
//! implicit system is factorized once per step for all of them.

use nalgebra::{DMatrix, LU};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::brownian::BrownianPath;
use crate::effective::{assemble_effective_generator, EffectiveCoefficients};
use crate::error::{Error, Result};
use crate::kernel::{assemble_heterogeneous_generator, check_alpha, Field, Grid1D, KernelParams, OperatorMatrix};
use crate::presets::{ForcingPreset, InitialPreset, NoiseModel, PotentialPreset};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Treatment of the stochastic term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseScheme {
    /// Left-point increment plus the Itô–Taylor correction ½ b'b (ΔW² - dt).
    #[default]
    Milstein,
    /// Left-point increment only.
    Euler,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub alpha: f64,
    pub epsilon: f64,
    pub t_final: f64,
    pub dt: f64,
    pub theta_scheme: f64,
    pub potential: PotentialPreset,
    pub forcing: ForcingPreset,
    pub initial: InitialPreset,
    pub noise: NoiseModel,
    pub noise_scheme: NoiseScheme,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            alpha: 1.5,
            epsilon: 0.25,
            t_final: 1.0,
            dt: 1.0 / 64.0,
            theta_scheme: 0.5,
            potential: PotentialPreset::CosYCosTau,
            forcing: ForcingPreset::Zero,
            initial: InitialPreset::Parabola,
            noise: NoiseModel::Zero,
            noise_scheme: NoiseScheme::Milstein,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.dt > 0.0 && self.t_final > 0.0) {
            return Err(Error::config("dt and T must be positive"));
        }
        let steps = self.t_final / self.dt;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return Err(Error::config(format!("T/dt must be an integer, got {steps}")));
        }
        if !(0.0..=1.0).contains(&self.theta_scheme) {
            return Err(Error::config("theta must lie in [0, 1]"));
        }
        self.potential.validate()?;
        self.noise.validate()
    }

    pub fn n_steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }
}

#[derive(Debug, Clone)]
pub enum System {
    Heterogeneous(KernelParams),
    Effective(EffectiveCoefficients),
}

type ComplexLu = LU<Complex64, nalgebra::Dyn, nalgebra::Dyn>;

/// One system prepared for time stepping on a fixed grid.
pub struct Propagator {
    grid: Grid1D,
    generator: OperatorMatrix,
    cfg: SimConfig,
    /// ε^{(1-α)/2}, or zero when no potential acts.
    potential_scale: f64,
    frozen: Option<ComplexLu>,
}

impl Propagator {
    pub fn new(system: &System, grid: &Grid1D, cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        let (generator, potential_scale) = match system {
            System::Heterogeneous(params) => {
                if params.alpha != cfg.alpha || params.epsilon != cfg.epsilon {
                    return Err(Error::config("kernel parameters disagree with the simulation config"));
                }
                let m = assemble_heterogeneous_generator(grid, params)?;
                let scale = if cfg.potential.is_zero() {
                    0.0
                } else {
                    cfg.epsilon.powf((1.0 - cfg.alpha) / 2.0)
                };
                (m, scale)
            }
            System::Effective(coeffs) => (assemble_effective_generator(coeffs, grid, cfg.alpha)?, 0.0),
        };
        Self::from_generator(generator, potential_scale, grid, cfg)
    }

    pub fn from_generator(
        generator: OperatorMatrix,
        potential_scale: f64,
        grid: &Grid1D,
        cfg: &SimConfig,
    ) -> Result<Self> {
        if generator.dim() != grid.n() {
            return Err(Error::config("generator and grid sizes differ"));
        }
        let mut p = Self { grid: grid.clone(), generator, cfg: cfg.clone(), potential_scale, frozen: None };
        if potential_scale == 0.0 || !cfg.potential.depends_on_tau() {
            p.frozen = Some(p.factorize(0.0)?);
        }
        Ok(p)
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn generator(&self) -> &OperatorMatrix {
        &self.generator
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    /// Potential diagonal ε^{(1-α)/2}𝒱(x/ε, t/ε).
    pub fn potential_diagonal(&self, t: f64) -> Vec<f64> {
        if self.potential_scale == 0.0 {
            return vec![0.0; self.grid.n()];
        }
        let eps = self.cfg.epsilon;
        self.grid
            .nodes()
            .iter()
            .map(|&x| self.potential_scale * self.cfg.potential.eval(x / eps, t / eps))
            .collect()
    }

    fn factorize(&self, t: f64) -> Result<ComplexLu> {
        let n = self.grid.n();
        let c = I * (self.cfg.theta_scheme * self.cfg.dt);
        let d = self.potential_diagonal(t);
        let m = &self.generator.entries;
        let a = DMatrix::from_fn(n, n, |i, j| {
            let h = if i == j { m[(i, j)] + d[i] } else { m[(i, j)] };
            let id = if i == j { 1.0 } else { 0.0 };
            Complex64::new(id, 0.0) + c * h
        });
        let lu = a.lu();
        if !lu.is_invertible() {
            return Err(Error::Solve("implicit step matrix is singular".into()));
        }
        Ok(lu)
    }

    fn apply_h(&self, u: &DMatrix<Complex64>, diag: &[f64]) -> DMatrix<Complex64> {
        let re = u.map(|z| z.re);
        let im = u.map(|z| z.im);
        let m = &self.generator.entries;
        let hr = m * re;
        let hi = m * im;
        DMatrix::from_fn(u.nrows(), u.ncols(), |i, j| {
            Complex64::new(hr[(i, j)], hi[(i, j)]) + u[(i, j)] * diag[i]
        })
    }

    /// Advances every column of `u` from t_k to t_{k+1} with the increments
    /// `dw` (one per column). Returns false for columns that became
    /// non-finite.
    pub fn step(&self, u: &mut DMatrix<Complex64>, k: usize, dw: &[f64]) -> Result<Vec<bool>> {
        assert_eq!(u.ncols(), dw.len());
        let cfg = &self.cfg;
        let dt = cfg.dt;
        let theta = cfg.theta_scheme;
        let t_star = (k as f64 + theta) * dt;
        let diag = self.potential_diagonal(t_star);
        let hu = self.apply_h(u, &diag);
        let mut rhs = u.clone();
        let explicit = I * ((1.0 - theta) * dt);
        rhs -= hu * explicit;
        if !cfg.forcing.is_zero() {
            for (i, &x) in self.grid.nodes().iter().enumerate() {
                let f = I * (cfg.forcing.eval(t_star, x) * dt);
                for j in 0..u.ncols() {
                    rhs[(i, j)] -= f;
                }
            }
        }
        if !cfg.noise.is_zero() {
            for j in 0..u.ncols() {
                let w = dw[j];
                let correction = match cfg.noise_scheme {
                    NoiseScheme::Milstein => 0.5 * (w * w - dt),
                    NoiseScheme::Euler => 0.0,
                };
                for i in 0..u.nrows() {
                    let v = u[(i, j)];
                    rhs[(i, j)] -= I * cfg.noise.g(v) * w;
                    if correction != 0.0 {
                        rhs[(i, j)] += cfg.noise.milstein_factor(v) * correction;
                    }
                }
            }
        }
        let next = match &self.frozen {
            Some(lu) => lu.solve(&rhs),
            None => self.factorize(t_star)?.solve(&rhs),
        }
        .ok_or_else(|| Error::Solve("implicit step solve failed".into()))?;
        *u = next;
        Ok((0..u.ncols())
            .map(|j| u.column(j).iter().all(|z| z.re.is_finite() && z.im.is_finite() && z.norm() < 1e150))
            .collect())
    }

    pub fn initial_state(&self, paths: usize) -> DMatrix<Complex64> {
        let h0 = self.grid.sample(|x| self.cfg.initial.eval(x));
        DMatrix::from_fn(self.grid.n(), paths, |i, _| h0[i])
    }
}

/// Time series of one simulated path.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub norm2: Vec<f64>,
    pub re_mass: Vec<f64>,
    pub im_mass: Vec<f64>,
    pub snapshots: Vec<Field>,
    pub states: Option<Vec<Vec<Complex64>>>,
    pub final_state: Field,
}

impl Trajectory {
    pub fn norm_csv(&self) -> String {
        let mut out = String::from("t,norm2,re_mass,im_mass\n");
        for k in 0..self.times.len() {
            out.push_str(&format!(
                "{:.17e},{:.17e},{:.17e},{:.17e}\n",
                self.times[k], self.norm2[k], self.re_mass[k], self.im_mass[k]
            ));
        }
        out
    }
}

pub fn snapshot_csv(field: &Field, grid: &Grid1D) -> String {
    let mut out = String::from("x,re_u,im_u\n");
    for (x, v) in grid.nodes().iter().zip(&field.values) {
        out.push_str(&format!("{:.17e},{:.17e},{:.17e}\n", x, v.re, v.im));
    }
    out
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RecordOptions {
    /// Keep a snapshot every this many steps (and the initial state).
    pub snapshot_every: Option<usize>,
    /// Keep every state.
    pub keep_states: bool,
}

/// Integrates one path on [0, T].
pub fn simulate(
    system: &System,
    cfg: &SimConfig,
    grid: &Grid1D,
    path: &BrownianPath,
    record: RecordOptions,
) -> Result<Trajectory> {
    let prop = Propagator::new(system, grid, cfg)?;
    simulate_with(&prop, path, record)
}

pub fn simulate_with(prop: &Propagator, path: &BrownianPath, record: RecordOptions) -> Result<Trajectory> {
    let cfg = prop.config();
    let grid = prop.grid();
    let steps = cfg.n_steps();
    if path.n_steps() != steps || (path.dt - cfg.dt).abs() > 1e-12 * cfg.dt {
        return Err(Error::config(format!(
            "Brownian path has {} steps of {}, the run needs {} of {}",
            path.n_steps(),
            path.dt,
            steps,
            cfg.dt
        )));
    }
    let mut u = prop.initial_state(1);
    let mut traj = Trajectory {
        times: Vec::with_capacity(steps + 1),
        norm2: Vec::with_capacity(steps + 1),
        re_mass: Vec::with_capacity(steps + 1),
        im_mass: Vec::with_capacity(steps + 1),
        snapshots: Vec::new(),
        states: record.keep_states.then(Vec::new),
        final_state: Field::new(Vec::new(), 0.0),
    };
    let push = |traj: &mut Trajectory, u: &DMatrix<Complex64>, k: usize| {
        let t = k as f64 * cfg.dt;
        let v: Vec<Complex64> = u.column(0).iter().copied().collect();
        let mass: Complex64 = v.iter().sum::<Complex64>() * grid.h();
        traj.times.push(t);
        traj.norm2.push(grid.norm_sq(&v));
        traj.re_mass.push(mass.re);
        traj.im_mass.push(mass.im);
        if let Some(every) = record.snapshot_every {
            if every > 0 && k % every == 0 {
                traj.snapshots.push(Field::new(v.clone(), t));
            }
        }
        if let Some(states) = traj.states.as_mut() {
            states.push(v);
        }
    };
    push(&mut traj, &u, 0);
    for k in 0..steps {
        let ok = prop.step(&mut u, k, &path.increments[k..k + 1])?;
        if !ok[0] {
            return Err(Error::Diverged { step: k + 1 });
        }
        push(&mut traj, &u, k + 1);
    }
    traj.final_state = Field::new(u.column(0).iter().copied().collect(), steps as f64 * cfg.dt);
    Ok(traj)
}

/// Single θ-step of one field with explicit data, as a pure function.
pub fn theta_step(
    u: &Field,
    generator: &OperatorMatrix,
    potential_diag: Option<&[f64]>,
    forcing: &[Complex64],
    dw: f64,
    cfg: &SimConfig,
) -> Result<Field> {
    let n = u.values.len();
    if generator.dim() != n || forcing.len() != n {
        return Err(Error::config("field, generator and forcing sizes differ"));
    }
    let dt = cfg.dt;
    let theta = cfg.theta_scheme;
    let zero = vec![0.0; n];
    let d = potential_diag.unwrap_or(&zero);
    let m = &generator.entries;
    let h = |i: usize, j: usize| if i == j { m[(i, j)] + d[i] } else { m[(i, j)] };
    let a = DMatrix::from_fn(n, n, |i, j| {
        Complex64::new(if i == j { 1.0 } else { 0.0 }, 0.0) + I * (theta * dt * h(i, j))
    });
    let mut rhs = nalgebra::DVector::from_fn(n, |i, _| {
        let mut hu = Complex64::new(0.0, 0.0);
        for j in 0..n {
            hu += u.values[j] * h(i, j);
        }
        u.values[i] - I * ((1.0 - theta) * dt) * hu - I * forcing[i] * dt - I * cfg.noise.g(u.values[i]) * dw
    });
    if cfg.noise_scheme == NoiseScheme::Milstein && !cfg.noise.is_zero() {
        for i in 0..n {
            rhs[i] += cfg.noise.milstein_factor(u.values[i]) * (0.5 * (dw * dw - dt));
        }
    }
    let x = a.lu().solve(&rhs).ok_or_else(|| Error::Solve("implicit step matrix is singular".into()))?;
    Ok(Field::new(x.iter().copied().collect(), u.time + dt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brownian::brownian_increments;
    use crate::kernel::{fractional_laplacian, ThetaSpec};

    fn cfg() -> SimConfig {
        SimConfig { potential: PotentialPreset::Zero, ..SimConfig::default() }
    }

    #[test]
    fn crank_nicolson_conserves_norm() {
        let grid = Grid1D::new(64).unwrap();
        let l = fractional_laplacian(&grid, 1.5).unwrap();
        let u = Field::new(grid.sample(|x| InitialPreset::ModulatedBump.eval(x)), 0.0);
        let f = vec![Complex64::new(0.0, 0.0); 64];
        let next = theta_step(&u, &l, None, &f, 0.3, &cfg()).unwrap();
        assert!((grid.norm_sq(&next.values) - grid.norm_sq(&u.values)).abs() < 1e-10);
    }

    #[test]
    fn step_is_linear_for_linear_noise() {
        let grid = Grid1D::new(32).unwrap();
        let l = fractional_laplacian(&grid, 1.5).unwrap();
        let c = SimConfig { noise: NoiseModel::Linear { sigma: 0.5 }, ..cfg() };
        let f = vec![Complex64::new(0.0, 0.0); 32];
        let u = Field::new(grid.sample(|x| InitialPreset::Parabola.eval(x)), 0.0);
        let v = Field::new(grid.sample(|x| InitialPreset::ModulatedBump.eval(x)), 0.0);
        let w = Field::new(u.values.iter().zip(&v.values).map(|(a, b)| a + b).collect(), 0.0);
        let su = theta_step(&u, &l, None, &f, 0.17, &c).unwrap();
        let sv = theta_step(&v, &l, None, &f, 0.17, &c).unwrap();
        let sw = theta_step(&w, &l, None, &f, 0.17, &c).unwrap();
        for i in 0..32 {
            assert!((sw.values[i] - su.values[i] - sv.values[i]).norm() < 1e-12);
        }
    }

    #[test]
    fn batched_step_matches_single_step() {
        let grid = Grid1D::new(24).unwrap();
        let c = SimConfig {
            noise: NoiseModel::Bounded { sigma: 0.4 },
            forcing: ForcingPreset::BumpCos { amplitude: 0.3 },
            potential: PotentialPreset::CosYCosTau,
            ..SimConfig::default()
        };
        let params = KernelParams::new(1.5, ThetaSpec::Constant(1.0), c.epsilon).unwrap();
        let prop = Propagator::new(&System::Heterogeneous(params), &grid, &c).unwrap();
        let mut u = prop.initial_state(1);
        prop.step(&mut u, 3, &[0.11]).unwrap();
        let t_star = 3.5 * c.dt;
        let d = prop.potential_diagonal(t_star);
        let f: Vec<Complex64> = grid.nodes().iter().map(|&x| Complex64::new(c.forcing.eval(t_star, x), 0.0)).collect();
        let init = Field::new(prop.initial_state(1).column(0).iter().copied().collect(), 0.0);
        let single = theta_step(&init, prop.generator(), Some(&d), &f, 0.11, &c).unwrap();
        for i in 0..24 {
            assert!((single.values[i] - u[(i, 0)]).norm() < 1e-13);
        }
    }

    #[test]
    fn zero_datum_stays_zero() {
        let grid = Grid1D::new(16).unwrap();
        let c = SimConfig { initial: InitialPreset::Zero, noise: NoiseModel::Bounded { sigma: 1.0 }, ..SimConfig::default() };
        let params = KernelParams::new(1.5, ThetaSpec::Constant(1.0), c.epsilon).unwrap();
        let path = brownian_increments(1, c.n_steps(), c.dt).unwrap();
        let t = simulate(&System::Heterogeneous(params), &c, &grid, &path, RecordOptions::default()).unwrap();
        assert!(t.final_state.values.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn effective_identity_matches_constant_heterogeneous() {
        let grid = Grid1D::new(32).unwrap();
        let c = SimConfig { noise: NoiseModel::Linear { sigma: 0.3 }, ..cfg() };
        let params = KernelParams::new(1.5, ThetaSpec::Constant(1.0), c.epsilon).unwrap();
        let path = brownian_increments(5, c.n_steps(), c.dt).unwrap();
        let het = simulate(&System::Heterogeneous(params), &c, &grid, &path, RecordOptions::default()).unwrap();
        let eff = simulate(
            &System::Effective(EffectiveCoefficients::new(1.0, 0.0, 0.0)),
            &c,
            &grid,
            &path,
            RecordOptions::default(),
        )
        .unwrap();
        assert_eq!(het.final_state, eff.final_state);
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = SimConfig { dt: 0.3, ..cfg() };
        assert!(bad.validate().is_err());
        let bad = SimConfig { theta_scheme: 1.5, ..cfg() };
        assert!(bad.validate().is_err());
        let bad = SimConfig { potential: PotentialPreset::OnePlusCos, ..cfg() };
        assert!(bad.validate().is_err());
    }
}
