//! Periodic cell problem for the corrector χ and the periodic nonlocal
//! Poisson problem for ξ on the unit cell Y = (0, 1).
//!
//! Functions on the cell are sampled at the cell-centred nodes
//! y_j = (j + 1/2)/m. The bilinear form is represented by its Gram matrix
//! G with vᵀGw ≈ â(w, v) under the rectangle rule (weights 1/m).

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernel::{check_alpha, KernelMode, ThetaSpec};
use crate::quad;
use crate::singular::{power_tail, singular_weights, Behaviour};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CellGrid {
    pub m: usize,
    pub m_tau: usize,
    /// Number of whole periods summed on each side in periodized mode.
    pub images: usize,
}

impl CellGrid {
    pub fn new(m: usize, m_tau: usize, images: usize) -> Result<Self> {
        if m < 8 {
            return Err(Error::config(format!("cell grid needs m >= 8, got {m}")));
        }
        if m_tau < 1 {
            return Err(Error::config("cell grid needs at least one tau node"));
        }
        if images < 1 {
            return Err(Error::config("periodized kernel needs at least one image"));
        }
        Ok(Self { m, m_tau, images })
    }

    pub fn y(&self, j: usize) -> f64 {
        (j as f64 + 0.5) / self.m as f64
    }

    pub fn tau(&self, k: usize) -> f64 {
        k as f64 / self.m_tau as f64
    }

    pub fn y_nodes(&self) -> Vec<f64> {
        (0..self.m).map(|j| self.y(j)).collect()
    }
}

/// Image sum Σ_{|k|≤K} |y - η + k|^{-1-α} plus the analytic remainder
/// 2(K + 1/2)^{-α}/α.
pub fn periodized_kernel_weight(y: f64, eta: f64, alpha: f64, images: usize) -> Result<f64> {
    check_alpha(alpha)?;
    let mut d = (y - eta).rem_euclid(1.0);
    if d > 0.5 {
        d -= 1.0;
    }
    if d == 0.0 || d.abs() < 1e-15 {
        return Err(Error::domain("periodized kernel is singular at coincident points"));
    }
    let k = images as i64;
    let sum: f64 = (-k..=k).map(|j| (d + j as f64).abs().powf(-1.0 - alpha)).sum();
    Ok(sum + 2.0 * (images as f64 + 0.5).powf(-alpha) / alpha)
}

// Lattice weights folded modulo m: entry d collects all offsets t = k/m with
// k ≡ d (mod m), for the whole-line kernel truncated at K + 1/2 periods.
fn folded_weights(m: usize, images: usize, q: f64, behaviour: Behaviour) -> Vec<f64> {
    let h = 1.0 / m as f64;
    let n = images * m + m / 2;
    let w = singular_weights(h, q, behaviour, n);
    let mut folded = vec![0.0; m];
    for (k, v) in w.iter().enumerate().skip(1) {
        folded[k % m] += v;
    }
    folded
}

// Symmetric coupling c_jl such that (P w)_j = Σ_l c_jl (w_j - w_l)
// approximates ∫ Θ(y, η)(w(y) - w(η))|y - η|^{-1-α} dη.
fn coupling(theta: &ThetaSpec, alpha: f64, grid: &CellGrid, mode: KernelMode) -> DMatrix<f64> {
    let m = grid.m;
    let q = -1.0 - alpha;
    let offset: Box<dyn Fn(usize, usize) -> f64> = match mode {
        KernelMode::Periodized => {
            let mut om = folded_weights(m, grid.images, q, Behaviour::Even);
            let n = grid.images * m + m / 2;
            // remainder beyond the truncation, spread over one period
            let tail = power_tail(n as f64 / m as f64, q) / m as f64;
            om.iter_mut().for_each(|v| *v += tail);
            Box::new(move |j, l| om[(l + m - j) % m] + om[(j + m - l) % m])
        }
        KernelMode::CellTruncated => {
            let w = singular_weights(1.0 / m as f64, q, Behaviour::Even, m - 1);
            Box::new(move |j, l| w[j.abs_diff(l)])
        }
    };
    let y = grid.y_nodes();
    DMatrix::from_fn(m, m, |j, l| if j == l { 0.0 } else { offset(j, l) * theta.eval(y[j], y[l]) })
}

/// Gram matrix G of the cell form: G is symmetric, its row sums vanish and
/// vᵀGw ≈ â(w, v) = ∬ Θ(y,η)(w(η)-w(y))(v(η)-v(y))|y-η|^{-1-α}.
pub fn assemble_cell_form(
    theta: &ThetaSpec,
    alpha: f64,
    grid: &CellGrid,
    mode: KernelMode,
) -> Result<DMatrix<f64>> {
    check_alpha(alpha)?;
    theta.validate()?;
    let m = grid.m;
    let c = coupling(theta, alpha, grid, mode);
    let scale = 2.0 / m as f64;
    let mut g = -&c * scale;
    for j in 0..m {
        g[(j, j)] = scale * c.row(j).sum();
    }
    Ok(g)
}

/// Gram vector of the cell right-hand side v ↦ ∬ Θ(y,η) D*_y v(y,η):
/// entry j is (2/m)·PV∫ Θ(y_j, η) γ(y_j, η) dη.
pub fn cell_rhs(theta: &ThetaSpec, alpha: f64, grid: &CellGrid, mode: KernelMode) -> Result<Vec<f64>> {
    check_alpha(alpha)?;
    let m = grid.m;
    let p = -(1.0 + alpha) / 2.0;
    let y = grid.y_nodes();
    let out = match mode {
        KernelMode::Periodized => {
            let om = folded_weights(m, grid.images, p, Behaviour::Odd);
            (0..m)
                .map(|j| {
                    let mut s = 0.0;
                    for d in 1..m {
                        s += om[d] * (theta.eval(y[j], y[(j + d) % m]) - theta.eval(y[j], y[(j + m - d) % m]));
                    }
                    2.0 * s / m as f64
                })
                .collect()
        }
        KernelMode::CellTruncated => {
            let mut out = Vec::with_capacity(m);
            for &yj in &y {
                let near = yj.min(1.0 - yj);
                let paired = quad::integrate(
                    |t| (theta.eval(yj, yj + t) - theta.eval(yj, yj - t)) * t.powf(p),
                    0.0,
                    near,
                    1e-13,
                )?;
                let (sign, far) = if yj < 0.5 { (1.0, 1.0 - yj) } else { (-1.0, yj) };
                let rest = quad::integrate(
                    |t| theta.eval(yj, yj + sign * t) * t.powf(p),
                    near,
                    far,
                    1e-13,
                )?;
                out.push(2.0 * (paired.value + sign * rest.value) / m as f64);
            }
            out
        }
    };
    Ok(out)
}

/// Coercivity constant on mean-zero functions: the smallest eigenvalue of
/// m·G after discarding the constant mode.
pub fn coercivity_constant(form: &DMatrix<f64>) -> f64 {
    let m = form.nrows();
    let eig = (form * m as f64).symmetric_eigenvalues();
    let mut vals: Vec<f64> = eig.iter().copied().collect();
    vals.sort_by(f64::total_cmp);
    // the constant mode is the eigenvalue closest to zero
    let (zero_idx, _) = vals
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .expect("non-empty");
    vals.remove(zero_idx);
    vals[0]
}

/// Factorized bordered system [[G, 1], [1ᵀ, 0]] enforcing zero mean.
pub struct CellSolver {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    m: usize,
}

impl CellSolver {
    pub fn new(form: &DMatrix<f64>) -> Result<Self> {
        let m = form.nrows();
        let mut b = DMatrix::zeros(m + 1, m + 1);
        b.view_mut((0, 0), (m, m)).copy_from(form);
        for j in 0..m {
            b[(j, m)] = 1.0;
            b[(m, j)] = 1.0;
        }
        let lu = b.lu();
        let diag = lu.u().diagonal();
        let big = diag.amax();
        let small = diag.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
        if !(small > 1e-14 * big) {
            return Err(Error::Solve(format!(
                "cell system is singular beyond the constant mode (pivot ratio {:.3e})",
                small / big
            )));
        }
        Ok(Self { lu, m })
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        assert_eq!(rhs.len(), self.m);
        let mut b = DVector::zeros(self.m + 1);
        b.rows_mut(0, self.m).copy_from_slice(rhs);
        let x = self
            .lu
            .solve(&b)
            .ok_or_else(|| Error::Solve("bordered cell system is singular".into()))?;
        Ok(x.rows(0, self.m).iter().copied().collect())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CellSolution {
    pub grid: CellGrid,
    pub alpha: f64,
    pub kernel_mode: KernelMode,
    /// χ(y_j, τ_k) stored as an m × m_tau matrix.
    #[serde(skip)]
    pub chi: DMatrix<f64>,
    pub mean_zero: bool,
    #[serde(skip)]
    pub xi: Option<DMatrix<f64>>,
    /// Gram vector of the right-hand side.
    #[serde(skip)]
    pub rhs: Vec<f64>,
    pub coercivity: f64,
    pub residual: f64,
    pub rhs_norm: f64,
}

impl CellSolution {
    pub fn chi_slice(&self, k: usize) -> Vec<f64> {
        self.chi.column(k).iter().copied().collect()
    }

    /// χ at an arbitrary cell point by periodic linear interpolation.
    pub fn chi_at(&self, y: f64, tau: f64) -> f64 {
        interpolate_periodic(&self.chi, &self.grid, y, tau)
    }

    pub fn chi_csv(&self) -> String {
        grid_csv(&self.chi, &self.grid)
    }
}

pub(crate) fn interpolate_periodic(values: &DMatrix<f64>, grid: &CellGrid, y: f64, tau: f64) -> f64 {
    let m = grid.m;
    let s = (y.rem_euclid(1.0) * m as f64 - 0.5).rem_euclid(m as f64);
    let j0 = (s.floor() as usize).min(m - 1);
    let fy = s - j0 as f64;
    let j1 = (j0 + 1) % m;
    let r = (tau.rem_euclid(1.0) * grid.m_tau as f64).rem_euclid(grid.m_tau as f64);
    let k0 = (r.floor() as usize).min(grid.m_tau - 1);
    let ft = r - k0 as f64;
    let k1 = (k0 + 1) % grid.m_tau;
    let a = values[(j0, k0)] * (1.0 - fy) + values[(j1, k0)] * fy;
    let b = values[(j0, k1)] * (1.0 - fy) + values[(j1, k1)] * fy;
    a * (1.0 - ft) + b * ft
}

/// CSV with columns y, tau, value.
pub fn grid_csv(values: &DMatrix<f64>, grid: &CellGrid) -> String {
    let mut out = String::from("y,tau,value\n");
    for k in 0..grid.m_tau {
        for j in 0..grid.m {
            out.push_str(&format!("{:.17e},{:.17e},{:.17e}\n", grid.y(j), grid.tau(k), values[(j, k)]));
        }
    }
    out
}

/// Solves â(χ, v) = ∬Θ D*_y v for every basis v with ∫_Y χ = 0, once per
/// τ slice.
pub fn solve_cell_problem(
    theta: &ThetaSpec,
    alpha: f64,
    grid: &CellGrid,
    mode: KernelMode,
) -> Result<CellSolution> {
    let form = assemble_cell_form(theta, alpha, grid, mode)?;
    let coercivity = coercivity_constant(&form);
    if !(coercivity > 0.0) {
        return Err(Error::Solve(format!("cell form is not coercive: constant {coercivity:.3e}")));
    }
    let solver = CellSolver::new(&form)?;
    let rhs = cell_rhs(theta, alpha, grid, mode)?;
    let mut chi = DMatrix::zeros(grid.m, grid.m_tau);
    // Θ carries no τ argument, so every slice sees the same data
    for k in 0..grid.m_tau {
        let slice = solver.solve(&rhs)?;
        chi.column_mut(k).copy_from_slice(&slice);
    }
    let first = chi.column(0).clone_owned();
    let r = &form * &first - DVector::from_column_slice(&rhs);
    let rhs_norm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mean = first.sum() / grid.m as f64;
    Ok(CellSolution {
        grid: *grid,
        alpha,
        kernel_mode: mode,
        chi,
        mean_zero: mean.abs() < 1e-12 * first.amax().max(1.0),
        xi: None,
        rhs,
        coercivity,
        residual: r.norm(),
        rhs_norm,
    })
}

/// μ = ∫_ℝ (1 - cos 2πt)|t|^{-1-α} dt, the frequency-one symbol of the
/// periodized operator; frequency k has symbol k^α μ.
pub fn symbol_mu(alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    const CUTOFF: usize = 256;
    let beta = 1.0 + alpha;
    let near = quad::integrate(|t| 2.0 * (PI * t).sin().powi(2) * t.powf(-beta), 0.0, 1.0, 1e-14)?;
    let rule = quad::GaussRule::new(20);
    let mut cosine = 0.0;
    for j in 1..CUTOFF {
        cosine += rule.integrate(j as f64, j as f64 + 1.0, |t| (2.0 * PI * t).cos() * t.powf(-beta));
    }
    // ∫_J^∞ cos(2πt) t^{-β} dt by two integrations by parts
    let j = CUTOFF as f64;
    cosine += beta * j.powf(-beta - 1.0) / (4.0 * PI * PI);
    Ok(2.0 * (near.value + 1.0 / alpha - cosine))
}

/// Samples V on the cell grid as an m × m_tau matrix.
pub fn sample_cell(v: &dyn Fn(f64, f64) -> f64, grid: &CellGrid) -> DMatrix<f64> {
    DMatrix::from_fn(grid.m, grid.m_tau, |j, k| v(grid.y(j), grid.tau(k)))
}

/// Largest |y-mean| over τ slices.
pub fn max_y_mean(samples: &DMatrix<f64>) -> f64 {
    let m = samples.nrows() as f64;
    samples.column_iter().map(|c| (c.sum() / m).abs()).fold(0.0, f64::max)
}

/// Mean-zero ξ with D_y D*_y ξ = V (that is 2∫(ξ(y)-ξ(η))|y-η|^{-1-α}dη = V)
/// per τ slice, solved in Fourier space.
pub fn solve_periodic_poisson(
    v: &dyn Fn(f64, f64) -> f64,
    alpha: f64,
    grid: &CellGrid,
) -> Result<DMatrix<f64>> {
    let samples = sample_cell(v, grid);
    let scale = samples.amax().max(1.0);
    let mean = max_y_mean(&samples);
    if mean > 1e-12 * scale {
        return Err(Error::config(format!(
            "potential must have zero mean in y for every tau (found {mean:.3e})"
        )));
    }
    let mu = symbol_mu(alpha)?;
    let m = grid.m;
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(m);
    let inv = planner.plan_fft_inverse(m);
    let mut out = DMatrix::zeros(m, grid.m_tau);
    for k in 0..grid.m_tau {
        let mut buf: Vec<Complex<f64>> =
            samples.column(k).iter().map(|&x| Complex::new(x, 0.0)).collect();
        fwd.process(&mut buf);
        buf[0] = Complex::new(0.0, 0.0);
        for (f, c) in buf.iter_mut().enumerate().skip(1) {
            let freq = f.min(m - f) as f64;
            *c /= 2.0 * mu * freq.powf(alpha) * m as f64;
        }
        inv.process(&mut buf);
        for j in 0..m {
            out[(j, k)] = buf[j].re;
        }
    }
    Ok(out)
}

/// Relative residual ‖D_y D*_y ξ - V‖/‖V‖ measured with the assembled
/// periodized form for Θ ≡ 1.
pub fn poisson_residual(
    xi: &DMatrix<f64>,
    v: &dyn Fn(f64, f64) -> f64,
    alpha: f64,
    grid: &CellGrid,
) -> Result<f64> {
    let form = assemble_cell_form(&ThetaSpec::Constant(1.0), alpha, grid, KernelMode::Periodized)?;
    let samples = sample_cell(v, grid);
    let applied = &form * xi * grid.m as f64;
    let vn = samples.norm();
    if vn == 0.0 {
        return Ok(applied.norm());
    }
    Ok((applied - &samples).norm() / vn)
}
