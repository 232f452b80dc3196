//! Effective coefficients, the averaged field ζ, the restricted divergence
//! and the drift of the homogenized equation.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::cell::{CellGrid, CellSolution};
use crate::error::{Error, Result};
use crate::kernel::{check_alpha, fractional_laplacian, Field, Grid1D, KernelMode, OperatorKind, OperatorMatrix, ThetaSpec};
use crate::singular::{regular_weights, singular_weights, Behaviour};

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub alpha: f64,
    pub kernel_mode: KernelMode,
    pub m: usize,
    pub m_tau: usize,
    pub images: usize,
    pub theta: String,
    pub cell_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EffectiveCoefficients {
    pub xi1: f64,
    pub xi2: f64,
    pub xi3: f64,
    pub provenance: Option<Provenance>,
}

impl EffectiveCoefficients {
    pub fn new(xi1: f64, xi2: f64, xi3: f64) -> Self {
        Self { xi1, xi2, xi3, provenance: None }
    }
}

/// Ξ₁ = ∬Θ, Ξ₂ = ∬Θ D*_yχ and Ξ₃ = 2∬𝒱χ by the cell-grid rectangle rule.
pub fn compute_effective_coefficients(
    theta: &ThetaSpec,
    potential: &dyn Fn(f64, f64) -> f64,
    chi: &CellSolution,
    alpha: f64,
    grid: &CellGrid,
) -> Result<EffectiveCoefficients> {
    if chi.grid != *grid {
        return Err(Error::config("corrector was solved on a different cell grid"));
    }
    if chi.alpha != alpha {
        return Err(Error::config("corrector was solved for a different alpha"));
    }
    let m = grid.m;
    let y = grid.y_nodes();
    let mut xi1 = 0.0;
    for &a in &y {
        for &b in &y {
            xi1 += theta.eval(a, b);
        }
    }
    xi1 /= (m * m) as f64;

    let mut xi2 = 0.0;
    let mut xi3 = 0.0;
    for k in 0..grid.m_tau {
        let tau = grid.tau(k);
        for j in 0..m {
            let c = chi.chi[(j, k)];
            xi2 += c * chi.rhs[j];
            xi3 += potential(y[j], tau) * c;
        }
    }
    xi2 /= grid.m_tau as f64;
    xi3 *= 2.0 / (m * grid.m_tau) as f64;
    Ok(EffectiveCoefficients {
        xi1,
        xi2,
        xi3,
        provenance: Some(Provenance {
            alpha,
            kernel_mode: chi.kernel_mode,
            m,
            m_tau: grid.m_tau,
            images: grid.images,
            theta: theta.name().to_string(),
            cell_residual: chi.residual,
        }),
    })
}

/// ζ on the lattice including both endpoints: entry 0 is x = -1 and entry
/// n + 1 is x = 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ZetaField {
    pub values: Vec<Complex64>,
    pub time: f64,
}

impl ZetaField {
    pub fn interior(&self) -> &[Complex64] {
        &self.values[1..self.values.len() - 1]
    }
}

/// Matrices of u ↦ ζ ((n+2) × n) and ζ ↦ 𝒟|_D ζ (n × (n+2)).
#[derive(Debug, Clone)]
pub struct DriftOperators {
    pub zeta: DMatrix<f64>,
    pub divergence: DMatrix<f64>,
}

// Odd-rule weights for each paired half-width c = 1..=n+1.
fn odd_tables(h: f64, p: f64, n: usize) -> Vec<Vec<f64>> {
    (0..=n + 1)
        .into_par_iter()
        .map(|c| if c == 0 { Vec::new() } else { singular_weights(h, p, Behaviour::Odd, c) })
        .collect()
}

impl DriftOperators {
    pub fn new(grid: &Grid1D, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        let n = grid.n();
        let h = grid.h();
        let p = -(1.0 + alpha) / 2.0;
        let odd = odd_tables(h, p, n);
        let vanishing = singular_weights(h, p, Behaviour::Vanishing, n + 1);

        // lattice index L = -1..=n maps to column/row L + 1
        let mut zeta = DMatrix::zeros(n + 2, n);
        for k in 1..=n {
            // ζ(-1) = -(1/2)∫_0^2 u(-1+t) t^p dt, ζ(1) = (1/2)∫_0^2 u(1-t) t^p dt
            zeta[(0, k - 1)] -= 0.5 * vanishing[k];
            zeta[(n + 1, n - k)] += 0.5 * vanishing[k];
        }
        for i in 0..n {
            let row = i + 1;
            let left = i + 1;
            let right = n - i;
            let c = left.min(right);
            // (1/2)∫_0^c (u(x-t) - u(x+t)) t^p
            for k in 1..=c {
                let w = 0.5 * odd[c][k];
                if k <= i {
                    zeta[(row, i - k)] += w;
                }
                if i + k < n {
                    zeta[(row, i + k)] -= w;
                }
            }
            if right > c {
                // (1/2)∫_c^b (u(x) - u(x+t)) t^p
                let w = regular_weights(h, p, c, right);
                for (j, wk) in w.iter().enumerate() {
                    let k = c + j;
                    zeta[(row, i)] += 0.5 * wk;
                    if i + k < n {
                        zeta[(row, i + k)] -= 0.5 * wk;
                    }
                }
            } else if left > c {
                // -(1/2)∫_c^a (u(x) - u(x-t)) t^p
                let w = regular_weights(h, p, c, left);
                for (j, wk) in w.iter().enumerate() {
                    let k = c + j;
                    zeta[(row, i)] -= 0.5 * wk;
                    if k <= i {
                        zeta[(row, i - k)] += 0.5 * wk;
                    }
                }
            }
        }

        let mut divergence = DMatrix::zeros(n, n + 2);
        for i in 0..n {
            let col = i + 1;
            let left = i + 1;
            let right = n - i;
            let c = left.min(right);
            // ∫_0^c (ζ(x+t) - ζ(x-t)) t^p; lattice offsets reach the endpoints
            for k in 1..=c {
                let w = odd[c][k];
                divergence[(i, col + k)] += w;
                divergence[(i, col - k)] -= w;
            }
            if right > c {
                let w = regular_weights(h, p, c, right);
                for (j, wk) in w.iter().enumerate() {
                    divergence[(i, col)] += wk;
                    divergence[(i, col + c + j)] += wk;
                }
            } else if left > c {
                let w = regular_weights(h, p, c, left);
                for (j, wk) in w.iter().enumerate() {
                    divergence[(i, col)] -= wk;
                    divergence[(i, col - c - j)] -= wk;
                }
            }
        }
        Ok(Self { zeta, divergence })
    }

    /// Rows of the ζ map at interior nodes.
    pub fn zeta_interior(&self) -> DMatrix<f64> {
        let n = self.zeta.ncols();
        self.zeta.rows(1, n).clone_owned()
    }
}

fn apply(m: &DMatrix<f64>, u: &[Complex64]) -> Vec<Complex64> {
    assert_eq!(m.ncols(), u.len());
    (0..m.nrows())
        .map(|i| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (j, v) in u.iter().enumerate() {
                acc += v * m[(i, j)];
            }
            acc
        })
        .collect()
}

/// ζ(x) = (1/2)∫_D -(u(z) - u(x)) γ(x, z) dz on the lattice with endpoints.
pub fn compute_zeta(u: &Field, grid: &Grid1D, alpha: f64) -> Result<ZetaField> {
    if u.values.len() != grid.n() {
        return Err(Error::config("field and grid sizes differ"));
    }
    let ops = DriftOperators::new(grid, alpha)?;
    Ok(ZetaField { values: apply(&ops.zeta, &u.values), time: u.time })
}

/// 𝒟|_D ζ(x) = PV∫_D (ζ(x) + ζ(z)) γ(x, z) dz at interior nodes.
pub fn apply_restricted_divergence(zeta: &ZetaField, grid: &Grid1D, alpha: f64) -> Result<Field> {
    if zeta.values.len() != grid.n() + 2 {
        return Err(Error::config("zeta must carry the two endpoint values"));
    }
    let ops = DriftOperators::new(grid, alpha)?;
    Ok(Field::new(apply(&ops.divergence, &zeta.values), zeta.time))
}

/// M_eff = Ξ₁ L - (Ξ₂/2) R Z - Ξ₃ Z, so that i dũ = M_eff ũ dt + ...
pub fn assemble_effective_generator(
    coeffs: &EffectiveCoefficients,
    grid: &Grid1D,
    alpha: f64,
) -> Result<OperatorMatrix> {
    let l = fractional_laplacian(grid, alpha)?;
    let mut entries = if coeffs.xi1 == 1.0 { l.entries } else { l.entries * coeffs.xi1 };
    if coeffs.xi2 != 0.0 || coeffs.xi3 != 0.0 {
        let ops = DriftOperators::new(grid, alpha)?;
        if coeffs.xi2 != 0.0 {
            entries -= (&ops.divergence * &ops.zeta) * (coeffs.xi2 / 2.0);
        }
        if coeffs.xi3 != 0.0 {
            entries -= ops.zeta_interior() * coeffs.xi3;
        }
    }
    Ok(OperatorMatrix {
        entries,
        kind: OperatorKind::EffectiveDrift,
        metadata: json!({
            "scheme": "fractional generator plus product-integrated zeta terms",
            "n": grid.n(),
            "h": grid.h(),
            "alpha": alpha,
            "xi1": coeffs.xi1,
            "xi2": coeffs.xi2,
            "xi3": coeffs.xi3,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::solve_cell_problem;
    use crate::quad;
    use std::f64::consts::PI;

    fn real_field(grid: &Grid1D, f: impl Fn(f64) -> f64) -> Field {
        Field::new(grid.sample_real(f), 0.0)
    }

    #[test]
    fn zeta_of_zero_is_zero() {
        let grid = Grid1D::new(20).unwrap();
        let z = compute_zeta(&real_field(&grid, |_| 0.0), &grid, 1.5).unwrap();
        assert!(z.values.iter().all(|v| *v == Complex64::new(0.0, 0.0)));
        let d = apply_restricted_divergence(&z, &grid, 1.5).unwrap();
        assert!(d.values.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn zeta_of_even_field_is_odd() {
        let grid = Grid1D::new(101).unwrap();
        let z = compute_zeta(&real_field(&grid, |x| 1.0 - x * x), &grid, 1.5).unwrap();
        let n = z.values.len();
        for i in 0..n {
            assert!((z.values[i] + z.values[n - 1 - i]).norm() < 1e-12);
        }
    }

    // ζ(x) = (1/2)[∫_0^b (u(x)-u(x+t)) t^p - ∫_0^a (u(x)-u(x-t)) t^p] by adaptive quadrature
    fn zeta_reference(u: impl Fn(f64) -> f64, x: f64, alpha: f64) -> f64 {
        let p = -(1.0 + alpha) / 2.0;
        let right = quad::integrate(|t| (u(x) - u(x + t)) * t.powf(p), 0.0, 1.0 - x, 1e-12).unwrap();
        let left = quad::integrate(|t| (u(x) - u(x - t)) * t.powf(p), 0.0, 1.0 + x, 1e-12).unwrap();
        0.5 * (right.value - left.value)
    }

    #[test]
    fn zeta_converges_to_reference() {
        let alpha = 1.6;
        let u = |x: f64| (1.0 - x * x) * (1.0 + 0.5 * (PI * x).sin());
        let mut errs = Vec::new();
        for n in [63, 127, 255] {
            let grid = Grid1D::new(n).unwrap();
            let z = compute_zeta(&real_field(&grid, u), &grid, alpha).unwrap();
            let mut worst = 0.0f64;
            for i in (0..n).step_by((n + 1) / 16) {
                let r = zeta_reference(u, grid.x(i), alpha);
                worst = worst.max((z.values[i + 1].re - r).abs());
            }
            let end = 0.5 * quad::integrate(|t| u(1.0 - t) * t.powf(-(1.0 + alpha) / 2.0), 0.0, 2.0, 1e-12).unwrap().value;
            worst = worst.max((z.values[n + 1].re - end).abs());
            errs.push(worst);
        }
        assert!(errs[2] < 1e-5, "{errs:?}");
        assert!(errs[0] / errs[2] > 2.0, "{errs:?}");
    }

    #[test]
    fn divergence_of_constant_matches_closed_form() {
        let alpha = 1.5;
        let grid = Grid1D::new(200).unwrap();
        let ones = ZetaField { values: vec![Complex64::new(1.0, 0.0); 202], time: 0.0 };
        let d = apply_restricted_divergence(&ones, &grid, alpha).unwrap();
        let e = (1.0 - alpha) / 2.0;
        for i in 0..200 {
            let x = grid.x(i);
            let exact = 4.0 / (1.0 - alpha) * ((1.0 - x).powf(e) - (1.0 + x).powf(e));
            assert!((d.values[i].re - exact).abs() < 1e-6 * exact.abs().max(1.0), "x={x}");
        }
    }

    #[test]
    fn odd_zeta_gives_even_divergence() {
        let grid = Grid1D::new(81).unwrap();
        let z = compute_zeta(&real_field(&grid, |x| (1.0 - x * x) * (1.0 + x * x)), &grid, 1.3).unwrap();
        let d = apply_restricted_divergence(&z, &grid, 1.3).unwrap();
        for i in 0..81 {
            assert!((d.values[i] - d.values[80 - i]).norm() < 1e-9 * d.values[i].norm().max(1.0));
        }
    }

    #[test]
    fn generator_linear_in_coefficients() {
        let grid = Grid1D::new(32).unwrap();
        let l = fractional_laplacian(&grid, 1.5).unwrap();
        let one = assemble_effective_generator(&EffectiveCoefficients::new(1.0, 0.0, 0.0), &grid, 1.5).unwrap();
        assert_eq!(one.entries, l.entries);
        let two = assemble_effective_generator(&EffectiveCoefficients::new(2.0, 0.0, 0.0), &grid, 1.5).unwrap();
        assert_eq!(two.entries, &one.entries * 2.0);
        let zero = assemble_effective_generator(&EffectiveCoefficients::new(0.0, 0.0, 0.0), &grid, 1.5).unwrap();
        assert_eq!(zero.entries.amax(), 0.0);
        let ops = DriftOperators::new(&grid, 1.5).unwrap();
        let full = assemble_effective_generator(&EffectiveCoefficients::new(0.5, 0.3, -0.2), &grid, 1.5).unwrap();
        let expect = &l.entries * 0.5 - (&ops.divergence * &ops.zeta) * 0.15 + ops.zeta_interior() * 0.2;
        assert!((full.entries - expect).amax() < 1e-12);
    }

    #[test]
    fn constant_theta_coefficients() {
        let grid = CellGrid::new(32, 2, 16).unwrap();
        let theta = ThetaSpec::Constant(1.0);
        let v = |y: f64, t: f64| (2.0 * PI * y).cos() * (2.0 * PI * t).cos();
        let chi = solve_cell_problem(&theta, 1.5, &grid, KernelMode::Periodized).unwrap();
        let c = compute_effective_coefficients(&theta, &v, &chi, 1.5, &grid).unwrap();
        assert_eq!(c.xi1, 1.0);
        assert!(c.xi2.abs() < 1e-8 && c.xi3.abs() < 1e-8);
    }

    #[test]
    fn scaling_and_sign_relations() {
        let grid = CellGrid::new(32, 4, 8).unwrap();
        let theta = ThetaSpec::SumCos { mean: 1.0, amp: 0.3 };
        let v = |y: f64, t: f64| (2.0 * PI * y).sin() * (1.0 + (2.0 * PI * t).sin());
        let neg = |y: f64, t: f64| -v(y, t);
        let chi = solve_cell_problem(&theta, 1.5, &grid, KernelMode::Periodized).unwrap();
        let base = compute_effective_coefficients(&theta, &v, &chi, 1.5, &grid).unwrap();
        let theta3 = theta.scaled(3.0);
        let chi3 = solve_cell_problem(&theta3, 1.5, &grid, KernelMode::Periodized).unwrap();
        assert!((&chi3.chi - &chi.chi).amax() < 1e-12);
        let scaled = compute_effective_coefficients(&theta3, &v, &chi3, 1.5, &grid).unwrap();
        assert!((scaled.xi1 - 3.0 * base.xi1).abs() < 1e-12);
        assert!((scaled.xi2 - 3.0 * base.xi2).abs() < 1e-10 * base.xi2.abs().max(1e-12));
        assert!((scaled.xi3 - base.xi3).abs() < 1e-12);
        let flipped = compute_effective_coefficients(&theta, &neg, &chi, 1.5, &grid).unwrap();
        assert_eq!(flipped.xi3, -base.xi3);
        assert!(base.xi2 > 0.0);
        let other = CellGrid::new(64, 4, 8).unwrap();
        assert!(compute_effective_coefficients(&theta, &v, &chi, 1.5, &other).is_err());
    }

    #[test]
    fn xi1_converges_for_smooth_theta() {
        let theta = ThetaSpec::ProductCos { mean: 1.0, amp: 0.4 };
        let v = |_: f64, _: f64| 0.0;
        let mut last: Option<f64> = None;
        for m in [16, 32] {
            let grid = CellGrid::new(m, 1, 4).unwrap();
            let chi = solve_cell_problem(&theta, 1.5, &grid, KernelMode::Periodized).unwrap();
            let c = compute_effective_coefficients(&theta, &v, &chi, 1.5, &grid).unwrap();
            if let Some(prev) = last {
                assert!((c.xi1 - prev).abs() < 1e-8);
            }
            last = Some(c.xi1);
        }
    }

    proptest::proptest! {
        #[test]
        fn matrices_reproduce_operations(seed in 0u64..1000) {
            use rand_core::{RngCore, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let grid = Grid1D::new(17).unwrap();
            let mut unit = || (rng.next_u64() as f64 / u64::MAX as f64) - 0.5;
            let u: Vec<Complex64> = (0..17).map(|_| Complex64::new(unit(), unit())).collect();
            let v: Vec<Complex64> = (0..17).map(|_| Complex64::new(unit(), unit())).collect();
            let sum: Vec<Complex64> = u.iter().zip(&v).map(|(a, b)| a * 2.0 - b).collect();
            let zu = compute_zeta(&Field::new(u, 0.0), &grid, 1.4).unwrap();
            let zv = compute_zeta(&Field::new(v, 0.0), &grid, 1.4).unwrap();
            let zs = compute_zeta(&Field::new(sum, 0.0), &grid, 1.4).unwrap();
            for i in 0..19 {
                proptest::prop_assert!((zs.values[i] - (zu.values[i] * 2.0 - zv.values[i])).norm() < 1e-12);
            }
        }
    }
}
