//! Product-integration weights for integrals of sampled data against the
//! power weight `t^q` on uniform grids `t_k = k h`.
//!
//! The first panel touching `t = 0` fits the samples with a short monomial
//! series that respects the known behaviour of the integrand at the origin
//! (even, odd or merely vanishing), so that strongly singular weights such as
//! `t^{-1-α}` stay integrable. Away from the origin, degree-four Lagrange
//! panels are integrated exactly against `t^q` with Gauss–Legendre.

use nalgebra::{DMatrix, DVector};

use crate::quad::GaussRule;

/// Behaviour of the sampled function near `t = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Behaviour {
    /// `f(t) = a t^2 + b t^4 + ...`, e.g. a symmetric second difference.
    Even,
    /// `f(t) = a t + b t^3 + ...`, e.g. an antisymmetric first difference.
    Odd,
    /// `f(0) = 0`, no parity.
    Vanishing,
}

impl Behaviour {
    fn near_exponents(self, n: usize) -> &'static [i32] {
        match (self, n) {
            (Behaviour::Even, 1) => &[2],
            (Behaviour::Even, _) => &[2, 4],
            (Behaviour::Odd, 1) => &[1],
            (Behaviour::Odd, _) => &[1, 3],
            (Behaviour::Vanishing, 1) => &[1],
            (Behaviour::Vanishing, 2) => &[1, 2],
            (Behaviour::Vanishing, _) => &[1, 2, 3],
        }
    }
}

const PANEL_DEGREE: usize = 4;
const PANEL_POINTS: usize = 24;

/// Weights `w[k]`, `k = 0..=n`, with
/// `∫_0^{n h} f(t) t^q dt ≈ Σ_k w[k] f(k h)`. `w[0]` is always zero.
///
/// Panics if the near-origin fit is not integrable against `t^q`.
pub fn singular_weights(h: f64, q: f64, behaviour: Behaviour, n: usize) -> Vec<f64> {
    assert!(n >= 1, "need at least one interval");
    let exps = behaviour.near_exponents(n);
    let len = exps.len();
    for &e in exps {
        assert!(e as f64 + q > -1.0, "t^{} t^{q} is not integrable at 0", e);
    }
    let span = len as f64;
    // Σ_k ŵ_k k^e = ∫_0^span s^{e+q} ds on the unit-spacing grid
    let vandermonde = DMatrix::from_fn(len, len, |e_idx, k_idx| {
        ((k_idx + 1) as f64).powi(exps[e_idx])
    });
    let moments = DVector::from_iterator(
        len,
        exps.iter().map(|&e| {
            let p = e as f64 + q + 1.0;
            span.powf(p) / p
        }),
    );
    let near = vandermonde
        .lu()
        .solve(&moments)
        .expect("monomial fit is nonsingular");

    let mut w = vec![0.0; n + 1];
    for (k, v) in near.iter().enumerate() {
        w[k + 1] += v;
    }
    accumulate_panels(&mut w, q, len, n, 0);
    w[0] = 0.0;
    let scale = h.powf(q + 1.0);
    w.iter_mut().for_each(|x| *x *= scale);
    w
}

/// Weights for `∫_{k0 h}^{k1 h} f(t) t^q dt` with `f` smooth and `k0 >= 1`.
/// Entry `j` multiplies `f((k0 + j) h)`.
pub fn regular_weights(h: f64, q: f64, k0: usize, k1: usize) -> Vec<f64> {
    assert!(k0 >= 1 && k1 >= k0);
    let mut w = vec![0.0; k1 - k0 + 1];
    accumulate_panels(&mut w, q, k0, k1, k0);
    let scale = h.powf(q + 1.0);
    w.iter_mut().for_each(|x| *x *= scale);
    w
}

/// `∫_{a}^{∞} t^q dt` for `q < -1`.
pub fn power_tail(a: f64, q: f64) -> f64 {
    debug_assert!(q < -1.0);
    a.powf(q + 1.0) / -(q + 1.0)
}

// Lagrange panels on the unit-spacing grid from `start` to `end`; weight
// for node k lands in `w[k - offset]`. A short final panel borrows earlier
// nodes (down to `offset`) to keep the interpolation degree.
fn accumulate_panels(w: &mut [f64], q: f64, start: usize, end: usize, offset: usize) {
    let rule = GaussRule::new(PANEL_POINTS);
    let mut k0 = start;
    while k0 < end {
        let span = PANEL_DEGREE.min(end - k0);
        let base = (k0 + span).saturating_sub(PANEL_DEGREE).max(offset).min(k0);
        let d = k0 + span - base;
        let a = k0 as f64;
        let b = (k0 + span) as f64;
        // panels close to the origin are split so the rule resolves t^q
        let pieces = ((4.0 * (b - a) / a).ceil() as usize).max(1);
        let step = (b - a) / pieces as f64;
        for piece in 0..pieces {
            let lo = a + piece as f64 * step;
            for (s, gw) in rule.points(lo, lo + step) {
                let kernel = gw * s.powf(q);
                let local = s - base as f64;
                for j in 0..=d {
                    let mut l = 1.0;
                    for m in 0..=d {
                        if m != j {
                            l *= (local - m as f64) / (j as f64 - m as f64);
                        }
                    }
                    w[base + j - offset] += l * kernel;
                }
            }
        }
        k0 += span;
    }
}
