use nlhomog::brownian::{brownian_increments, refined_path};
use nlhomog::integrator::{simulate, RecordOptions, SimConfig, System};
use nlhomog::kernel::{Grid1D, KernelParams, ThetaSpec};
use nlhomog::presets::{InitialPreset, NoiseModel, PotentialPreset};
use num_complex::Complex64;

fn flat_system(cfg: &SimConfig) -> System {
    System::Heterogeneous(KernelParams::new(cfg.alpha, ThetaSpec::Constant(1.0), cfg.epsilon).unwrap())
}

fn final_state(cfg: &SimConfig, grid: &Grid1D) -> Vec<Complex64> {
    let path = brownian_increments(1, cfg.n_steps(), cfg.dt).unwrap();
    simulate(&flat_system(cfg), cfg, grid, &path, RecordOptions::default()).unwrap().final_state.values
}

// Resolved regime: on a 16-point grid the largest eigenvalue is about 312, so
// every step size below keeps lambda_max * dt under 0.15.
#[test]
fn crank_nicolson_is_second_order_without_noise() {
    let grid = Grid1D::new(16).unwrap();
    let t = 0.125;
    for initial in [InitialPreset::Parabola, InitialPreset::ModulatedBump] {
        for potential in [PotentialPreset::Zero, PotentialPreset::CosYCosTau] {
            let base = SimConfig { initial, potential, t_final: t, ..SimConfig::default() };
            let reference = final_state(&SimConfig { dt: t / 16384.0, ..base.clone() }, &grid);
            let errors: Vec<f64> = (0..4)
                .map(|l| {
                    let u = final_state(&SimConfig { dt: t / 256.0 / 2f64.powi(l), ..base.clone() }, &grid);
                    let d: Vec<Complex64> = u.iter().zip(&reference).map(|(a, b)| a - b).collect();
                    grid.norm_sq(&d).sqrt()
                })
                .collect();
            for w in errors.windows(2) {
                let order = (w[0] / w[1]).log2();
                assert!((1.8..=2.2).contains(&order), "{initial:?} {potential:?}: errors {errors:?}");
            }
        }
    }
}

/// Relative gap between the discrete norm at T and the scalar Itô product
/// prod |1 - i sigma dW - sigma^2 (dW^2 - dt) / 2|^2 for linear noise.
fn norm_identity_defect(level: u32) -> f64 {
    let sigma = 0.5;
    let grid = Grid1D::new(32).unwrap();
    let cfg = SimConfig {
        dt: 1.0 / 32.0 / 2f64.powi(level as i32),
        potential: PotentialPreset::Zero,
        noise: NoiseModel::Linear { sigma },
        ..SimConfig::default()
    };
    let path = refined_path(11, 32, 1.0 / 32.0, level).unwrap();
    let traj = simulate(&flat_system(&cfg), &cfg, &grid, &path, RecordOptions::default()).unwrap();
    let factor: f64 = path
        .increments
        .iter()
        .map(|&w| {
            let a = 0.5 * sigma * sigma * (w * w - cfg.dt);
            (1.0 - a).powi(2) + (sigma * w).powi(2)
        })
        .product();
    let expected = traj.norm2[0] * factor;
    (traj.norm2.last().unwrap() - expected).abs() / expected
}

#[test]
fn pathwise_norm_follows_ito_product() {
    let defects: Vec<f64> = (0..4).map(norm_identity_defect).collect();
    assert!(defects[0] < 0.05, "{defects:?}");
    for w in defects.windows(2) {
        assert!((1.6..=2.4).contains(&(w[0] / w[1])), "{defects:?}");
    }
}

#[test]
fn norm_series_is_bitwise_reproducible() {
    let grid = Grid1D::new(64).unwrap();
    let cfg = SimConfig { noise: NoiseModel::Bounded { sigma: 0.5 }, ..SimConfig::default() };
    let system = System::Heterogeneous(
        KernelParams::new(cfg.alpha, ThetaSpec::SumCos { mean: 1.5, amp: 0.4 }, cfg.epsilon).unwrap(),
    );
    let run = || {
        let path = brownian_increments(77, cfg.n_steps(), cfg.dt).unwrap();
        simulate(&system, &cfg, &grid, &path, RecordOptions::default()).unwrap().norm_csv()
    };
    assert_eq!(run(), run());
}
