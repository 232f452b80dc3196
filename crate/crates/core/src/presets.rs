//! Named data presets: coefficient Θ, potential 𝒱, forcing f, initial datum
//! and noise intensity g.

use std::f64::consts::PI;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::ThetaSpec;

const TWO_PI: f64 = 2.0 * PI;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum ThetaPreset {
    Constant { value: f64 },
    SumCos { mean: f64, amp: f64 },
    ProductCos { mean: f64, amp: f64 },
}

impl Default for ThetaPreset {
    fn default() -> Self {
        ThetaPreset::Constant { value: 1.0 }
    }
}

impl ThetaPreset {
    pub fn spec(&self) -> ThetaSpec {
        match *self {
            ThetaPreset::Constant { value } => ThetaSpec::Constant(value),
            ThetaPreset::SumCos { mean, amp } => ThetaSpec::SumCos { mean, amp },
            ThetaPreset::ProductCos { mean, amp } => ThetaSpec::ProductCos { mean, amp },
        }
    }
}

/// Periodic potential 𝒱(y, τ).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum PotentialPreset {
    #[serde(rename = "zero")]
    Zero,
    #[serde(rename = "cos2pi_y")]
    CosY,
    #[default]
    #[serde(rename = "cos2pi_y_times_cos2pi_tau")]
    CosYCosTau,
    #[serde(rename = "sin2pi_y_times_one_plus_sin2pi_tau")]
    SinYOnePlusSinTau,
    /// 1 + cos 2πy; fails the zero-mean requirement.
    #[serde(rename = "one_plus_cos")]
    OnePlusCos,
}

impl PotentialPreset {
    pub fn eval(&self, y: f64, tau: f64) -> f64 {
        match self {
            PotentialPreset::Zero => 0.0,
            PotentialPreset::CosY => (TWO_PI * y).cos(),
            PotentialPreset::CosYCosTau => (TWO_PI * y).cos() * (TWO_PI * tau).cos(),
            PotentialPreset::SinYOnePlusSinTau => (TWO_PI * y).sin() * (1.0 + (TWO_PI * tau).sin()),
            PotentialPreset::OnePlusCos => 1.0 + (TWO_PI * y).cos(),
        }
    }

    pub fn is_zero(&self) -> bool {
        *self == PotentialPreset::Zero
    }

    pub fn depends_on_tau(&self) -> bool {
        matches!(self, PotentialPreset::CosYCosTau | PotentialPreset::SinYOnePlusSinTau)
    }

    pub fn name(&self) -> &'static str {
        match self {
            PotentialPreset::Zero => "zero",
            PotentialPreset::CosY => "cos2pi_y",
            PotentialPreset::CosYCosTau => "cos2pi_y_times_cos2pi_tau",
            PotentialPreset::SinYOnePlusSinTau => "sin2pi_y_times_one_plus_sin2pi_tau",
            PotentialPreset::OnePlusCos => "one_plus_cos",
        }
    }

    /// Largest |∫_Y 𝒱(y, τ) dy| over a τ lattice, by the rectangle rule.
    pub fn max_y_mean(&self) -> f64 {
        const M: usize = 64;
        const M_TAU: usize = 16;
        (0..M_TAU)
            .map(|k| {
                let tau = k as f64 / M_TAU as f64;
                ((0..M).map(|j| self.eval((j as f64 + 0.5) / M as f64, tau)).sum::<f64>() / M as f64).abs()
            })
            .fold(0.0, f64::max)
    }

    /// The potential must have zero mean in y for every τ.
    pub fn validate(&self) -> Result<()> {
        let mean = self.max_y_mean();
        if mean > 1e-12 {
            return Err(Error::config(format!(
                "potential '{}' has y-mean {mean:.3e}; the oscillating potential must have zero mean in the fast variable",
                self.name()
            )));
        }
        Ok(())
    }
}

impl FromStr for PotentialPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::config(format!("unknown potential preset '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum ForcingPreset {
    #[default]
    Zero,
    /// amplitude · bump(x) · cos t, with a smooth bump supported in |x| < 1/2.
    BumpCos { amplitude: f64 },
}

impl ForcingPreset {
    pub fn eval(&self, t: f64, x: f64) -> f64 {
        match *self {
            ForcingPreset::Zero => 0.0,
            ForcingPreset::BumpCos { amplitude } => amplitude * bump(x, 0.5) * t.cos(),
        }
    }

    pub fn is_zero(&self) -> bool {
        match *self {
            ForcingPreset::Zero => true,
            ForcingPreset::BumpCos { amplitude } => amplitude == 0.0,
        }
    }
}

/// exp(1 - 1/(1 - (x/r)²)) on |x| < r, zero elsewhere; peak value 1.
pub fn bump(x: f64, radius: f64) -> f64 {
    let s = x / radius;
    if s.abs() < 1.0 {
        (1.0 - 1.0 / (1.0 - s * s)).exp()
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitialPreset {
    /// (1 - x²) scaled to unit L²(D) norm.
    #[default]
    Parabola,
    /// Smooth bump supported in |x| < 0.8, times a phase e^{iπx}.
    ModulatedBump,
    Zero,
}

impl InitialPreset {
    pub fn eval(&self, x: f64) -> Complex64 {
        match self {
            InitialPreset::Parabola => Complex64::new((15.0f64 / 16.0).sqrt() * (1.0 - x * x), 0.0),
            InitialPreset::ModulatedBump => Complex64::from_polar(bump(x, 0.8), PI * x),
            InitialPreset::Zero => Complex64::new(0.0, 0.0),
        }
    }
}

impl FromStr for InitialPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::config(format!("unknown initial datum preset '{s}'")))
    }
}

/// Noise intensity g(u) acting pointwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseModel {
    #[default]
    Zero,
    Linear { sigma: f64 },
    /// σ·u/(1 + |u|)
    Bounded { sigma: f64 },
}

impl NoiseModel {
    pub fn is_zero(&self) -> bool {
        match *self {
            NoiseModel::Zero => true,
            NoiseModel::Linear { sigma } | NoiseModel::Bounded { sigma } => sigma == 0.0,
        }
    }

    pub fn g(&self, u: Complex64) -> Complex64 {
        match *self {
            NoiseModel::Zero => Complex64::new(0.0, 0.0),
            NoiseModel::Linear { sigma } => u * sigma,
            NoiseModel::Bounded { sigma } => u * (sigma / (1.0 + u.norm())),
        }
    }

    /// Directional derivative of b(u) = -i g(u) along b(u); with
    /// b(u) = -iσφ(|u|)u the radial part drops and this is -σ²φ²u.
    pub fn milstein_factor(&self, u: Complex64) -> Complex64 {
        match *self {
            NoiseModel::Zero => Complex64::new(0.0, 0.0),
            NoiseModel::Linear { sigma } => -u * (sigma * sigma),
            NoiseModel::Bounded { sigma } => {
                let phi = 1.0 / (1.0 + u.norm());
                -u * (sigma * sigma * phi * phi)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseModel::Zero => Ok(()),
            NoiseModel::Linear { sigma } | NoiseModel::Bounded { sigma } => {
                if sigma.is_finite() {
                    Ok(())
                } else {
                    Err(Error::config("noise intensity must be finite"))
                }
            }
        }
    }
}
