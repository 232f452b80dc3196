//! Run configuration, ε-list parsing and run manifests.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cell::CellGrid;
use crate::error::{Error, Result};
use crate::harness::{step_rule, validate_eps_list, HarnessConfig};
use crate::integrator::{NoiseScheme, SimConfig};
use crate::kernel::{check_alpha, KernelMode};
use crate::presets::{ForcingPreset, InitialPreset, NoiseModel, PotentialPreset, ThetaPreset};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CellConfig {
    pub m: usize,
    pub m_tau: usize,
    /// Periodic images K summed by the periodized kernel.
    pub images: usize,
}

impl Default for CellConfig {
    fn default() -> Self {
        Self { m: 256, m_tau: 8, images: 64 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeStepRule {
    pub dt_max: f64,
    pub steps_per_eps: f64,
}

impl Default for TimeStepRule {
    fn default() -> Self {
        Self { dt_max: 1.0 / 64.0, steps_per_eps: 8.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedConfig {
    /// Path p uses seed base + p.
    pub base: u64,
    pub paths: usize,
}

impl Default for SeedConfig {
    fn default() -> Self {
        Self { base: 2024, paths: 32 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub alpha: f64,
    /// Interior grid points of D = (-1, 1).
    pub n: usize,
    pub cell: CellConfig,
    pub kernel_mode: KernelMode,
    pub theta: ThetaPreset,
    pub potential: PotentialPreset,
    pub noise: NoiseModel,
    pub noise_scheme: NoiseScheme,
    pub forcing: ForcingPreset,
    pub initial: InitialPreset,
    pub t_final: f64,
    pub theta_scheme: f64,
    pub time_step: TimeStepRule,
    /// Default ε for single simulations.
    pub epsilon: f64,
    pub eps_list: Vec<f64>,
    pub seeds: SeedConfig,
    /// Excluded from the content hash.
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            alpha: 1.5,
            n: 256,
            cell: CellConfig::default(),
            kernel_mode: KernelMode::Periodized,
            theta: ThetaPreset::default(),
            potential: PotentialPreset::CosYCosTau,
            noise: NoiseModel::Bounded { sigma: 0.5 },
            noise_scheme: NoiseScheme::Milstein,
            forcing: ForcingPreset::Zero,
            initial: InitialPreset::Parabola,
            t_final: 1.0,
            theta_scheme: 0.5,
            time_step: TimeStepRule::default(),
            epsilon: 0.25,
            eps_list: vec![0.5, 0.25, 0.125, 0.0625],
            seeds: SeedConfig::default(),
            output_dir: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config(format!(
                "unsupported schema_version {}, expected {SCHEMA_VERSION}",
                self.schema_version
            )));
        }
        check_alpha(self.alpha)?;
        if self.n < 4 {
            return Err(Error::config(format!("grid size n must be at least 4, got {}", self.n)));
        }
        CellGrid::new(self.cell.m, self.cell.m_tau, self.cell.images)?;
        self.theta.spec().validate()?;
        self.potential.validate()?;
        self.noise.validate()?;
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.t_final) {
            return Err(Error::config("t_final must be positive"));
        }
        if !(0.0..=1.0).contains(&self.theta_scheme) {
            return Err(Error::config("theta_scheme must lie in [0, 1]"));
        }
        if !positive(self.time_step.dt_max) || !positive(self.time_step.steps_per_eps) {
            return Err(Error::config("time step rule entries must be positive"));
        }
        if !positive(self.epsilon) {
            return Err(Error::config("epsilon must be positive"));
        }
        validate_eps_list(&self.eps_list)?;
        if self.seeds.paths < 2 {
            return Err(Error::config("at least two paths are required"));
        }
        Ok(())
    }

    pub fn cell_grid(&self) -> Result<CellGrid> {
        CellGrid::new(self.cell.m, self.cell.m_tau, self.cell.images)
    }

    /// Time step and step count for ε under the configured rule.
    pub fn step_for(&self, eps: f64) -> (f64, usize) {
        step_rule(self.t_final, self.time_step.dt_max, self.time_step.steps_per_eps, eps)
    }

    pub fn sim_config(&self, eps: f64) -> SimConfig {
        SimConfig {
            alpha: self.alpha,
            epsilon: eps,
            t_final: self.t_final,
            dt: self.step_for(eps).0,
            theta_scheme: self.theta_scheme,
            potential: self.potential,
            forcing: self.forcing,
            initial: self.initial,
            noise: self.noise,
            noise_scheme: self.noise_scheme,
        }
    }

    pub fn harness_config(&self) -> Result<HarnessConfig> {
        Ok(HarnessConfig {
            sim: self.sim_config(self.epsilon),
            n: self.n,
            theta: self.theta.spec(),
            kernel_mode: self.kernel_mode,
            cell: self.cell_grid()?,
            dt_max: self.time_step.dt_max,
            steps_per_eps: self.time_step.steps_per_eps,
            base_seed: self.seeds.base,
        })
    }

    /// Canonical JSON: keys sorted, shortest round-trip floats, no output
    /// directory.
    pub fn canonical_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("output_dir");
        }
        v.to_string()
    }

    /// SHA-256 of the canonical JSON, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }
}

/// Parses and validates a JSON config; missing keys take their defaults.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    if !value.is_object() {
        return Err(Error::config("configuration must be a JSON object"));
    }
    let cfg: RunConfig = serde_json::from_value(value).map_err(|e| Error::config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

/// Parses "1/2,1/4,0.125" into a strictly decreasing list of positive values.
pub fn parse_eps_list(text: &str) -> Result<Vec<f64>> {
    let values = text
        .split(',')
        .map(|tok| parse_number(tok.trim()))
        .collect::<Result<Vec<_>>>()?;
    validate_eps_list(&values)?;
    Ok(values)
}

fn parse_number(tok: &str) -> Result<f64> {
    let bad = || Error::config(format!("cannot parse '{tok}' as a number or fraction"));
    let v = match tok.split_once('/') {
        Some((num, den)) => {
            let num: f64 = num.trim().parse().map_err(|_| bad())?;
            let den: f64 = den.trim().parse().map_err(|_| bad())?;
            num / den
        }
        None => tok.parse().map_err(|_| bad())?,
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(bad())
    }
}

/// Subcommand and arguments of a run, enough to repeat it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "subcommand", rename_all = "snake_case", deny_unknown_fields)]
pub enum Invocation {
    Cell,
    Coefficients,
    Simulate { system: SystemChoice, eps: f64, seed: u64, snapshot_every: usize },
    Sweep { eps_list: Vec<f64>, paths: usize },
    Validate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemChoice {
    Het,
    Eff,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub software_version: String,
    pub invocation: Invocation,
    pub config_hash: String,
    pub config: RunConfig,
    pub seeds: Vec<u64>,
    pub threads: usize,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub outputs: Vec<String>,
}

/// Parses a manifest and checks that its recorded hash matches its config.
pub fn parse_manifest(text: &str) -> Result<Manifest> {
    let m: Manifest = serde_json::from_str(text).map_err(|e| Error::config(format!("manifest: {e}")))?;
    if m.schema_version != SCHEMA_VERSION {
        return Err(Error::config(format!("unsupported manifest schema_version {}", m.schema_version)));
    }
    m.config.validate()?;
    if m.config.hash() != m.config_hash {
        return Err(Error::config("manifest config hash does not match its config"));
    }
    Ok(m)
}
