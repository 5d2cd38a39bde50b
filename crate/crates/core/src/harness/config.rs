use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cvae::CvaeConfig;
use crate::gnnmodel::{ModelConfig, TrainConfig};
use crate::landscape::{OracleConfig, RadiusMethod};
use crate::pipeline::{E2AConfig, EnergyPairing};
use crate::syngraph::DatasetConfig;
use crate::{Error, Result};

/// Stage-specific settings of the augmentation pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct E2ASection {
    pub calibration_epochs: usize,
    pub ascent_steps: usize,
    pub step_size: f64,
    pub lambda: f64,
    pub lambda2: f64,
    pub pseudo_batch: usize,
    pub calibrate_theta: bool,
    pub pairing: EnergyPairing,
}

impl Default for E2ASection {
    fn default() -> Self {
        let d = E2AConfig::default();
        Self {
            calibration_epochs: d.calibration_epochs,
            ascent_steps: d.ascent_steps,
            step_size: d.step_size,
            lambda: d.lambda,
            lambda2: d.lambda2,
            pseudo_batch: d.pseudo_batch,
            calibrate_theta: d.calibrate_theta,
            pairing: d.pairing,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsConfig {
    pub radius_method: RadiusMethod,
    pub oracle: OracleConfig,
    /// Points on every emitted KDE grid.
    pub kde_points: usize,
    /// Epochs whose checkpoints feed radius traces.
    pub radius_epochs: Vec<usize>,
    /// Sweep values used by `sensitivity`.
    pub sweep_steps: Vec<usize>,
    pub sweep_step_sizes: Vec<f64>,
    pub sweep_lambdas: Vec<f64>,
    /// Timing grid used by `bench`, as `(steps, step_size)` pairs.
    pub bench_grid: Vec<(usize, f64)>,
    pub bench_epochs: usize,
    pub bench_rounds: usize,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            radius_method: RadiusMethod::MarginApprox,
            oracle: OracleConfig::default(),
            kde_points: 256,
            radius_epochs: vec![10, 50, 100],
            sweep_steps: vec![1, 3, 5, 10],
            sweep_step_sizes: vec![0.01, 0.1, 0.5, 1.0],
            sweep_lambdas: vec![0.0, 0.01, 0.1, 1.0],
            bench_grid: vec![(1, 0.1), (5, 0.1), (10, 0.1), (10, 1.0)],
            bench_epochs: 3,
            bench_rounds: 3,
        }
    }
}

/// Everything a run depends on. Parsed from TOML; every field has a default
/// and unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub cvae: CvaeConfig,
    /// `seed` here is ignored; runs take their seeds from `seeds`.
    pub train: TrainConfig,
    pub e2a: E2ASection,
    pub diagnostics: DiagnosticsConfig,
    /// Output root; empty means `$E2A_OUT_DIR`, then `./runs`.
    pub output_dir: String,
    pub seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            cvae: CvaeConfig::default(),
            train: TrainConfig::default(),
            e2a: E2ASection::default(),
            diagnostics: DiagnosticsConfig::default(),
            output_dir: String::new(),
            seeds: vec![0, 1, 2],
        }
    }
}

pub const OUT_DIR_ENV: &str = "E2A_OUT_DIR";

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::ConfigInvalid("seeds must not be empty".into()));
        }
        for &seed in &self.seeds {
            self.e2a_config(seed).validate()?;
        }
        let d = &self.diagnostics;
        if d.kde_points < 2 {
            return Err(Error::ConfigInvalid("kde_points must be at least 2".into()));
        }
        if d.bench_rounds == 0 || d.bench_epochs == 0 {
            return Err(Error::ConfigInvalid("bench rounds and epochs must be positive".into()));
        }
        if d.oracle.directions == 0 || !(d.oracle.tol > 0.0) || !(d.oracle.r_max > 0.0) || d.oracle.grid == 0 {
            return Err(Error::ConfigInvalid(format!("invalid oracle settings {:?}", d.oracle)));
        }
        Ok(())
    }

    /// Pipeline configuration for one seed.
    pub fn e2a_config(&self, seed: u64) -> E2AConfig {
        let e = &self.e2a;
        E2AConfig {
            model: self.model,
            cvae: self.cvae,
            train: TrainConfig { seed, ..self.train },
            calibration_epochs: e.calibration_epochs,
            ascent_steps: e.ascent_steps,
            step_size: e.step_size,
            lambda: e.lambda,
            lambda2: e.lambda2,
            pseudo_batch: e.pseudo_batch,
            calibrate_theta: e.calibrate_theta,
            pairing: e.pairing,
        }
    }

    /// Hex SHA-256 of the canonical JSON form (sorted keys). The output
    /// directory does not take part.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serialises");
        if let Some(map) = value.as_object_mut() {
            map.remove("output_dir");
        }
        let digest = Sha256::digest(value.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Output root: the config value, then `$E2A_OUT_DIR`, then `runs`.
    pub fn output_root(&self) -> PathBuf {
        if !self.output_dir.is_empty() {
            return PathBuf::from(&self.output_dir);
        }
        match std::env::var_os(OUT_DIR_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => PathBuf::from("runs"),
        }
    }
}
