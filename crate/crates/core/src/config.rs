//! Run configuration file.
//!
//! A JSON document with optional blocks; anything left out takes the built-in
//! default, so `{}` is a valid configuration:
//!
//! ```json
//! {
//!   "paths":    {"image": "vol.raw", "meta": "vol.json", "network": "net.json", "out": "run"},
//!   "bio":      {"k": 9.6, "k_b": 0.001, "mu": 0.5, "eta": 0.2, "rho": 0.55,
//!                "c1": 0.01, "c2": 0.3, "d_n": 8.64e7, "d_b": 0.0, "d_c": 0.0},
//!   "solver":   {"dt": 0.01, "t_end": 918.0, "snapshot_stride": 100},
//!   "scenario": {"dom_mode": "random", "seed": 0},
//!   "analysis": {"mb_threshold_fraction": 0.001, "window": 90.0, "jitter": 1e-6},
//!   "conservation_tolerance": 1e-8,
//!   "oracle":   {"t_end": 30.0, "record_interval": 1.0}
//! }
//! ```
//!
//! Precedence, lowest first: built-in defaults, the configuration file,
//! command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::AttractorOptions;
use crate::error::{Error, Result};
use crate::integrator::SolverConfig;
use crate::kinetics::BioParams;
use crate::scenario::ScenarioSpec;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Raw 8-bit volume.
    pub image: Option<PathBuf>,
    /// JSON sidecar of `image`.
    pub meta: Option<PathBuf>,
    pub network: Option<PathBuf>,
    /// Output directory.
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSettings {
    /// Horizon, days.
    pub t_end: f64,
    /// Network step; the solver step when absent.
    pub network_dt: Option<f64>,
    /// Oracle step; the largest stable divisor of `record_interval` when absent.
    pub oracle_dt: Option<f64>,
    pub record_interval: f64,
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self {
            t_end: 30.0,
            network_dt: None,
            oracle_dt: None,
            record_interval: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub bio: BioParams,
    pub solver: SolverConfig,
    pub scenario: ScenarioSpec,
    pub analysis: AttractorOptions,
    /// Largest accepted relative drift of total carbon.
    pub conservation_tolerance: f64,
    pub oracle: OracleSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            bio: BioParams::default(),
            solver: SolverConfig::default(),
            scenario: ScenarioSpec::default(),
            analysis: AttractorOptions::default(),
            conservation_tolerance: 1e-8,
            oracle: OracleSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = Self::from_json(&text).map_err(|e| Error::json(path, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// File contents when a path is given, defaults otherwise.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.bio.validate()?;
        self.solver.validate()?;
        self.scenario.validate()?;
        let a = &self.analysis;
        if !(a.mb_threshold_fraction >= 0.0 && a.window >= 0.0 && a.jitter >= 0.0) {
            return Err(Error::input("analysis thresholds must be >= 0"));
        }
        if !(self.conservation_tolerance > 0.0) {
            return Err(Error::input("conservation_tolerance must be > 0"));
        }
        let o = &self.oracle;
        if !(o.t_end > 0.0 && o.record_interval > 0.0) {
            return Err(Error::input("oracle t_end and record_interval must be > 0"));
        }
        for dt in [o.network_dt, o.oracle_dt].into_iter().flatten() {
            if !(dt > 0.0) {
                return Err(Error::input(format!("oracle steps must be > 0, got {dt}")));
            }
        }
        Ok(())
    }
}
