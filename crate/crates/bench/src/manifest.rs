//! The run manifest: everything that determines a batch's outputs.

use std::path::{Path, PathBuf};

use coalition_core::dynamics::DynamicsConfig;
use coalition_core::game::{DEFAULT_STRUCTURE_CAP, DEFAULT_TYPE_SPACE_CAP};
use coalition_core::par::Execution;
use coalition_core::scenario::validate_type_set;
use coalition_core::{Environment, SimulationSetting, TypeSpec};
use serde::{Deserialize, Serialize};

use crate::regime::Regime;
use crate::{BenchError, Result};

/// Environment variable that overrides `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "COALBENCH_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    /// Setting names, `S1`..`S4`.
    pub settings: Vec<String>,
    pub environment: String,
    pub types: Vec<TypeSpec>,
    pub topologies: usize,
    /// Runs of the proposed regime per topology.
    pub repetitions: usize,
    pub seed: u64,
    pub regimes: Vec<Regime>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub dynamics: DynamicsConfig,
    /// Largest drone count for structure enumeration (social optimum and
    /// Markov chains).
    #[serde(default = "default_structure_cap")]
    pub structure_cap: usize,
    #[serde(default = "default_type_space_cap")]
    pub type_space_cap: usize,
    /// Setting whose per-drone rates are written; defaults to the largest.
    #[serde(default)]
    pub per_drone_setting: Option<String>,
    #[serde(default)]
    pub execution: Execution,
}

fn default_structure_cap() -> usize {
    DEFAULT_STRUCTURE_CAP
}

fn default_type_space_cap() -> usize {
    DEFAULT_TYPE_SPACE_CAP
}

impl RunManifest {
    /// A small manifest with two power types, (12, 3) and (18, 3) watts.
    pub fn example() -> Self {
        Self {
            settings: vec!["S1".into(), "S2".into()],
            environment: "urban".into(),
            types: vec![TypeSpec::new(1, 12.0, 3.0), TypeSpec::new(2, 18.0, 3.0)],
            topologies: 10,
            repetitions: 3,
            seed: 42,
            regimes: Regime::ALL.to_vec(),
            output_dir: PathBuf::from("results"),
            dynamics: DynamicsConfig::default(),
            structure_cap: DEFAULT_STRUCTURE_CAP,
            type_space_cap: DEFAULT_TYPE_SPACE_CAP,
            per_drone_setting: None,
            execution: Execution::Parallel,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let m: Self = toml::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(BenchError::Manifest(msg));
        if self.settings.is_empty() {
            return bad("no settings".into());
        }
        for s in &self.settings {
            SimulationSetting::named(s)?;
        }
        let mut seen = self.settings.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.settings.len() {
            return bad("duplicate setting".into());
        }
        Environment::preset(&self.environment)?;
        validate_type_set(&self.types)?;
        if self.topologies == 0 || self.repetitions == 0 {
            return bad("topologies and repetitions must be at least 1".into());
        }
        let mut regimes = self.regimes.clone();
        regimes.sort();
        regimes.dedup();
        if regimes.len() != self.regimes.len() {
            return bad("duplicate regime".into());
        }
        if let Some(s) = &self.per_drone_setting {
            if !self.settings.contains(s) {
                return bad(format!("per_drone_setting {s} is not among the settings"));
            }
        }
        self.dynamics.validate()?;
        Ok(())
    }

    pub fn simulation_settings(&self) -> Result<Vec<SimulationSetting>> {
        Ok(self
            .settings
            .iter()
            .map(|s| SimulationSetting::named(s))
            .collect::<coalition_core::Result<_>>()?)
    }

    /// Setting whose per-drone table is written: the configured one, or the
    /// one with the most drones.
    pub fn per_drone_target(&self) -> Result<String> {
        if let Some(s) = &self.per_drone_setting {
            return Ok(s.clone());
        }
        let settings = self.simulation_settings()?;
        let best = settings
            .iter()
            .max_by_key(|s| s.d)
            .ok_or_else(|| BenchError::Manifest("no settings".into()))?;
        Ok(best.name.clone())
    }

    /// `output_dir`, unless the override variable is set.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.output_dir.clone(),
        }
    }
}
