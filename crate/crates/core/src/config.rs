//! JSON scenario files for the command-line front end.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::density::{Density, DensitySpec};
use crate::dynamics::{IntegratorConfig, SirParams, SirState};
use crate::error::{Error, Result};
use crate::preisach::MemoryCurve;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MemoryTag {
    Virgin,
}

/// Initial memory: `"virgin"` (a monotone rise from zero to `I0`) or the
/// alternating extrema `[M1, m1, M2, ...]` of the staircase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MemorySpec {
    Tag(MemoryTag),
    Extrema(Vec<f64>),
}

impl Default for MemorySpec {
    fn default() -> Self {
        MemorySpec::Tag(MemoryTag::Virgin)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    #[serde(rename = "I0")]
    pub i0: f64,
    #[serde(rename = "S0")]
    pub s0: f64,
    #[serde(default)]
    pub memory: MemorySpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub r0_nat: f64,
    pub r0_int: f64,
    pub rho: f64,
    pub density: DensitySpec,
    pub initial: InitialConfig,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl ScenarioConfig {
    /// Parses and validates a config.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::config("<root>", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(name, format!("must be finite, got {v}")))
            }
        };
        finite("r0_nat", self.r0_nat)?;
        finite("r0_int", self.r0_int)?;
        finite("rho", self.rho)?;
        if !(self.r0_int > 1.0) {
            return Err(Error::config("r0_int", format!("must exceed 1, got {}", self.r0_int)));
        }
        if !(self.r0_nat >= self.r0_int) {
            return Err(Error::config(
                "r0_nat",
                format!("must be at least r0_int = {}, got {}", self.r0_int, self.r0_nat),
            ));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::config("rho", format!("must lie in (0, 1), got {}", self.rho)));
        }
        Density::from_spec(&self.density).map_err(|e| Error::config("density", e.to_string()))?;
        let (i0, s0) = (self.initial.i0, self.initial.s0);
        if !(i0 > 0.0 && i0 <= 1.0) {
            return Err(Error::config("initial.I0", format!("must lie in (0, 1], got {i0}")));
        }
        if !(s0 > 0.0) {
            return Err(Error::config("initial.S0", format!("must be positive, got {s0}")));
        }
        if i0 + s0 > 1.0 + 1e-12 {
            return Err(Error::config("initial", format!("I0 + S0 = {} exceeds 1", i0 + s0)));
        }
        self.memory()?;
        self.integrator.validate()
    }

    pub fn memory(&self) -> Result<MemoryCurve> {
        let i0 = self.initial.i0;
        match &self.initial.memory {
            MemorySpec::Tag(MemoryTag::Virgin) => MemoryCurve::risen_to(i0),
            MemorySpec::Extrema(ext) => MemoryCurve::from_extrema(ext.clone(), i0),
        }
        .map_err(|e| Error::config("initial.memory", e.to_string()))
    }

    pub fn params(&self) -> Result<SirParams> {
        let density = Density::from_spec(&self.density)?;
        SirParams::new(self.rho, Arc::new(density), self.r0_nat, self.r0_int)
    }

    pub fn initial_state(&self) -> Result<SirState> {
        SirState::new(self.initial.i0, self.initial.s0, self.memory()?)
    }
}
