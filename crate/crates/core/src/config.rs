//! Experiment configuration, read from TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pmf::DEFAULT_PMF_SAMPLES;

pub const DEFAULT_EVAL_SAMPLES: usize = 10_000;
pub const DEFAULT_CLUSTER_SIZE: usize = 4;
pub const DEFAULT_SOURCE_LEVELS: usize = 64;
pub const MAX_RESOLUTION: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Scenario {
    /// Sensors placed uniformly in the unit square, ρ = exp(−β·distance).
    Field { n: usize, beta: f64 },
    /// N encoders observing U₀ ~ N(0, σ₀²) through N(0, λ²) noise.
    Ceo { n: usize, sigma0_sq: f64, lambda_sq: f64 },
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Field { .. } => "field",
            Scenario::Ceo { .. } => "ceo",
        }
    }
}

fn default_cluster_size() -> usize {
    DEFAULT_CLUSTER_SIZE
}
fn one() -> usize {
    1
}
fn default_max_resolution() -> usize {
    MAX_RESOLUTION
}
fn default_source_levels() -> usize {
    DEFAULT_SOURCE_LEVELS
}
fn default_pmf_samples() -> usize {
    DEFAULT_PMF_SAMPLES
}
fn default_eval_samples() -> usize {
    DEFAULT_EVAL_SAMPLES
}
fn default_seed() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Coding {
    /// Bits per encoder, R.
    pub rate: u32,
    /// Candidate quantizer resolutions for index reuse; empty selects every
    /// power of two in (2^R, max_resolution].
    #[serde(default)]
    pub resolutions: Vec<usize>,
    #[serde(default = "default_max_resolution")]
    pub max_resolution: usize,
    #[serde(default = "default_cluster_size")]
    pub cluster_size: usize,
    #[serde(default = "one")]
    pub link_a: usize,
    #[serde(default = "one")]
    pub link_b: usize,
    /// Resolution of the hidden CEO source.
    #[serde(default = "default_source_levels")]
    pub source_levels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Simulation {
    #[serde(default = "default_pmf_samples")]
    pub pmf_samples: usize,
    #[serde(default = "default_eval_samples")]
    pub eval_samples: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

impl Default for Simulation {
    fn default() -> Self {
        Simulation { pmf_samples: DEFAULT_PMF_SAMPLES, eval_samples: DEFAULT_EVAL_SAMPLES, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub coding: Coding,
    #[serde(default)]
    pub simulation: Simulation,
}

impl ExperimentConfig {
    pub fn field(n: usize, beta: f64, rate: u32) -> Self {
        Self::with_scenario(Scenario::Field { n, beta }, rate)
    }

    pub fn ceo(n: usize, sigma0_sq: f64, lambda_sq: f64, rate: u32) -> Self {
        Self::with_scenario(Scenario::Ceo { n, sigma0_sq, lambda_sq }, rate)
    }

    fn with_scenario(scenario: Scenario, rate: u32) -> Self {
        ExperimentConfig {
            scenario,
            coding: Coding {
                rate,
                resolutions: Vec::new(),
                max_resolution: MAX_RESOLUTION,
                cluster_size: DEFAULT_CLUSTER_SIZE,
                link_a: 1,
                link_b: 1,
                source_levels: DEFAULT_SOURCE_LEVELS,
            },
            simulation: Simulation::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always representable in TOML")
    }

    /// Number of codewords per encoder, 2^R.
    pub fn codewords(&self) -> usize {
        1usize << self.coding.rate
    }

    /// Resolutions L > 2^R tried by index reuse, ascending.
    pub fn ir_candidates(&self) -> Vec<usize> {
        let k = self.codewords();
        let mut c: Vec<usize> = if self.coding.resolutions.is_empty() {
            (1..usize::BITS).map(|e| 1usize << e).filter(|&l| l > k && l <= self.coding.max_resolution).collect()
        } else {
            self.coding.resolutions.iter().copied().filter(|&l| l > k).collect()
        };
        c.sort_unstable();
        c.dedup();
        c
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match self.scenario {
            Scenario::Field { n, beta } => {
                if n == 0 {
                    return bad("field needs n >= 1".into());
                }
                if !(beta >= 0.0 && beta.is_finite()) {
                    return bad(format!("beta must be finite and >= 0, got {beta}"));
                }
            }
            Scenario::Ceo { n, sigma0_sq, lambda_sq } => {
                if n == 0 {
                    return bad("ceo needs n >= 1".into());
                }
                if !(sigma0_sq > 0.0 && sigma0_sq.is_finite() && lambda_sq > 0.0 && lambda_sq.is_finite()) {
                    return bad("ceo variances must be positive and finite".into());
                }
            }
        }
        let c = &self.coding;
        if !(1..=8).contains(&c.rate) {
            return bad(format!("rate must be between 1 and 8 bits, got {}", c.rate));
        }
        if let Some(&l) = c.resolutions.iter().find(|&&l| l < self.codewords() || l > 1 << 12) {
            return bad(format!("resolution {l} must lie in [2^R, 4096]"));
        }
        if c.max_resolution < 2 || c.max_resolution > 1 << 12 {
            return bad(format!("max_resolution must lie in [2, 4096], got {}", c.max_resolution));
        }
        if c.cluster_size == 0 || c.link_a == 0 || c.link_b == 0 {
            return bad("cluster_size, link_a and link_b must be >= 1".into());
        }
        if c.source_levels < 2 {
            return bad("source_levels must be >= 2".into());
        }
        if self.simulation.pmf_samples == 0 {
            return bad("pmf_samples must be >= 1".into());
        }
        Ok(())
    }
}
