//! Versioned, self-validating design files.
//!
//! A design is stored as a single JSON document. Floats are written with
//! shortest round-trip formatting, so a reload reproduces every value bit for
//! bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cluster::{ClusterPlan, Dendrogram};
use crate::config::ExperimentConfig;
use crate::decode::{Decoder, Factor, FactorGraph, Schedule};
use crate::error::{Error, Result};
use crate::factorize::Ccre;
use crate::gauss_model::CovarianceModel;
use crate::index_assign::{ClusterCodeDesign, IndexAssignment};
use crate::pmf::NORMALIZATION_TOLERANCE;
use crate::quantizer::ScalarQuantizer;

pub const SCHEMA_VERSION: u32 = 1;

/// Quantize-only decoding or index reuse from L quantizer levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Mode {
    Dec,
    Ir { levels: usize },
}

impl Mode {
    pub fn label(&self) -> &'static str {
        match self {
            Mode::Dec => "dec",
            Mode::Ir { .. } => "ir",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub tool_version: String,
}

/// Everything the simulator needs to encode and decode without redesigning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignArtifact {
    pub schema_version: u32,
    pub provenance: Provenance,
    pub config: ExperimentConfig,
    pub mode: Mode,
    pub model: CovarianceModel,
    /// Sensor positions for field scenarios.
    pub positions: Option<Vec<[f64; 2]>>,
    /// One quantizer per variable.
    pub quantizers: Vec<ScalarQuantizer>,
    /// One assignment per variable; `None` marks a variable that is never transmitted.
    pub assignments: Vec<Option<IndexAssignment>>,
    /// Variables whose estimates enter the SNR.
    pub targets: Vec<usize>,
    pub dendrogram: Option<Dendrogram>,
    pub plan: ClusterPlan,
    pub ccre: Ccre,
    /// Conditional tables p(i_A | i_B), one per CCRE factor, axes ordered B then A.
    pub factors: Vec<Factor>,
    pub cluster_designs: Vec<ClusterCodeDesign>,
    pub kld_bits: f64,
}

fn invariant(invariant: &'static str, detail: impl Into<String>) -> Error {
    Error::Invariant { invariant, detail: detail.into() }
}

impl DesignArtifact {
    pub fn n_variables(&self) -> usize {
        self.quantizers.len()
    }

    /// Re-checks every structural invariant of the design.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::SchemaVersion { found: self.schema_version, expected: SCHEMA_VERSION });
        }
        self.config.validate()?;
        let n = self.n_variables();
        self.model.validate()?;
        if self.model.n_sources() != n || self.assignments.len() != n {
            return Err(invariant("one quantizer and assignment per variable", format!("model has {} variables", self.model.n_sources())));
        }
        for (v, q) in self.quantizers.iter().enumerate() {
            q.validate().map_err(|e| invariant("quantizers are ordered and finite", format!("variable {v}: {e}")))?;
        }
        for (v, a) in self.assignments.iter().enumerate() {
            let Some(a) = a else { continue };
            let check = IndexAssignment::from_map(a.map().to_vec())
                .map_err(|e| invariant("assignments are surjective", format!("variable {v}: {e}")))?;
            if check.codewords() != a.codewords() {
                return Err(invariant("assignments are surjective", format!("variable {v} declares {} codewords", a.codewords())));
            }
            if a.levels() != self.quantizers[v].len() {
                return Err(invariant("assignment inputs match quantizer levels", format!("variable {v}")));
            }
            if a.preimages().iter().any(|q| q.len() > a.preimage_bound()) {
                return Err(invariant("preimage sizes obey L-K+1", format!("variable {v}")));
            }
        }
        if self.targets.is_empty() || self.targets.iter().any(|&t| t >= n) {
            return Err(invariant("targets are valid variables", format!("{:?}", self.targets)));
        }
        if let Some(d) = &self.dendrogram {
            d.validate()?;
        }
        self.plan.validate(n)?;
        let c = &self.config.coding;
        self.ccre.validate(n, self.plan.max_size.max(c.link_a + c.link_b))?;
        if self.factors.len() != self.ccre.factors.len() {
            return Err(invariant("one factor table per CCRE factor", format!("{} tables for {} factors", self.factors.len(), self.ccre.factors.len())));
        }
        for (m, (f, cf)) in self.factors.iter().zip(&self.ccre.factors).enumerate() {
            if f.scope != cf.scope() {
                return Err(invariant("factor tables follow CCRE scopes", format!("factor {m}")));
            }
            let shape: Vec<usize> = f.scope.iter().map(|&s| self.quantizers[s].len()).collect();
            if f.shape != shape || f.table.len() != shape.iter().product::<usize>() {
                return Err(invariant("factor tables match quantizer resolutions", format!("factor {m}")));
            }
            if f.table.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                return Err(invariant("factor tables are normalized conditionals", format!("factor {m} has invalid entries")));
            }
            let slice: usize = shape[cf.b.len()..].iter().product();
            for (s, chunk) in f.table.chunks(slice).enumerate() {
                let total: f64 = chunk.iter().sum();
                if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
                    return Err(invariant(
                        "factor tables are normalized conditionals",
                        format!("factor {m} slice {s} sums to {total}"),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("artifacts always serialize")
    }

    /// Parses, checks the schema version and validates.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let found = value
            .get("schema_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::Parse("missing schema_version".into()))?;
        if found != SCHEMA_VERSION as u64 {
            return Err(Error::SchemaVersion { found: found as u32, expected: SCHEMA_VERSION });
        }
        let artifact: DesignArtifact = serde_json::from_value(value).map_err(|e| Error::Parse(e.to_string()))?;
        artifact.validate()?;
        Ok(artifact)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn factor_graph(&self) -> Result<FactorGraph> {
        let alphabets = self.quantizers.iter().map(ScalarQuantizer::len).collect();
        FactorGraph::new(alphabets, self.factors.clone())
    }

    pub fn decoder(&self) -> Result<Decoder> {
        Ok(Decoder {
            graph: self.factor_graph()?,
            assignments: self.assignments.clone(),
            quantizers: self.quantizers.clone(),
            targets: self.targets.clone(),
            schedule: Schedule::Auto,
        })
    }

    /// Mapping vectors as text, one row per quantizer index.
    pub fn mappings_text(&self) -> String {
        let mut s = String::new();
        for (v, a) in self.assignments.iter().enumerate() {
            let Some(a) = a else { continue };
            s.push_str(&format!("source {v}: L={} K={}\n", a.levels(), a.codewords()));
            for (i, w) in a.map().iter().enumerate() {
                s.push_str(&format!("  {i:>3} -> {w}\n"));
            }
        }
        s
    }
}
