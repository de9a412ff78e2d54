//! Configuration document.
//!
//! JSON with the sections `schema`, `design`, `generation`, `mc`, `io` and an
//! optional `estimates` block. Unknown keys are rejected at every level; the
//! published JSON Schema lives in `schemas/config.schema.json`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use winseq::design::{Allocation, DesignSpec};
use winseq::hce::HceSchema;
use winseq::mc::Method;
use winseq::sim::GenerationSpec;
use winseq::winstats::{StatKind, WinLossEstimates};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<HceSchema>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design: Option<DesignSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generation: Option<GenerationSpec>,
    #[serde(default)]
    pub mc: McSection,
    #[serde(default)]
    pub io: IoSection,
    /// Precomputed H0 / H_A estimates; replace the super-population step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimates: Option<EstimatesSection>,
}

fn default_alpha() -> f64 {
    0.05
}

fn default_power() -> f64 {
    0.9
}

fn default_statistic() -> StatKind {
    StatKind::NetBenefit
}

fn default_exponent() -> f64 {
    2.0
}

fn default_super_population() -> usize {
    100_000
}

fn default_n_max() -> usize {
    1_000_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSection {
    /// Number of analyses K; may be omitted when `allocation` is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stages: Option<usize>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_power")]
    pub target_power: f64,
    #[serde(default = "default_statistic")]
    pub statistic: StatKind,
    #[serde(default = "default_exponent")]
    pub spending_exponent: f64,
    /// Defaults to an even split over `stages` analyses and both arms.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allocation: Option<Allocation>,
    #[serde(default = "default_super_population")]
    pub super_population_size: usize,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    /// Total sample size (both arms) for `power`, `boundaries` and `simulate`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total: Option<usize>,
    /// Fixed efficacy boundaries used for stop/continue verdicts and simulation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundaries: Option<BoundarySet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundarySet {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub net_benefit: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_win_ratio: Option<Vec<f64>>,
}

impl BoundarySet {
    pub fn get(&self, kind: StatKind) -> Option<&Vec<f64>> {
        match kind {
            StatKind::NetBenefit => self.net_benefit.as_ref(),
            StatKind::LogWinRatio => self.log_win_ratio.as_ref(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SimHypothesis {
    H0,
    #[default]
    Ha,
}

fn default_reps() -> usize {
    1000
}

fn default_seed() -> u64 {
    1
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSection {
    #[serde(default = "default_reps")]
    pub reps: usize,
    /// Master seed for every random draw (super-populations and trials).
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    /// Whether `simulate` draws trials from the null or the alternative model.
    #[serde(default)]
    pub hypothesis: SimHypothesis,
}

impl Default for McSection {
    fn default() -> Self {
        Self {
            reps: default_reps(),
            seed: default_seed(),
            methods: default_methods(),
            hypothesis: SimHypothesis::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IoSection {
    /// Subject CSV; the `--data` flag takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    /// Report path; the `--out` flag takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatesSection {
    pub h0: WinLossEstimates,
    pub ha: WinLossEstimates,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Config = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        if let Some(d) = &self.design {
            d.allocation()?;
        }
        if let Some(g) = &self.generation {
            g.validate()?;
        }
        Ok(())
    }

    pub fn design(&self) -> Result<&DesignSection, CliError> {
        self.design
            .as_ref()
            .ok_or_else(|| CliError::Config("config has no `design` section".into()))
    }

    pub fn generation(&self) -> Result<&GenerationSpec, CliError> {
        self.generation
            .as_ref()
            .ok_or_else(|| CliError::Config("config has no `generation` section".into()))
    }

    /// Outcome schema: the explicit one, else the schema of generated data.
    pub fn schema(&self) -> Result<HceSchema, CliError> {
        match (&self.schema, &self.generation) {
            (Some(s), _) => Ok(s.clone()),
            (None, Some(g)) => Ok(g.schema()),
            (None, None) => Err(CliError::Config(
                "config needs a `schema` section (or a `generation` section to derive it)".into(),
            )),
        }
    }

    pub fn design_spec(&self) -> Result<DesignSpec, CliError> {
        let d = self.design()?;
        let spec = DesignSpec {
            alpha: d.alpha,
            target_power: d.target_power,
            statistic: d.statistic,
            spending_exponent: d.spending_exponent,
            allocation: d.allocation()?,
            generation: self.generation()?.clone(),
            super_population_size: d.super_population_size,
            n_max: d.n_max,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl DesignSection {
    pub fn allocation(&self) -> Result<Allocation, CliError> {
        let alloc = match (&self.allocation, self.stages) {
            (Some(a), Some(k)) if a.stages() != k => {
                return Err(CliError::Config(format!(
                    "design.stages = {k} but the allocation has {} stages",
                    a.stages()
                )))
            }
            (Some(a), _) => a.clone(),
            (None, Some(k)) => Allocation::even(k)?,
            (None, None) => {
                return Err(CliError::Config(
                    "design needs `stages` or an explicit `allocation`".into(),
                ))
            }
        };
        alloc.validate()?;
        Ok(alloc)
    }

    pub fn total(&self, flag: Option<usize>) -> Result<usize, CliError> {
        flag.or(self.total)
            .ok_or_else(|| CliError::Config("total sample size missing: pass --n or set design.total".into()))
    }
}
