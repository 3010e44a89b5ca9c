//! Experiment configuration: a TOML document describing the system, cost,
//! controller space, prior, bound and learning settings of one run.
//!
//! Named presets can be overridden field by field: an override document is
//! deep-merged onto the preset's table before parsing.

use crate::bounds::{BoundConfig, ControllerSpace};
use crate::cost::CostWeights;
use crate::error::{Error, Result};
use crate::learn::SgdConfig;
use crate::posterior::{FinitePosterior, TruncGaussPosterior};
use crate::sysmodel::SystemDistribution;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_test_controllers() -> usize {
    100
}

fn default_test_trajectories() -> usize {
    100
}

fn default_repetitions() -> usize {
    200
}

fn default_oracle_draws() -> usize {
    20_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// T
    pub horizon: usize,
    /// Trajectories per controller.
    pub n: usize,
    /// Sweep over n (examples 1 and 3).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub n_values: Vec<usize>,
    /// Sweep over T (example 2).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub horizons: Vec<usize>,
    pub system: SystemDistribution,
    pub weights: WeightsSpec,
    pub controller_space: ControllerSpaceSpec,
    pub prior: PriorSpec,
    pub bound: BoundConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sgd: Option<SgdConfig>,
    #[serde(default)]
    pub evaluation: EvaluationSpec,
    #[serde(default)]
    pub coverage: CoverageSpec,
}

/// Row-major `Q` and `R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsSpec {
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisSpec {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

impl AxisSpec {
    /// `count` evenly spaced points from `lower` to `upper`.
    pub fn points(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.lower];
        }
        let step = (self.upper - self.lower) / (self.count - 1) as f64;
        (0..self.count)
            .map(|i| if i + 1 == self.count { self.upper } else { self.lower + step * i as f64 })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControllerSpaceSpec {
    /// Cartesian grid with one axis per gain entry (row-major). The first
    /// axis varies slowest.
    Grid {
        dim_u: usize,
        dim_x: usize,
        axes: Vec<AxisSpec>,
    },
    Box {
        dim_u: usize,
        dim_x: usize,
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorSpec {
    Uniform,
    Pmf { probs: Vec<f64> },
    TruncatedGaussian(TruncGaussPosterior),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSpec {
    /// Controllers sampled from a continuous posterior.
    #[serde(default = "default_test_controllers")]
    pub test_controllers: usize,
    /// Test trajectories per controller.
    #[serde(default = "default_test_trajectories")]
    pub test_trajectories: usize,
}

impl Default for EvaluationSpec {
    fn default() -> Self {
        EvaluationSpec {
            test_controllers: default_test_controllers(),
            test_trajectories: default_test_trajectories(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverageSpec {
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    /// System draws behind each brute-force `C(K)`.
    #[serde(default = "default_oracle_draws")]
    pub oracle_draws: usize,
}

impl Default for CoverageSpec {
    fn default() -> Self {
        CoverageSpec {
            repetitions: default_repetitions(),
            oracle_draws: default_oracle_draws(),
        }
    }
}

fn config_err(what: impl Into<String>) -> Error {
    Error::Config(what.into())
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(config_err(format!("{what} must be a non-empty rectangular matrix")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Recursively merges `over` into `base`; tables merge key by key, every
/// other value is replaced.
pub fn merge_toml(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge_toml(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn one_line(e: impl std::fmt::Display) -> String {
    e.to_string().split_whitespace().collect::<Vec<_>>().join(" ")
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| config_err(one_line(e)))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies an override document on top of `self`.
    pub fn with_overrides(&self, overrides: &str) -> Result<Self> {
        let over: toml::Value = toml::from_str(overrides).map_err(|e| config_err(one_line(e)))?;
        let mut base = toml::Value::try_from(self).map_err(|e| config_err(one_line(e)))?;
        merge_toml(&mut base, over);
        let cfg: ExperimentConfig = base.try_into().map_err(|e| config_err(one_line(e)))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Digest of the canonical serialization, ignoring `output_dir`.
    pub fn hash(&self) -> String {
        let mut cfg = self.clone();
        cfg.output_dir = PathBuf::new();
        crate::output::config_hash(&cfg.to_toml_string())
    }

    pub fn weights(&self) -> Result<CostWeights<f64>> {
        let q = matrix(&self.weights.q, "Q")?;
        let r = matrix(&self.weights.r, "R")?;
        CostWeights::new(q, r).map_err(|e| config_err(format!("weights: {e}")))
    }

    fn space_dims(&self) -> (usize, usize) {
        match &self.controller_space {
            ControllerSpaceSpec::Grid { dim_u, dim_x, .. } | ControllerSpaceSpec::Box { dim_u, dim_x, .. } => {
                (*dim_u, *dim_x)
            }
        }
    }

    /// The enumerated controllers of a grid space.
    pub fn controllers(&self) -> Result<Vec<DMatrix<f64>>> {
        let ControllerSpaceSpec::Grid { dim_u, dim_x, axes } = &self.controller_space else {
            return Err(config_err("controller_space is not a finite grid"));
        };
        let points: Vec<Vec<f64>> = axes.iter().map(AxisSpec::points).collect();
        let mut gains = vec![Vec::new()];
        for axis in &points {
            gains = gains
                .into_iter()
                .flat_map(|prefix| {
                    axis.iter().map(move |&v| {
                        let mut g = prefix.clone();
                        g.push(v);
                        g
                    })
                })
                .collect();
        }
        Ok(gains
            .into_iter()
            .map(|g| DMatrix::from_row_slice(*dim_u, *dim_x, &g))
            .collect())
    }

    pub fn controller_space(&self) -> Result<ControllerSpace> {
        match &self.controller_space {
            ControllerSpaceSpec::Grid { .. } => Ok(ControllerSpace::Finite(self.controllers()?)),
            ControllerSpaceSpec::Box {
                dim_u,
                dim_x,
                lower,
                upper,
            } => Ok(ControllerSpace::Box {
                dim_u: *dim_u,
                dim_x: *dim_x,
                lower: lower.clone(),
                upper: upper.clone(),
            }),
        }
    }

    pub fn finite_prior(&self) -> Result<FinitePosterior> {
        let card = self.controllers()?.len();
        match &self.prior {
            PriorSpec::Uniform => FinitePosterior::uniform(card),
            PriorSpec::Pmf { probs } => {
                if probs.len() != card {
                    return Err(config_err(format!("prior has {} masses for {card} controllers", probs.len())));
                }
                FinitePosterior::new(probs.clone())
            }
            PriorSpec::TruncatedGaussian(_) => Err(config_err("a grid space needs a uniform or pmf prior")),
        }
    }

    pub fn truncgauss_prior(&self) -> Result<TruncGaussPosterior> {
        match &self.prior {
            PriorSpec::TruncatedGaussian(p) => Ok(p.clone()),
            _ => Err(config_err("a box space needs a truncated_gaussian prior")),
        }
    }

    pub fn sgd(&self) -> Result<&SgdConfig> {
        self.sgd.as_ref().ok_or_else(|| config_err("missing [sgd] section"))
    }

    pub fn n_sweep(&self) -> Vec<usize> {
        if self.n_values.is_empty() {
            vec![self.n]
        } else {
            self.n_values.clone()
        }
    }

    pub fn horizon_sweep(&self) -> Vec<usize> {
        if self.horizons.is_empty() {
            vec![self.horizon]
        } else {
            self.horizons.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| match e {
            Error::Config(_) => e,
            other => config_err(other.to_string()),
        };
        let weights = self.weights()?;
        let (du, dx) = self.space_dims();
        if weights.dim_x() != self.system.dim_x || weights.dim_u() != self.system.dim_u {
            return Err(config_err("weights do not match the system dimensions"));
        }
        if (du, dx) != (self.system.dim_u, self.system.dim_x) {
            return Err(config_err("controller_space does not match the system dimensions"));
        }
        if self.horizon == 0 || self.horizons.contains(&0) {
            return Err(config_err("horizons must be at least 1"));
        }
        if self.n == 0 || self.n_values.contains(&0) {
            return Err(config_err("trajectory counts must be at least 1"));
        }
        if self.evaluation.test_controllers == 0 || self.evaluation.test_trajectories == 0 {
            return Err(config_err("evaluation counts must be at least 1"));
        }
        if self.coverage.repetitions == 0 || self.coverage.oracle_draws == 0 {
            return Err(config_err("coverage counts must be at least 1"));
        }
        match &self.controller_space {
            ControllerSpaceSpec::Grid { axes, .. } => {
                if axes.len() != du * dx {
                    return Err(config_err(format!("grid needs {} axes, got {}", du * dx, axes.len())));
                }
                if axes.iter().any(|a| a.count == 0 || !(a.lower <= a.upper)) {
                    return Err(config_err("grid axes need count ≥ 1 and lower ≤ upper"));
                }
                self.finite_prior().map_err(wrap)?;
            }
            ControllerSpaceSpec::Box { lower, upper, .. } => {
                if lower.len() != du * dx || upper.len() != du * dx {
                    return Err(config_err("box bounds must have one entry per gain entry"));
                }
                let prior = self.truncgauss_prior()?;
                if (prior.dim_u, prior.dim_x) != (du, dx) {
                    return Err(config_err("prior dimensions do not match the controller space"));
                }
                let inside = (0..prior.dim()).all(|i| prior.lower[i] >= lower[i] && prior.upper[i] <= upper[i]);
                if !inside {
                    return Err(config_err("prior support leaves the controller box"));
                }
            }
        }
        self.bound.validate().map_err(wrap)?;
        if let Some(sgd) = &self.sgd {
            sgd.validate().map_err(wrap)?;
        }
        Ok(())
    }
}
