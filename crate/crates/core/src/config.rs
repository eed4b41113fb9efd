//! Experiment configuration: one flat TOML file per experiment whose keys
//! mirror the library's parameter names. Everything model-level is
//! validated here so downstream code can assume a well-formed parameter
//! set, and every problem is reported as a configuration error with the
//! offending key (and, for syntax problems, the line).

use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::guidance::{ConstraintTarget, GuidanceCost, OptimizerConfig};
use crate::params::{
    default_payoff_scale, BehaviorSpec, DecisionParams, EpidemicParams, ModelParams, SystemState,
};
use crate::steady_state::SweepAxis;

/// Flat experiment configuration. Model keys are shared by every
/// subcommand; the rest are read only by the subcommand that needs them.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    // Model: epidemic side.
    pub beta: Option<Vec<f64>>,
    pub c: Option<Vec<f64>>,
    pub c_n: Option<f64>,
    pub gamma: Option<f64>,
    pub k_bar: Option<f64>,
    pub d_bar: Option<f64>,
    // Model: decision side.
    pub alpha: Option<f64>,
    pub sigma: Option<f64>,
    pub lambda: Option<f64>,
    pub m: Option<f64>,
    pub omega: Option<f64>,
    pub u_max: Option<f64>,
    /// Root of all randomness; sub-streams are split from it.
    pub seed: Option<u64>,
    // Trajectory integration.
    pub i0: Option<f64>,
    pub x0: Option<Vec<f64>>,
    pub dt: Option<f64>,
    pub t_max: Option<f64>,
    /// Output thinning: write every stride-th sample.
    pub stride: Option<usize>,
    // Stochastic population simulation.
    pub n: Option<usize>,
    pub contact_degree: Option<usize>,
    pub info_degree: Option<usize>,
    pub runs: Option<usize>,
    pub steps: Option<usize>,
    // Numeric steady-state search.
    pub starts: Option<usize>,
    // Parameter sweep.
    pub sweep_axis: Option<String>,
    pub sweep_from: Option<f64>,
    pub sweep_to: Option<f64>,
    pub sweep_steps: Option<usize>,
    // Rationality comparison.
    pub alpha_low: Option<f64>,
    pub alpha_high: Option<f64>,
    // Behavior guidance.
    pub i_max: Option<f64>,
    pub x_min: Option<f64>,
    pub penalty_weight: Option<f64>,
    pub barrier_scale: Option<f64>,
    pub momentum: Option<f64>,
    pub learning_rate: Option<f64>,
    pub max_iters: Option<usize>,
    /// "quadratic" (default) or "none".
    pub intervention_cost: Option<String>,
    // Estimation inputs.
    pub responses_file: Option<String>,
    pub choices_file: Option<String>,
    pub subjects_file: Option<String>,
    pub bins: Option<usize>,
}

fn require<T: Copy>(v: Option<T>, key: &str) -> Result<T> {
    v.ok_or_else(|| Error::Config(format!("missing required key `{key}`")))
}

fn require_ref<'a, T>(v: &'a Option<T>, key: &str) -> Result<&'a T> {
    v.as_ref()
        .ok_or_else(|| Error::Config(format!("missing required key `{key}`")))
}

impl ExperimentConfig {
    /// Parses TOML text; syntax and unknown-key diagnostics carry line
    /// numbers from the parser.
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::parse(&text)
    }

    /// Builds and validates the model parameters from the model keys.
    pub fn model_params(&self) -> Result<ModelParams> {
        let beta = require_ref(&self.beta, "beta")?;
        let c = require_ref(&self.c, "c")?;
        if beta.len() != c.len() {
            return Err(Error::Config(format!(
                "`beta` and `c` must have equal length, got {} and {}",
                beta.len(),
                c.len()
            )));
        }
        let behaviors: Vec<BehaviorSpec> = beta
            .iter()
            .zip(c)
            .map(|(&infection_rate, &intrinsic_payoff)| BehaviorSpec {
                infection_rate,
                intrinsic_payoff,
            })
            .collect();
        let c_n = require(self.c_n, "c_n")?;
        let sigma = self.sigma.unwrap_or(0.65);
        let lambda = self.lambda.unwrap_or(1.0);
        let payoff_scale = match self.u_max {
            Some(u) => u,
            None => default_payoff_scale(&behaviors, c_n, sigma, lambda)
                .map_err(|e| Error::Config(format!("cannot derive `u_max`: {e}")))?,
        };
        let params = ModelParams {
            epidemic: EpidemicParams {
                recovery_rate: require(self.gamma, "gamma")?,
                contact_degree: require(self.k_bar, "k_bar")?,
                info_degree: require(self.d_bar, "d_bar")?,
                behaviors,
            },
            decision: DecisionParams {
                infection_loss: c_n,
                rationality: require(self.alpha, "alpha")?,
                value_curvature: sigma,
                loss_sensitivity: lambda,
                focal_fraction: self.m.unwrap_or(1.0),
                selection_strength: self.omega.unwrap_or(1.0),
                payoff_scale,
            },
        };
        params
            .validate()
            .map_err(|e| Error::Config(format!("invalid model parameters: {e}")))?;
        Ok(params)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn dt(&self) -> f64 {
        self.dt.unwrap_or(0.01)
    }

    pub fn t_max(&self) -> f64 {
        self.t_max.unwrap_or(1000.0)
    }

    pub fn stride(&self) -> usize {
        self.stride.unwrap_or(1).max(1)
    }

    pub fn runs(&self) -> usize {
        self.runs.unwrap_or(1)
    }

    pub fn starts(&self) -> usize {
        self.starts.unwrap_or(64)
    }

    /// Number of individuals in the stochastic simulation.
    pub fn population(&self) -> Result<usize> {
        require(self.n, "n")
    }

    /// Number of synchronous rounds the stochastic simulation runs.
    pub fn horizon(&self) -> Result<usize> {
        require(self.steps, "steps")
    }

    /// Initial condition for trajectory integration: defaults to 5% infected
    /// and equal behavior shares.
    pub fn initial_state(&self, behavior_count: usize) -> Result<SystemState> {
        let i0 = self.i0.unwrap_or(0.05);
        let x0 = match &self.x0 {
            Some(x) => x.clone(),
            None => vec![1.0 / behavior_count as f64; behavior_count],
        };
        if x0.len() != behavior_count {
            return Err(Error::Config(format!(
                "`x0` must have one share per behavior ({behavior_count}), got {}",
                x0.len()
            )));
        }
        let state = SystemState { infected_fraction: i0, behavior_shares: x0 };
        state
            .validate()
            .map_err(|e| Error::Config(format!("invalid initial state: {e}")))?;
        Ok(state)
    }

    /// Lattice degrees for the stochastic simulation; default to the
    /// mean-field degrees rounded to the nearest integer.
    pub fn lattice_degrees(&self) -> Result<(usize, usize)> {
        let contact = match self.contact_degree {
            Some(d) => d,
            None => require(self.k_bar, "k_bar (or contact_degree)")?.round() as usize,
        };
        let info = match self.info_degree {
            Some(d) => d,
            None => require(self.d_bar, "d_bar (or info_degree)")?.round() as usize,
        };
        Ok((contact, info))
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        let d = OptimizerConfig::default();
        OptimizerConfig {
            penalty_weight: self.penalty_weight.unwrap_or(d.penalty_weight),
            barrier_scale: self.barrier_scale.unwrap_or(d.barrier_scale),
            momentum: self.momentum.unwrap_or(d.momentum),
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            max_iters: self.max_iters.unwrap_or(d.max_iters),
        }
    }

    pub fn target(&self) -> Result<ConstraintTarget> {
        let t = ConstraintTarget {
            i_max: require(self.i_max, "i_max")?,
            x_min: require(self.x_min, "x_min")?,
        };
        t.validate()
            .map_err(|e| Error::Config(format!("invalid target: {e}")))?;
        Ok(t)
    }

    /// Intervention-cost shape for the guidance optimizer: "quadratic"
    /// (default) or "none".
    pub fn guidance_cost(&self) -> Result<GuidanceCost> {
        match self.intervention_cost.as_deref() {
            None | Some("quadratic") => Ok(GuidanceCost::default_quadratic()),
            Some("none") => Ok(GuidanceCost::without_intervention_cost()),
            Some(other) => Err(Error::Config(format!(
                "`intervention_cost` must be \"quadratic\" or \"none\", got {other:?}"
            ))),
        }
    }

    /// Sweep axis and grid: `sweep_axis` is "beta1" or "alpha", the grid is
    /// `sweep_steps` evenly spaced values from `sweep_from` to `sweep_to`.
    pub fn sweep(&self) -> Result<(SweepAxis, Vec<f64>)> {
        let axis = match require_ref(&self.sweep_axis, "sweep_axis")?.as_str() {
            "beta1" => SweepAxis::RiskyInfectionRate,
            "alpha" => SweepAxis::Rationality,
            other => {
                return Err(Error::Config(format!(
                    "`sweep_axis` must be \"beta1\" or \"alpha\", got {other:?}"
                )))
            }
        };
        let from = require(self.sweep_from, "sweep_from")?;
        let to = require(self.sweep_to, "sweep_to")?;
        let steps = require(self.sweep_steps, "sweep_steps")?;
        if steps < 2 || !(to > from) {
            return Err(Error::Config(format!(
                "sweep needs sweep_steps >= 2 and sweep_to > sweep_from, \
                 got {steps} steps over [{from}, {to}]"
            )));
        }
        match axis {
            SweepAxis::Rationality if !(from > 0.0 && to <= 1.0) => {
                return Err(Error::Config(format!(
                    "a rationality sweep must stay inside (0, 1], got [{from}, {to}]"
                )));
            }
            SweepAxis::RiskyInfectionRate if !(from > 0.0) => {
                return Err(Error::Config(format!(
                    "an infection-rate sweep needs sweep_from > 0, got {from}"
                )));
            }
            _ => {}
        }
        let grid = (0..steps)
            .map(|k| from + (to - from) * k as f64 / (steps - 1) as f64)
            .collect();
        Ok((axis, grid))
    }

    pub fn rationality_pair(&self) -> Result<(f64, f64)> {
        Ok((
            require(self.alpha_low, "alpha_low")?,
            require(self.alpha_high, "alpha_high")?,
        ))
    }

    pub fn responses_file(&self) -> Result<&str> {
        Ok(require_ref(&self.responses_file, "responses_file")?.as_str())
    }

    pub fn subjects_file(&self) -> Result<&str> {
        Ok(require_ref(&self.subjects_file, "subjects_file")?.as_str())
    }

    /// Curvature used by the estimator; shares the model default.
    pub fn estimation_sigma(&self) -> f64 {
        self.sigma.unwrap_or(0.65)
    }
}
