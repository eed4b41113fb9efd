//! Model parameters and the shared system state.

use serde::{Deserialize, Serialize};

use crate::decision::value;
use crate::error::{Error, Result};

/// Whether perceived payoffs use raw probabilities or weighted ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Eut,
    Pt,
}

/// One available behavior: its per-contact infection rate and intrinsic payoff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BehaviorSpec {
    pub infection_rate: f64,
    pub intrinsic_payoff: f64,
}

/// Epidemic and network parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpidemicParams {
    pub recovery_rate: f64,
    pub contact_degree: f64,
    pub info_degree: f64,
    pub behaviors: Vec<BehaviorSpec>,
}

/// Decision-making parameters shared by every individual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionParams {
    pub infection_loss: f64,
    pub rationality: f64,
    pub value_curvature: f64,
    pub loss_sensitivity: f64,
    pub focal_fraction: f64,
    pub selection_strength: f64,
    pub payoff_scale: f64,
}

/// Full parameter set of the co-evolution model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub epidemic: EpidemicParams,
    pub decision: DecisionParams,
}

/// Default payoff scale: the largest intrinsic-value magnitude plus the
/// infection-loss magnitude, an upper bound on any payoff gap the imitation
/// rule can see.
pub fn default_payoff_scale(
    behaviors: &[BehaviorSpec],
    infection_loss: f64,
    sigma: f64,
    lambda: f64,
) -> Result<f64> {
    let mut max_c = 0.0f64;
    for b in behaviors {
        max_c = max_c.max(value(b.intrinsic_payoff, sigma, lambda)?.abs());
    }
    Ok(max_c + value(infection_loss, sigma, lambda)?.abs())
}

impl ModelParams {
    /// Imitation constant k0 = m * omega / U_max.
    pub fn k0(&self) -> f64 {
        self.decision.focal_fraction * self.decision.selection_strength / self.decision.payoff_scale
    }

    /// Number of behaviors.
    pub fn behavior_count(&self) -> usize {
        self.epidemic.behaviors.len()
    }

    /// Valued intrinsic payoff of behavior j.
    pub fn behavior_value(&self, j: usize) -> Result<f64> {
        value(
            self.epidemic.behaviors[j].intrinsic_payoff,
            self.decision.value_curvature,
            self.decision.loss_sensitivity,
        )
    }

    /// Valued infection loss.
    pub fn infection_loss_value(&self) -> Result<f64> {
        value(
            self.decision.infection_loss,
            self.decision.value_curvature,
            self.decision.loss_sensitivity,
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_inner(true)
    }

    /// Same structural checks as `validate` but permitting frozen dynamics
    /// (zero recovery rate or zero focal fraction), which the stochastic
    /// simulation supports even though the closed-form analysis does not.
    pub(crate) fn validate_frozen_dynamics(&self) -> Result<()> {
        self.validate_inner(false)
    }

    fn validate_inner(&self, strict: bool) -> Result<()> {
        let e = &self.epidemic;
        let d = &self.decision;
        if e.behaviors.len() < 2 {
            return Err(Error::Precondition(format!(
                "need at least 2 behaviors, got {}",
                e.behaviors.len()
            )));
        }
        let recovery_ok = if strict {
            e.recovery_rate > 0.0 && e.recovery_rate <= 1.0
        } else {
            (0.0..=1.0).contains(&e.recovery_rate)
        };
        if !recovery_ok {
            return Err(Error::Precondition(format!(
                "recovery rate must lie in (0,1], got {}",
                e.recovery_rate
            )));
        }
        if e.contact_degree < 1.0 || e.info_degree < 1.0 {
            return Err(Error::Precondition(format!(
                "degrees must be at least 1, got contact {} info {}",
                e.contact_degree, e.info_degree
            )));
        }
        for (j, b) in e.behaviors.iter().enumerate() {
            if !b.intrinsic_payoff.is_finite() {
                return Err(Error::Precondition(format!("behavior {j} payoff is not finite")));
            }
            if b.infection_rate < 0.0 {
                return Err(Error::Precondition(format!(
                    "behavior {j} infection rate is negative: {}",
                    b.infection_rate
                )));
            }
            // k_bar*beta*i must stay a probability for every i in [0,1].
            if e.contact_degree * b.infection_rate > 1.0 {
                return Err(Error::Precondition(format!(
                    "behavior {j} violates k_bar*beta <= 1: {}",
                    e.contact_degree * b.infection_rate
                )));
            }
        }
        if !(d.infection_loss < 0.0) {
            return Err(Error::Precondition(format!(
                "infection loss must be negative, got {}",
                d.infection_loss
            )));
        }
        for (name, v) in [
            ("rationality", d.rationality),
            ("value curvature", d.value_curvature),
            ("selection strength", d.selection_strength),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Precondition(format!("{name} must lie in (0,1], got {v}")));
            }
        }
        let focal_ok = if strict {
            d.focal_fraction > 0.0 && d.focal_fraction <= 1.0
        } else {
            (0.0..=1.0).contains(&d.focal_fraction)
        };
        if !focal_ok {
            return Err(Error::Precondition(format!(
                "focal fraction must lie in (0,1], got {}",
                d.focal_fraction
            )));
        }
        if !(d.loss_sensitivity >= 0.0) {
            return Err(Error::Precondition(format!(
                "loss sensitivity must be nonnegative, got {}",
                d.loss_sensitivity
            )));
        }
        if !(d.payoff_scale > 0.0) {
            return Err(Error::Precondition(format!(
                "payoff scale must be positive, got {}",
                d.payoff_scale
            )));
        }
        Ok(())
    }

    /// Checks the shape assumed by the closed-form two-behavior analysis:
    /// exactly two behaviors, the second risk-free, the first strictly more
    /// rewarding.
    pub fn require_two_behavior(&self) -> Result<()> {
        self.validate()?;
        if self.epidemic.behaviors.len() != 2 {
            return Err(Error::Precondition(format!(
                "two-behavior analysis needs exactly 2 behaviors, got {}",
                self.epidemic.behaviors.len()
            )));
        }
        if self.epidemic.behaviors[1].infection_rate != 0.0 {
            return Err(Error::Precondition(format!(
                "two-behavior analysis assumes the conservative behavior is risk-free, got beta2 = {}",
                self.epidemic.behaviors[1].infection_rate
            )));
        }
        if !(self.epidemic.behaviors[0].intrinsic_payoff > self.epidemic.behaviors[1].intrinsic_payoff)
        {
            return Err(Error::Precondition(format!(
                "risky payoff must exceed conservative payoff, got c1 = {} <= c2 = {}",
                self.epidemic.behaviors[0].intrinsic_payoff,
                self.epidemic.behaviors[1].intrinsic_payoff
            )));
        }
        Ok(())
    }
}

/// Infected fraction plus the behavior-share simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub infected_fraction: f64,
    pub behavior_shares: Vec<f64>,
}

impl SystemState {
    pub fn new(infected_fraction: f64, behavior_shares: Vec<f64>) -> Result<Self> {
        let s = Self { infected_fraction, behavior_shares };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.infected_fraction) {
            return Err(Error::Domain(format!(
                "infected fraction must lie in [0,1], got {}",
                self.infected_fraction
            )));
        }
        let mut sum = 0.0;
        for (j, &x) in self.behavior_shares.iter().enumerate() {
            if !(x >= 0.0) {
                return Err(Error::Domain(format!("behavior share {j} is negative: {x}")));
            }
            sum += x;
        }
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!("behavior shares sum to {sum}, not 1")));
        }
        Ok(())
    }
}

/// Two-behavior parameter set used across the unit tests: risky behavior
/// (beta1, c1=0) against risk-free isolation (c2=-1), with the simulation
/// defaults sigma=0.65, lambda=1, gamma=0.03, k_bar=10, d_bar=20.
#[cfg(test)]
pub fn test_params(beta1: f64, c_n: f64) -> ModelParams {
    let behaviors = vec![
        BehaviorSpec { infection_rate: beta1, intrinsic_payoff: 0.0 },
        BehaviorSpec { infection_rate: 0.0, intrinsic_payoff: -1.0 },
    ];
    let payoff_scale = default_payoff_scale(&behaviors, c_n, 0.65, 1.0).unwrap();
    ModelParams {
        epidemic: EpidemicParams {
            recovery_rate: 0.03,
            contact_degree: 10.0,
            info_degree: 20.0,
            behaviors,
        },
        decision: DecisionParams {
            infection_loss: c_n,
            rationality: 0.6,
            value_curvature: 0.65,
            loss_sensitivity: 1.0,
            focal_fraction: 1.0,
            selection_strength: 1.0,
            payoff_scale,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn default_scale_bounds_payoff_gaps() {
        // |u(0)| = 0, |u(-1)| = 1, |u(-20)| = 20^0.65
        let behaviors = vec![
            BehaviorSpec { infection_rate: 0.02, intrinsic_payoff: 0.0 },
            BehaviorSpec { infection_rate: 0.0, intrinsic_payoff: -1.0 },
        ];
        let scale = default_payoff_scale(&behaviors, -20.0, 0.65, 1.0).unwrap();
        assert_relative_eq!(scale, 1.0 + 7.00921686386087, max_relative = 1e-13);
    }

    #[test]
    fn validation_accepts_the_test_family() {
        let params = test_params(0.02, -20.0);
        params.validate().unwrap();
        params.require_two_behavior().unwrap();
        assert_relative_eq!(params.k0(), 1.0 / 8.00921686386087, max_relative = 1e-13);
    }

    #[test]
    fn validation_rejects_broken_inputs() {
        let mut p = test_params(0.02, -20.0);
        p.epidemic.behaviors[0].infection_rate = 0.11;
        assert!(p.validate().is_err(), "k_bar*beta >= 1 must be rejected");

        let mut p = test_params(0.02, -20.0);
        p.decision.infection_loss = 0.5;
        assert!(p.validate().is_err(), "positive infection loss must be rejected");

        let mut p = test_params(0.02, -20.0);
        p.decision.rationality = 0.0;
        assert!(p.validate().is_err(), "zero rationality must be rejected");

        let mut p = test_params(0.02, -20.0);
        p.epidemic.recovery_rate = 0.0;
        assert!(p.validate().is_err(), "zero recovery rate must be rejected");
    }

    #[test]
    fn two_behavior_shape_is_enforced() {
        let mut p = test_params(0.02, -20.0);
        p.epidemic.behaviors[1].infection_rate = 0.001;
        assert!(p.require_two_behavior().is_err());

        let mut p = test_params(0.02, -20.0);
        p.epidemic.behaviors[1].intrinsic_payoff = 0.5;
        assert!(p.require_two_behavior().is_err());
    }

    #[test]
    fn state_validation() {
        SystemState::new(0.2, vec![0.5, 0.5]).unwrap();
        assert!(SystemState::new(1.2, vec![0.5, 0.5]).is_err());
        assert!(SystemState::new(0.2, vec![0.6, 0.5]).is_err());
        assert!(SystemState::new(0.2, vec![-0.1, 1.1]).is_err());
    }
}
