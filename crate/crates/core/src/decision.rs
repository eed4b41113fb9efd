//! Decision kernels: value function, probability weighting, perceived
//! payoffs, and the pairwise imitation probability.

use crate::error::{Error, Result};
use crate::params::{Mode, ModelParams};

/// Power-form value of an outcome: x^sigma for gains, -lambda*(-x)^sigma for
/// losses. Passes through the origin and is monotone increasing.
pub fn value(x: f64, sigma: f64, lambda: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::Domain(format!("value input must be finite, got {x}")));
    }
    debug_assert!(sigma > 0.0 && sigma <= 1.0 && lambda >= 0.0);
    if x >= 0.0 {
        Ok(x.powf(sigma))
    } else {
        Ok(-lambda * (-x).powf(sigma))
    }
}

/// Derivative of `value` with respect to x. Diverges at x = 0 when sigma < 1;
/// the caller gets +inf there.
pub fn value_dx(x: f64, sigma: f64, lambda: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::Domain(format!("value input must be finite, got {x}")));
    }
    if x >= 0.0 {
        Ok(sigma * x.powf(sigma - 1.0))
    } else {
        Ok(lambda * sigma * (-x).powf(sigma - 1.0))
    }
}

/// Probability weighting: exp(-(-ln p)^alpha), with weight(0) = 0 and
/// weight(1) = 1 taken as definitions (the formula's limits).
pub fn weight(p: f64, alpha: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("weight probability must lie in [0,1], got {p}")));
    }
    debug_assert!(alpha > 0.0 && alpha <= 1.0);
    if p == 0.0 {
        return Ok(0.0);
    }
    if p == 1.0 {
        return Ok(1.0);
    }
    // At alpha = 1 the function is the identity; returning p directly keeps
    // the rational special case exact instead of exp(ln p)-rounded.
    if alpha == 1.0 {
        return Ok(p);
    }
    Ok((-(-p.ln()).powf(alpha)).exp())
}

/// Partial derivative of `weight` with respect to p, defined on (0,1).
pub fn weight_dp(p: f64, alpha: f64) -> Result<f64> {
    if p <= 0.0 || p >= 1.0 {
        return Err(Error::Domain(format!(
            "weight slope needs probability in (0,1), got {p}"
        )));
    }
    let l = -p.ln();
    Ok(alpha * l.powf(alpha - 1.0) / p * (-l.powf(alpha)).exp())
}

/// Partial derivative of `weight` with respect to alpha, defined on (0,1).
/// Negative for p < 1/e, zero at p = 1/e, positive for p > 1/e.
pub fn weight_dalpha(p: f64, alpha: f64) -> Result<f64> {
    if p <= 0.0 || p >= 1.0 {
        return Err(Error::Domain(format!(
            "weight rationality-slope needs probability in (0,1), got {p}"
        )));
    }
    let l = -p.ln();
    Ok(-l.powf(alpha) * l.ln() * (-l.powf(alpha)).exp())
}

/// Perceived payoff of holding behavior j at infected fraction i: the
/// behavior's intrinsic value plus the valued infection loss scaled by the
/// (possibly weighted) infection probability k_bar * beta_j * i.
pub fn utility(behavior: usize, i: f64, params: &ModelParams, mode: Mode) -> Result<f64> {
    let b = &params.epidemic.behaviors[behavior];
    let p = params.epidemic.contact_degree * b.infection_rate * i;
    if p > 1.0 {
        return Err(Error::Domain(format!(
            "infection probability k_bar*beta*i = {p} exceeds 1; the linear-risk approximation is invalid"
        )));
    }
    let d = &params.decision;
    let u_c = value(b.intrinsic_payoff, d.value_curvature, d.loss_sensitivity)?;
    let u_n = value(d.infection_loss, d.value_curvature, d.loss_sensitivity)?;
    let risk = match mode {
        Mode::Eut => p,
        Mode::Pt => weight(p, d.rationality)?,
    };
    Ok(u_c + u_n * risk)
}

/// Probability that an individual adopts a neighbor's behavior given both
/// perceived payoffs: 1/2 + (omega/2) * (U_other - U_self) / U_max.
pub fn imitation_prob(u_self: f64, u_other: f64, omega: f64, u_max: f64) -> Result<f64> {
    if u_max <= 0.0 {
        return Err(Error::Precondition(format!("payoff scale must be positive, got {u_max}")));
    }
    let gap = u_other - u_self;
    if gap.abs() > u_max {
        return Err(Error::Domain(format!(
            "payoff gap {gap} exceeds the payoff scale {u_max}; choose a scale bounding all gaps"
        )));
    }
    Ok(0.5 + 0.5 * omega * gap / u_max)
}
