//! Steers the population's long-run state toward policy targets by
//! adjusting the decision parameters (rationality, perceived infection loss,
//! behavior payoffs) while the epidemic parameters stay fixed. Uses an
//! exterior penalty for the target constraints, a log barrier for the
//! parameter bounds, analytic gradients through the implicit steady-state
//! map, and momentum gradient descent.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::decision::{value, value_dx, weight, weight_dalpha, weight_dp};
use crate::error::{Error, Result};
use crate::params::{Mode, ModelParams};
use crate::steady_state::{classify_pt, interior_root, CaseLabel, SteadyState, TwoBehavior};

/// Additive adjustment to the decision parameters:
/// (rationality, infection loss, risky payoff, conservative payoff).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InterventionVector {
    pub d_alpha: f64,
    pub d_cn: f64,
    pub d_c1: f64,
    pub d_c2: f64,
}

impl InterventionVector {
    pub fn zero() -> Self {
        InterventionVector { d_alpha: 0.0, d_cn: 0.0, d_c1: 0.0, d_c2: 0.0 }
    }

    pub fn norm_sq(&self) -> f64 {
        self.d_alpha * self.d_alpha
            + self.d_cn * self.d_cn
            + self.d_c1 * self.d_c1
            + self.d_c2 * self.d_c2
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.d_alpha, self.d_cn, self.d_c1, self.d_c2]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        InterventionVector { d_alpha: a[0], d_cn: a[1], d_c1: a[2], d_c2: a[3] }
    }
}

/// Target box: keep the infected fraction at or below `i_max` while at least
/// `x_min` of the susceptibles stay with the risky (productive) behavior.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ConstraintTarget {
    pub i_max: f64,
    pub x_min: f64,
}

impl ConstraintTarget {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.i_max) || !(0.0..=1.0).contains(&self.x_min) {
            return Err(Error::Precondition(format!(
                "target must lie in the unit box, got i_max = {}, x_min = {}",
                self.i_max, self.x_min
            )));
        }
        Ok(())
    }
}

/// Descent hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct OptimizerConfig {
    /// Exterior penalty weight (shared by the target and regime penalties).
    pub penalty_weight: f64,
    /// Log-barrier scale; larger values weaken the barrier.
    pub barrier_scale: f64,
    pub momentum: f64,
    pub learning_rate: f64,
    pub max_iters: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            penalty_weight: 100.0,
            barrier_scale: 1000.0,
            momentum: 0.9,
            learning_rate: 1e-3,
            max_iters: 20_000,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.penalty_weight > 0.0)
            || !(self.barrier_scale > 0.0)
            || !(0.0..1.0).contains(&self.momentum)
            || !(self.learning_rate > 0.0)
        {
            return Err(Error::Precondition(format!(
                "optimizer config out of range: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Loss evaluators. Each returns (value, derivative): the pandemic loss is
/// differentiated in i, the behavior loss in x1, and the intervention loss
/// componentwise in the adjustment vector.
pub struct GuidanceCost {
    pub pandemic_loss: Box<dyn Fn(f64, f64) -> (f64, f64) + Sync + Send>,
    pub behavior_loss: Box<dyn Fn(f64, f64) -> (f64, f64) + Sync + Send>,
    pub intervention_loss: Box<dyn Fn(&InterventionVector) -> (f64, [f64; 4]) + Sync + Send>,
}

impl GuidanceCost {
    /// Squared-error losses and a squared 2-norm intervention cost.
    pub fn default_quadratic() -> Self {
        GuidanceCost {
            pandemic_loss: Box::new(|i, i_m| ((i - i_m).powi(2), 2.0 * (i - i_m))),
            behavior_loss: Box::new(|x, x_m| ((x - x_m).powi(2), 2.0 * (x - x_m))),
            intervention_loss: Box::new(|d| {
                (
                    d.norm_sq(),
                    [2.0 * d.d_alpha, 2.0 * d.d_cn, 2.0 * d.d_c1, 2.0 * d.d_c2],
                )
            }),
        }
    }

    /// Default losses with the intervention cost removed; isolates how close
    /// the optimizer can push the state to the target.
    pub fn without_intervention_cost() -> Self {
        GuidanceCost {
            intervention_loss: Box::new(|_| (0.0, [0.0; 4])),
            ..Self::default_quadratic()
        }
    }

    /// Numerically checks that the intervention loss is minimized at zero
    /// and does not decrease away from it componentwise.
    pub fn validate(&self) -> Result<()> {
        let (at_zero, _) = (self.intervention_loss)(&InterventionVector::zero());
        for k in 0..4 {
            for s in [-0.3, -0.01, 0.01, 0.3] {
                let mut a = [0.0; 4];
                a[k] = s;
                let d = InterventionVector::from_array(a);
                let (v, g) = (self.intervention_loss)(&d);
                if v < at_zero || g[k] * s < 0.0 {
                    return Err(Error::Precondition(format!(
                        "intervention loss must be minimized at zero and \
                         nondecreasing away from it; violated at component {k}, offset {s}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Which objective shape applies: targets inside the reachable region get
/// the exterior-penalty form, targets outside it get the nearest-point form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Variant {
    Feasible,
    Infeasible,
}

/// The share of risky behavior that an interior steady state pins to a given
/// infected fraction: gamma / ((1-i) k_bar beta1).
pub fn steady_curve(i: f64, params: &ModelParams) -> Result<f64> {
    params.require_two_behavior()?;
    let kb1 = params.epidemic.contact_degree * params.epidemic.behaviors[0].infection_rate;
    if !(kb1 > 0.0) {
        return Err(Error::Precondition(format!(
            "k_bar*beta1 must be positive, got {kb1}"
        )));
    }
    if i == 1.0 {
        return Err(Error::Domain("the curve diverges at i = 1".to_string()));
    }
    if !(0.0..1.0).contains(&i) {
        return Err(Error::Precondition(format!("need 0 <= i < 1, got {i}")));
    }
    Ok(params.epidemic.recovery_rate / ((1.0 - i) * kb1))
}

/// Whether some steady state can satisfy both targets simultaneously: the
/// curve value at `i_max` must reach `x_min`. The comparison carries a tiny
/// relative slack so targets sitting exactly on the curve count as reachable.
pub fn feasibility(target: &ConstraintTarget, params: &ModelParams) -> Result<bool> {
    target.validate()?;
    if target.i_max == 1.0 {
        // Any steady state satisfies i <= 1, and shares never fall below a
        // valid x_min <= 1 on the curve's upper end.
        return Ok(true);
    }
    Ok(target.x_min <= steady_curve(target.i_max, params)? * (1.0 + 1e-12))
}

fn hinge(z: f64) -> (f64, f64) {
    let a = z.max(0.0);
    (a * a, 2.0 * a)
}

/// Decision parameters shifted by the intervention; the payoff scale (and so
/// the selection constant) deliberately stays fixed.
pub fn adjusted_params(params: &ModelParams, delta: &InterventionVector) -> ModelParams {
    let mut p = params.clone();
    p.decision.rationality += delta.d_alpha;
    p.decision.infection_loss += delta.d_cn;
    p.epidemic.behaviors[0].intrinsic_payoff += delta.d_c1;
    p.epidemic.behaviors[1].intrinsic_payoff += delta.d_c2;
    p
}

fn is_interior(delta: &InterventionVector, params: &ModelParams) -> bool {
    let a = params.decision.rationality + delta.d_alpha;
    let cn = params.decision.infection_loss + delta.d_cn;
    let c1 = params.epidemic.behaviors[0].intrinsic_payoff + delta.d_c1;
    let c2 = params.epidemic.behaviors[1].intrinsic_payoff + delta.d_c2;
    a > 0.0 && a < 1.0 && cn < 0.0 && c1 > c2
}

/// Steady state of the adjusted system restricted to the guided regime,
/// with the implicit sensitivities of i to each adjustment component.
struct InnerPoint {
    i: f64,
    x1: f64,
    phi2: f64,
    /// d i / d delta_k; zero on the saturated continuation branch.
    di_dd: [f64; 4],
    dx1_di: f64,
}

fn solve_inner(delta: &InterventionVector, params: &ModelParams) -> Result<InnerPoint> {
    let adjusted = adjusted_params(params, delta);
    let tb = TwoBehavior::new(&adjusted)?;
    if tb.kb1 <= tb.gamma {
        return Err(Error::Constraint(format!(
            "guidance assumes an endemic-capable system; k_bar*beta1 = {} \
             does not exceed gamma = {}",
            tb.kb1, tb.gamma
        )));
    }
    let excess = tb.kb1 - tb.gamma;
    if !(0.0..=1.0).contains(&excess) {
        return Err(Error::Domain(format!(
            "k_bar*beta1 - gamma = {excess} is outside [0,1]"
        )));
    }
    let alpha = adjusted.decision.rationality;
    let phi2 = -tb.k0 * tb.du - (tb.gamma - tb.kb1) - tb.k0 * tb.un * weight(excess, alpha)?;
    if phi2 < 0.0 {
        // Saturated branch: everyone risky at maximal spread. The state no
        // longer moves with the adjustments; the regime penalty supplies the
        // gradient that pushes back toward the interior.
        let i_bar = 1.0 - tb.gamma / tb.kb1;
        return Ok(InnerPoint {
            i: i_bar,
            x1: 1.0,
            phi2,
            di_dd: [0.0; 4],
            dx1_di: tb.gamma / ((1.0 - i_bar).powi(2) * tb.kb1),
        });
    }
    let i = interior_root(&tb, Mode::Pt)?;
    let x1 = tb.gamma / ((1.0 - i) * tb.kb1);
    let sigma = adjusted.decision.value_curvature;
    let lambda = adjusted.decision.loss_sensitivity;
    let cn = adjusted.decision.infection_loss;
    let c1 = adjusted.epidemic.behaviors[0].intrinsic_payoff;
    let c2 = adjusted.epidemic.behaviors[1].intrinsic_payoff;
    let p_star = tb.kb1 * i;
    // Implicit differentiation of the interior fixed-point equation
    // k0 u(cn) w(kb1 i) - kb1 i + k0 (u(c1) - u(c2)) = 0.
    let denom = tb.kb1 * tb.k0 * tb.un * weight_dp(p_star, alpha)? - tb.kb1;
    let di_dd = [
        -tb.k0 * tb.un * weight_dalpha(p_star, alpha)? / denom,
        -tb.k0 * value_dx(cn, sigma, lambda)? * weight(p_star, alpha)? / denom,
        -tb.k0 * value_dx(c1, sigma, lambda)? / denom,
        tb.k0 * value_dx(c2, sigma, lambda)? / denom,
    ];
    Ok(InnerPoint {
        i,
        x1,
        phi2,
        di_dd,
        dx1_di: tb.gamma / ((1.0 - i).powi(2) * tb.kb1),
    })
}

/// Loss and gradient in one pass; both share the inner steady-state solve.
#[allow(clippy::too_many_arguments)]
fn eval(
    delta: &InterventionVector,
    target: &ConstraintTarget,
    params: &ModelParams,
    cost: &GuidanceCost,
    config: &OptimizerConfig,
    variant: Variant,
) -> Result<(f64, [f64; 4])> {
    if !is_interior(delta, params) {
        // Infinite-loss sentinel: the point is outside the barrier's domain.
        return Ok((f64::INFINITY, [0.0; 4]));
    }
    let inner = solve_inner(delta, params)?;
    let mu = config.penalty_weight;

    let (outer, douter_di, douter_dx) = match variant {
        Variant::Feasible => {
            let (p1, d1) = hinge(inner.i - target.i_max);
            let (p2, d2) = hinge(-inner.i);
            let (p3, d3) = hinge(target.x_min - inner.x1);
            let (p4, d4) = hinge(inner.x1 - 1.0);
            (mu * (p1 + p2 + p3 + p4), mu * (d1 - d2), mu * (d4 - d3))
        }
        Variant::Infeasible => {
            let (l1, dl1) = (cost.pandemic_loss)(inner.i, target.i_max);
            let (l2, dl2) = (cost.behavior_loss)(inner.x1, target.x_min);
            (l1 + l2, dl1, dl2)
        }
    };

    let (l3, dl3) = (cost.intervention_loss)(delta);

    let alpha = params.decision.rationality + delta.d_alpha;
    let cn = params.decision.infection_loss + delta.d_cn;
    let c1 = params.epidemic.behaviors[0].intrinsic_payoff + delta.d_c1;
    let c2 = params.epidemic.behaviors[1].intrinsic_payoff + delta.d_c2;
    let t = config.barrier_scale;
    let barrier = -((1.0 - alpha).ln() + alpha.ln() + (-cn).ln()) / t;
    let dbarrier = [
        (1.0 / (1.0 - alpha) - 1.0 / alpha) / t,
        -1.0 / (t * cn),
        0.0,
        0.0,
    ];

    // Regime membership: the guided steady state must stay in the interior
    // regime, i.e. phi2 >= 0; the exterior penalty activates below zero.
    let (pen, dpen) = hinge(-inner.phi2);
    let sigma = params.decision.value_curvature;
    let lambda = params.decision.loss_sensitivity;
    let kb1 = params.epidemic.contact_degree * params.epidemic.behaviors[0].infection_rate;
    let excess = kb1 - params.epidemic.recovery_rate;
    let k0 = params.k0();
    let un = value(cn, sigma, lambda)?;
    let w_exc = weight(excess, alpha)?;
    let dphi2 = [
        -k0 * un * weight_dalpha(excess, alpha)?,
        -k0 * value_dx(cn, sigma, lambda)? * w_exc,
        -k0 * value_dx(c1, sigma, lambda)?,
        k0 * value_dx(c2, sigma, lambda)?,
    ];

    let loss = outer + l3 + barrier + mu * pen;
    let chain = douter_di + douter_dx * inner.dx1_di;
    let mut grad = [0.0; 4];
    for k in 0..4 {
        grad[k] = chain * inner.di_dd[k] + dl3[k] + dbarrier[k] - mu * dpen * dphi2[k];
    }
    Ok((loss, grad))
}

/// Scalar loss of an adjustment. Returns an infinite sentinel when the
/// adjustment leaves the barrier's domain (rationality outside (0,1),
/// nonnegative infection loss, or payoff order flipped).
pub fn objective(
    delta: &InterventionVector,
    target: &ConstraintTarget,
    params: &ModelParams,
    cost: &GuidanceCost,
    config: &OptimizerConfig,
    variant: Variant,
) -> Result<f64> {
    target.validate()?;
    config.validate()?;
    Ok(eval(delta, target, params, cost, config, variant)?.0)
}

/// Componentwise derivative of the objective.
pub fn gradient(
    delta: &InterventionVector,
    target: &ConstraintTarget,
    params: &ModelParams,
    cost: &GuidanceCost,
    config: &OptimizerConfig,
    variant: Variant,
) -> Result<[f64; 4]> {
    target.validate()?;
    config.validate()?;
    Ok(eval(delta, target, params, cost, config, variant)?.1)
}

/// Outcome of one descent.
#[derive(Debug, Clone)]
pub struct Descent {
    pub delta: InterventionVector,
    pub loss_trace: Vec<f64>,
    pub final_loss: f64,
}

/// Generic momentum descent over the 4-component adjustment with halving
/// projection back into the interior.
fn descend<F, G>(
    start: [f64; 4],
    f: F,
    interior: G,
    config: &OptimizerConfig,
) -> Result<(InterventionVector, Vec<f64>)>
where
    F: Fn(&[f64; 4]) -> Result<(f64, [f64; 4])>,
    G: Fn(&[f64; 4]) -> bool,
{
    if !interior(&start) {
        return Err(Error::Precondition(
            "descent must start strictly inside the constraints".to_string(),
        ));
    }
    let mut pos = start;
    let mut vel = [0.0; 4];
    let (mut loss, mut grad) = f(&pos)?;
    let mut trace = Vec::with_capacity(config.max_iters + 1);
    trace.push(loss);
    for _ in 0..config.max_iters {
        for k in 0..4 {
            vel[k] = config.momentum * vel[k] - config.learning_rate * grad[k];
        }
        // Project by halving: a candidate that leaves the constraint
        // interior, or where the steady state is no longer numerically
        // resolvable, shortens the step instead of aborting.
        let mut halvings = 0;
        loop {
            let next = [
                pos[0] + vel[0],
                pos[1] + vel[1],
                pos[2] + vel[2],
                pos[3] + vel[3],
            ];
            if interior(&next) {
                match f(&next) {
                    Ok((l, g)) => {
                        pos = next;
                        loss = l;
                        grad = g;
                        break;
                    }
                    Err(Error::Domain(_)) => {}
                    Err(e) => return Err(e),
                }
            }
            halvings += 1;
            if halvings > 60 {
                return Err(Error::Constraint(
                    "step could not be projected into the interior after 60 halvings"
                        .to_string(),
                ));
            }
            for v in vel.iter_mut() {
                *v *= 0.5;
            }
        }
        trace.push(loss);
    }
    Ok((InterventionVector::from_array(pos), trace))
}

/// Momentum gradient descent from an interior starting adjustment.
pub fn momentum_descent(
    start: &InterventionVector,
    target: &ConstraintTarget,
    params: &ModelParams,
    cost: &GuidanceCost,
    config: &OptimizerConfig,
    variant: Variant,
) -> Result<Descent> {
    target.validate()?;
    config.validate()?;
    cost.validate()?;
    params.require_two_behavior()?;
    let (delta, trace) = descend(
        start.as_array(),
        |a| eval(&InterventionVector::from_array(*a), target, params, cost, config, variant),
        |a| is_interior(&InterventionVector::from_array(*a), params),
        config,
    )?;
    let final_loss = *trace.last().expect("trace holds at least the start");
    Ok(Descent { delta, loss_trace: trace, final_loss })
}

/// Infected fraction the unadjusted classifier reports for an adjustment,
/// reading the saturated regime at its maximal-spread state.
fn shifted_i(delta: &InterventionVector, params: &ModelParams) -> Option<f64> {
    if !is_interior(delta, params) {
        return None;
    }
    match classify_pt(&adjusted_params(params, delta)) {
        Ok(ss) if ss.i_star.is_finite() => Some(ss.i_star),
        _ => None,
    }
}

/// Bisects `scale` in [0, 1] so that the steady state along `direction`
/// lands at `i_target`. The caller guarantees i(0) > i_target; a direction
/// whose far end still sits above the target yields None.
fn bisect_direction(
    direction: [f64; 4],
    i_target: f64,
    params: &ModelParams,
) -> Option<InterventionVector> {
    let at = |s: f64| {
        InterventionVector::from_array([
            s * direction[0],
            s * direction[1],
            s * direction[2],
            s * direction[3],
        ])
    };
    if shifted_i(&at(1.0), params)? > i_target {
        return None;
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        match shifted_i(&at(mid), params) {
            Some(i) if i > i_target => lo = mid,
            Some(_) => hi = mid,
            // An unresolvable midpoint: retreat toward the known-good end.
            None => hi = mid,
        }
    }
    Some(at(hi))
}

/// Starting adjustments that already place the steady state near where the
/// objective wants it, so the descent only settles locally instead of
/// crossing the stiff penalty wall at speed. Reaching a low infected
/// fraction cheaply matters because the state's sensitivity to every
/// adjustment component collapses there and the penalties lose their grip.
fn warm_starts(
    target: &ConstraintTarget,
    params: &ModelParams,
    variant: Variant,
) -> Vec<InterventionVector> {
    let Some(i_unguided) = shifted_i(&InterventionVector::zero(), params) else {
        return Vec::new();
    };
    let kb1 = params.epidemic.contact_degree * params.epidemic.behaviors[0].infection_rate;
    let gamma = params.epidemic.recovery_rate;
    let i_target = match variant {
        Variant::Feasible => {
            // Just inside the corridor of states satisfying both targets.
            let i_lower = (1.0 - gamma / (target.x_min * kb1).max(f64::MIN_POSITIVE)).max(0.0);
            let width = target.i_max - i_lower;
            if width <= 0.0 {
                return Vec::new();
            }
            target.i_max - (0.25 * width).min(0.01)
        }
        Variant::Infeasible => {
            // Coarse nearest-point scan along the steady curve; the descent
            // supplies the precision.
            let i_bar = 1.0 - gamma / kb1;
            let mut best = (f64::INFINITY, 0.0);
            for k in 0..128 {
                let i = i_bar * k as f64 / 128.0;
                let Ok(x) = steady_curve(i, params) else { continue };
                let d = (i - target.i_max).powi(2) + (x - target.x_min).powi(2);
                if d < best.0 {
                    best = (d, i);
                }
            }
            best.1
        }
    };
    if !(i_target > 0.0) || i_unguided <= i_target {
        return Vec::new();
    }

    let mut starts = Vec::new();

    // Fear channel: push the perceived infection loss down until the state
    // reaches the target. Always reachable, but expensive in adjustment
    // norm, so it serves as the fallback.
    let mut span = 1.0;
    while span < 1e9 {
        if let Some(ws) = bisect_direction([0.0, -span, 0.0, 0.0], i_target, params) {
            starts.push(ws);
            break;
        }
        span *= 4.0;
    }

    // Mixed channel: descend the state's own sensitivity direction, which
    // distributes the adjustment the way the intervention cost prefers.
    // Skipped when the unguided state is saturated (zero sensitivity).
    if let Ok(inner) = solve_inner(&InterventionVector::zero(), params) {
        let g = inner.di_dd;
        let norm = (g.iter().map(|v| v * v).sum::<f64>()).sqrt();
        if norm > 1e-12 {
            let alpha = params.decision.rationality;
            let gap = params.epidemic.behaviors[0].intrinsic_payoff
                - params.epidemic.behaviors[1].intrinsic_payoff;
            // Largest multiple of -g/norm that stays strictly interior.
            let mut t_max = f64::INFINITY;
            if g[0] > 0.0 {
                t_max = t_max.min(alpha * norm / g[0]);
            }
            let spread = g[2] - g[3];
            if spread > 0.0 {
                t_max = t_max.min(gap * norm / spread);
            }
            let t = 0.95 * t_max;
            if t.is_finite() && t > 0.0 {
                let dir = [
                    -t * g[0] / norm,
                    -t * g[1] / norm,
                    -t * g[2] / norm,
                    -t * g[3] / norm,
                ];
                if let Some(ws) = bisect_direction(dir, i_target, params) {
                    starts.push(ws);
                }
            }
        }
    }
    starts
}

/// Full guidance outcome.
#[derive(Debug, Clone, Serialize)]
pub struct Guidance {
    pub feasible: bool,
    pub variant: Variant,
    pub unguided: SteadyState,
    pub delta: InterventionVector,
    pub achieved: SteadyState,
    pub loss_trace: Vec<f64>,
    pub objective_value: f64,
}

/// Default starting adjustment: zero, nudged off the rationality bound when
/// the barrier would reject it.
pub fn default_start(params: &ModelParams) -> InterventionVector {
    let mut d = InterventionVector::zero();
    if params.decision.rationality >= 1.0 {
        d.d_alpha = -1e-6;
    }
    d
}

/// Chooses the objective shape from the feasibility test, dispatches on the
/// unguided regime (extinction needs no guidance; the saturated regime
/// compares descent against doing nothing; the interior regime descends),
/// and verifies the achieved steady state by reclassifying the adjusted
/// parameters.
pub fn optimize(
    target: &ConstraintTarget,
    params: &ModelParams,
    cost: &GuidanceCost,
    config: &OptimizerConfig,
) -> Result<Guidance> {
    optimize_multistart(target, params, cost, config, &[])
}

/// `optimize` with extra descent starts; the best final objective wins, ties
/// broken by the smaller adjustment norm.
pub fn optimize_multistart(
    target: &ConstraintTarget,
    params: &ModelParams,
    cost: &GuidanceCost,
    config: &OptimizerConfig,
    extra_starts: &[InterventionVector],
) -> Result<Guidance> {
    target.validate()?;
    config.validate()?;
    cost.validate()?;
    let unguided = classify_pt(params)?;
    if unguided.case_label == CaseLabel::NoSteadyState {
        return Err(Error::Domain(
            "the unguided system has no steady state to guide".to_string(),
        ));
    }
    let feasible = feasibility(target, params)?;
    let variant = if feasible { Variant::Feasible } else { Variant::Infeasible };

    if unguided.case_label == CaseLabel::Case1 {
        // Extinction already satisfies any valid target.
        let delta = InterventionVector::zero();
        return Ok(Guidance {
            feasible,
            variant,
            unguided: unguided.clone(),
            delta,
            achieved: unguided,
            loss_trace: Vec::new(),
            objective_value: 0.0,
        });
    }

    let mut starts = vec![default_start(params)];
    starts.extend(warm_starts(target, params, variant));
    starts.extend_from_slice(extra_starts);
    let descents: Vec<Descent> = starts
        .par_iter()
        .map(|s| momentum_descent(s, target, params, cost, config, variant))
        .collect::<Result<_>>()?;
    let mut best = descents
        .into_iter()
        .min_by(|a, b| {
            (a.final_loss, a.delta.norm_sq())
                .partial_cmp(&(b.final_loss, b.delta.norm_sq()))
                .expect("losses are comparable")
        })
        .expect("at least one start");

    if unguided.case_label == CaseLabel::Case2 {
        // Doing nothing is a candidate too; keep it when it scores no worse.
        let zero = default_start(params);
        let zero_loss = objective(&zero, target, params, cost, config, variant)?;
        if zero_loss < best.final_loss
            || (zero_loss == best.final_loss && zero.norm_sq() < best.delta.norm_sq())
        {
            best = Descent {
                delta: zero,
                loss_trace: best.loss_trace.clone(),
                final_loss: zero_loss,
            };
        }
    }

    let achieved = classify_pt(&adjusted_params(params, &best.delta))?;
    Ok(Guidance {
        feasible,
        variant,
        unguided,
        delta: best.delta,
        achieved,
        loss_trace: best.loss_trace,
        objective_value: best.final_loss,
    })
}

/// Writes the structured text report.
pub fn write_report<W: Write>(
    guidance: &Guidance,
    target: &ConstraintTarget,
    mut w: W,
) -> Result<()> {
    writeln!(w, "behavior guidance report")?;
    writeln!(w, "========================")?;
    writeln!(w, "target: i <= {}, x1 >= {}", target.i_max, target.x_min)?;
    writeln!(
        w,
        "target reachable in steady state: {} (objective: {:?})",
        guidance.feasible, guidance.variant
    )?;
    writeln!(
        w,
        "unguided: {} at i = {}, x1 = {}",
        guidance.unguided.case_label, guidance.unguided.i_star, guidance.unguided.x1_star
    )?;
    writeln!(
        w,
        "adjustment: d_alpha = {}, d_cn = {}, d_c1 = {}, d_c2 = {}",
        guidance.delta.d_alpha, guidance.delta.d_cn, guidance.delta.d_c1, guidance.delta.d_c2
    )?;
    writeln!(
        w,
        "achieved: {} at i = {}, x1 = {}",
        guidance.achieved.case_label, guidance.achieved.i_star, guidance.achieved.x1_star
    )?;
    writeln!(w, "final objective: {}", guidance.objective_value)?;
    writeln!(w, "iterations: {}", guidance.loss_trace.len().saturating_sub(1))?;
    Ok(())
}

/// Writes the loss trace as `iter,loss`.
pub fn write_loss_csv<W: Write>(trace: &[f64], mut w: W) -> Result<()> {
    writeln!(w, "iter,loss")?;
    for (k, l) in trace.iter().enumerate() {
        writeln!(w, "{k},{l}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::test_params;
    use approx::assert_relative_eq;

    /// Endemic-capable family used throughout: gamma = 0.03, k_bar = 10.
    fn guided_params(beta1: f64) -> ModelParams {
        let mut p = test_params(beta1, -10.0);
        p.epidemic.behaviors[0].intrinsic_payoff = 0.5;
        p.decision.rationality = 0.5;
        p.decision.payoff_scale = crate::params::default_payoff_scale(
            &p.epidemic.behaviors,
            p.decision.infection_loss,
            p.decision.value_curvature,
            p.decision.loss_sensitivity,
        )
        .unwrap();
        p
    }

    #[test]
    fn curve_endpoints_and_monotonicity() {
        let params = guided_params(0.02);
        assert_relative_eq!(steady_curve(0.0, &params).unwrap(), 0.15, max_relative = 1e-15);
        assert_relative_eq!(steady_curve(0.85, &params).unwrap(), 1.0, max_relative = 1e-12);
        let mut prev = 0.0;
        for k in 0..100 {
            let x = steady_curve(k as f64 / 100.0, &params).unwrap();
            assert!(x > prev);
            prev = x;
        }
        assert!(matches!(steady_curve(1.0, &params).unwrap_err(), Error::Domain(_)));
        assert!(matches!(steady_curve(1.2, &params).unwrap_err(), Error::Precondition(_)));
    }

    #[test]
    fn feasibility_partitions_the_unit_box() {
        let params = guided_params(0.02);
        // The maximal-spread corner is reachable by definition.
        let boundary = ConstraintTarget { i_max: 0.85, x_min: 1.0 };
        assert!(feasibility(&boundary, &params).unwrap());
        let impossible = ConstraintTarget { i_max: 0.1, x_min: 0.9 };
        assert!(!feasibility(&impossible, &params).unwrap());
        for (i_m, x_m) in [(0.3, 0.2), (0.05, 0.16), (0.5, 0.31), (0.2, 0.18)] {
            let t = ConstraintTarget { i_max: i_m, x_min: x_m };
            assert_eq!(
                feasibility(&t, &params).unwrap(),
                x_m <= steady_curve(i_m, &params).unwrap()
            );
        }
        let bad = ConstraintTarget { i_max: 1.3, x_min: 0.0 };
        assert!(feasibility(&bad, &params).is_err());
    }

    #[test]
    fn penalties_vanish_when_the_target_already_holds() {
        let params = guided_params(0.02);
        // Unguided steady state for this family is interior; pick a target
        // it already satisfies so only the barrier remains.
        let ss = classify_pt(&params).unwrap();
        assert_eq!(ss.case_label, CaseLabel::Case3);
        let target = ConstraintTarget { i_max: ss.i_star + 0.1, x_min: ss.x1_star - 0.1 };
        let cost = GuidanceCost::default_quadratic();
        let config = OptimizerConfig::default();
        let loss = objective(
            &InterventionVector::zero(),
            &target,
            &params,
            &cost,
            &config,
            Variant::Feasible,
        )
        .unwrap();
        let alpha = params.decision.rationality;
        let cn = params.decision.infection_loss;
        let barrier =
            -((1.0 - alpha).ln() + alpha.ln() + (-cn).ln()) / config.barrier_scale;
        assert_relative_eq!(loss, barrier, max_relative = 1e-12);
    }

    #[test]
    fn out_of_domain_adjustment_hits_the_sentinel() {
        let params = guided_params(0.02);
        let target = ConstraintTarget { i_max: 0.2, x_min: 0.2 };
        let cost = GuidanceCost::default_quadratic();
        let config = OptimizerConfig::default();
        for bad in [
            InterventionVector { d_alpha: 0.6, d_cn: 0.0, d_c1: 0.0, d_c2: 0.0 },
            InterventionVector { d_alpha: 0.0, d_cn: 10.5, d_c1: 0.0, d_c2: 0.0 },
            InterventionVector { d_alpha: 0.0, d_cn: 0.0, d_c1: -2.0, d_c2: 0.0 },
        ] {
            let loss =
                objective(&bad, &target, &params, &cost, &config, Variant::Feasible).unwrap();
            assert!(loss.is_infinite());
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let params = guided_params(0.02);
        let target = ConstraintTarget { i_max: 0.1, x_min: 0.25 };
        let cost = GuidanceCost::default_quadratic();
        let config = OptimizerConfig::default();
        let h = 1e-6;
        for variant in [Variant::Feasible, Variant::Infeasible] {
            for d in [
                InterventionVector::zero(),
                InterventionVector { d_alpha: 0.1, d_cn: -1.0, d_c1: -0.1, d_c2: 0.2 },
                InterventionVector { d_alpha: -0.2, d_cn: 2.0, d_c1: 0.3, d_c2: -0.5 },
            ] {
                let g = gradient(&d, &target, &params, &cost, &config, variant).unwrap();
                let mut a = d.as_array();
                for k in 0..4 {
                    let orig = a[k];
                    a[k] = orig + h;
                    let up = objective(
                        &InterventionVector::from_array(a),
                        &target,
                        &params,
                        &cost,
                        &config,
                        variant,
                    )
                    .unwrap();
                    a[k] = orig - h;
                    let dn = objective(
                        &InterventionVector::from_array(a),
                        &target,
                        &params,
                        &cost,
                        &config,
                        variant,
                    )
                    .unwrap();
                    a[k] = orig;
                    let fd = (up - dn) / (2.0 * h);
                    assert_relative_eq!(g[k], fd, max_relative = 1e-5, epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn descent_solves_a_quadratic_exactly() {
        let config = OptimizerConfig {
            max_iters: 4000,
            ..OptimizerConfig::default()
        };
        let minimum = [0.3, -1.2, 0.7, 0.05];
        let f = |a: &[f64; 4]| {
            let mut v = 0.0;
            let mut g = [0.0; 4];
            for k in 0..4 {
                v += (a[k] - minimum[k]).powi(2);
                g[k] = 2.0 * (a[k] - minimum[k]);
            }
            Ok((v, g))
        };
        let (found, trace) = descend([0.0; 4], f, |_| true, &config).unwrap();
        for (got, want) in found.as_array().iter().zip(&minimum) {
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
        assert_eq!(trace.len(), 4001);
        assert!(trace.last().unwrap() < &1e-10);
    }

    #[test]
    fn zero_gradient_leaves_the_start_unmoved() {
        let config = OptimizerConfig { max_iters: 50, ..OptimizerConfig::default() };
        let f = |_: &[f64; 4]| Ok((3.5, [0.0; 4]));
        let start = [0.1, 0.2, -0.3, 0.4];
        let (found, trace) = descend(start, f, |_| true, &config).unwrap();
        assert_eq!(found.as_array(), start);
        assert!(trace.iter().all(|&l| l == 3.5));
    }

    #[test]
    fn projection_keeps_iterates_interior() {
        // Minimum sits exactly on the boundary a[0] = 0; the gradient keeps
        // pointing at it but shrinks, so the halving projection must keep
        // every iterate strictly inside without exhausting its budget.
        let config = OptimizerConfig {
            learning_rate: 0.1,
            max_iters: 500,
            ..OptimizerConfig::default()
        };
        let f = |a: &[f64; 4]| Ok((a[0] * a[0], [2.0 * a[0], 0.0, 0.0, 0.0]));
        let (found, _) = descend([0.4, 0.0, 0.0, 0.0], f, |a| a[0] > 0.0, &config).unwrap();
        assert!(found.d_alpha > 0.0);
        assert!(found.d_alpha < 0.05);
    }

    #[test]
    fn relentless_boundary_pull_reports_step_failure() {
        // A constant gradient into the boundary cannot be projected forever;
        // the descent must fail loudly instead of stalling silently.
        let config = OptimizerConfig {
            learning_rate: 0.5,
            max_iters: 5000,
            ..OptimizerConfig::default()
        };
        let f = |a: &[f64; 4]| Ok((a[0], [1.0, 0.0, 0.0, 0.0]));
        let err = descend([0.4, 0.0, 0.0, 0.0], f, |a| a[0] > 0.0, &config).unwrap_err();
        assert!(matches!(err, Error::Constraint(_)));
    }

    #[test]
    fn malformed_intervention_cost_is_rejected() {
        let cost = GuidanceCost {
            intervention_loss: Box::new(|d| (-d.norm_sq(), [0.0; 4])),
            ..GuidanceCost::default_quadratic()
        };
        assert!(matches!(cost.validate().unwrap_err(), Error::Precondition(_)));
        assert!(GuidanceCost::default_quadratic().validate().is_ok());
        assert!(GuidanceCost::without_intervention_cost().validate().is_ok());
    }

    #[test]
    fn extinction_regime_needs_no_guidance() {
        let params = guided_params(0.002);
        let target = ConstraintTarget { i_max: 0.1, x_min: 0.5 };
        let out = optimize(
            &target,
            &params,
            &GuidanceCost::default_quadratic(),
            &OptimizerConfig::default(),
        )
        .unwrap();
        assert_eq!(out.delta, InterventionVector::zero());
        assert_eq!(out.unguided.case_label, CaseLabel::Case1);
        assert_eq!(out.achieved.case_label, CaseLabel::Case1);
    }

    #[test]
    fn feasible_target_is_reached() {
        let params = guided_params(0.02);
        let unguided = classify_pt(&params).unwrap();
        // Ask for less infection than the unguided interior state carries.
        let target = ConstraintTarget { i_max: unguided.i_star - 0.05, x_min: 0.1 };
        assert!(feasibility(&target, &params).unwrap());
        // An exterior penalty leaves a residual violation of order
        // lambda/(2 mu); the weight must be large enough for the 1e-4 gate.
        let config = OptimizerConfig {
            penalty_weight: 2000.0,
            max_iters: 8000,
            ..OptimizerConfig::default()
        };
        let out = optimize(
            &target,
            &params,
            &GuidanceCost::default_quadratic(),
            &config,
        )
        .unwrap();
        assert_eq!(out.variant, Variant::Feasible);
        assert!(
            out.achieved.i_star <= target.i_max + 1e-4,
            "achieved i {} vs target {}",
            out.achieved.i_star,
            target.i_max
        );
        assert!(out.achieved.x1_star >= target.x_min - 1e-4);
        assert!(is_interior(&out.delta, &params));
    }

    #[test]
    fn infeasible_target_lands_on_the_curve() {
        let params = guided_params(0.02);
        let target = ConstraintTarget { i_max: 0.05, x_min: 0.6 };
        assert!(!feasibility(&target, &params).unwrap());
        let config = OptimizerConfig { max_iters: 4000, ..OptimizerConfig::default() };
        let out = optimize(
            &target,
            &params,
            &GuidanceCost::default_quadratic(),
            &config,
        )
        .unwrap();
        assert_eq!(out.variant, Variant::Infeasible);
        assert_eq!(out.achieved.case_label, CaseLabel::Case3);
        let on_curve = steady_curve(out.achieved.i_star, &params).unwrap();
        assert!(
            (out.achieved.x1_star - on_curve).abs() < 1e-8,
            "not on the curve: {} vs {}",
            out.achieved.x1_star,
            on_curve
        );
    }

    #[test]
    fn report_and_trace_have_the_documented_shape() {
        let params = guided_params(0.02);
        let target = ConstraintTarget { i_max: 0.2, x_min: 0.2 };
        let config = OptimizerConfig { max_iters: 200, ..OptimizerConfig::default() };
        let out = optimize(
            &target,
            &params,
            &GuidanceCost::default_quadratic(),
            &config,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_report(&out, &target, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("behavior guidance report"));
        assert!(text.contains("adjustment: d_alpha"));
        assert!(text.contains("achieved: Case"));
        let mut buf = Vec::new();
        write_loss_csv(&out.loss_trace, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "iter,loss");
        assert_eq!(lines.len(), out.loss_trace.len() + 1);
        assert!(lines[1].starts_with("0,"));
    }
}
