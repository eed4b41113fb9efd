//! Coupled infection/behavior dynamics: right-hand sides for the general
//! M-behavior system and the two-behavior specialization, plus a fixed-step
//! integrator.

use std::io::Write;

use serde::Serialize;

use crate::decision::{value, weight};
use crate::error::{Error, Result};
use crate::params::{Mode, ModelParams, SystemState};

/// Per-step simplex drift above this is a bug, not roundoff; integration aborts.
const DRIFT_ABORT: f64 = 1e-6;
/// Early-exit threshold on the derivative max-norm when integrating to a
/// steady state.
const STEADY_DERIV_NORM: f64 = 1e-10;
/// Number of consecutive sub-threshold steps required to declare convergence.
const STEADY_HOLD_STEPS: usize = 100;

/// Precomputed constants of the vector field.
struct Field {
    k_bar: f64,
    gamma: f64,
    k0: f64,
    alpha: f64,
    mode: Mode,
    betas: Vec<f64>,
    values: Vec<f64>,
    loss_value: f64,
}

impl Field {
    fn new(params: &ModelParams, mode: Mode) -> Result<Self> {
        let d = &params.decision;
        let mut values = Vec::with_capacity(params.behavior_count());
        for b in &params.epidemic.behaviors {
            values.push(value(b.intrinsic_payoff, d.value_curvature, d.loss_sensitivity)?);
        }
        Ok(Self {
            k_bar: params.epidemic.contact_degree,
            gamma: params.epidemic.recovery_rate,
            k0: params.k0(),
            alpha: d.rationality,
            mode,
            betas: params.epidemic.behaviors.iter().map(|b| b.infection_rate).collect(),
            values,
            loss_value: value(d.infection_loss, d.value_curvature, d.loss_sensitivity)?,
        })
    }

    /// Perceived payoff of behavior j at infected fraction i. The exposure
    /// probability is clamped to [0,1] so that integrator sub-steps straying
    /// a rounding error outside the state space stay evaluable.
    fn utility(&self, j: usize, i: f64) -> Result<f64> {
        let p = (self.k_bar * self.betas[j] * i).clamp(0.0, 1.0);
        let risk = match self.mode {
            Mode::Eut => p,
            Mode::Pt => weight(p, self.alpha)?,
        };
        Ok(self.values[j] + self.loss_value * risk)
    }

    /// Writes (di/dt, dx1/dt..dxM/dt) into `out`, using `utils` as scratch.
    fn rhs(&self, i: f64, x: &[f64], utils: &mut [f64], out: &mut [f64]) -> Result<()> {
        let m = self.betas.len();
        let beta_mean: f64 = (0..m).map(|j| self.betas[j] * x[j]).sum();
        out[0] = i * (1.0 - i) * beta_mean * self.k_bar - self.gamma * i;
        for j in 0..m {
            utils[j] = self.utility(j, i)?;
        }
        for j in 0..m {
            let mut acc = 0.0;
            for k in 0..m {
                if k == j {
                    continue;
                }
                let coupling = self.k_bar * i * (self.betas[k] - self.betas[j])
                    + self.k0 * (utils[j] - utils[k]);
                acc += x[j] * x[k] * coupling;
            }
            out[j + 1] = acc;
        }
        Ok(())
    }
}

/// Derivative of the full M-behavior system at a valid state.
pub fn rhs_m(state: &SystemState, params: &ModelParams, mode: Mode) -> Result<(f64, Vec<f64>)> {
    state.validate()?;
    if state.behavior_shares.len() != params.behavior_count() {
        return Err(Error::Domain(format!(
            "state has {} shares for {} behaviors",
            state.behavior_shares.len(),
            params.behavior_count()
        )));
    }
    let field = Field::new(params, mode)?;
    let mut utils = vec![0.0; params.behavior_count()];
    let mut out = vec![0.0; params.behavior_count() + 1];
    field.rhs(state.infected_fraction, &state.behavior_shares, &mut utils, &mut out)?;
    Ok((out[0], out[1..].to_vec()))
}

/// Derivative evaluation without state validation, for finite-difference
/// probes that may sit a hair outside the simplex (e.g. at boundary fixed
/// points).
pub(crate) fn rhs_relaxed(
    i: f64,
    x: &[f64],
    params: &ModelParams,
    mode: Mode,
) -> Result<Vec<f64>> {
    let field = Field::new(params, mode)?;
    let mut utils = vec![0.0; x.len()];
    let mut out = vec![0.0; x.len() + 1];
    field.rhs(i, x, &mut utils, &mut out)?;
    Ok(out)
}

/// Derivative of the two-behavior specialization (risk-free second behavior),
/// written directly in terms of (i, x1).
pub fn rhs_2(i: f64, x1: f64, params: &ModelParams, mode: Mode) -> Result<(f64, f64)> {
    params.require_two_behavior()?;
    if !(0.0..=1.0).contains(&i) || !(0.0..=1.0).contains(&x1) {
        return Err(Error::Domain(format!("state ({i}, {x1}) outside the unit square")));
    }
    let d = &params.decision;
    let beta1 = params.epidemic.behaviors[0].infection_rate;
    let k_bar = params.epidemic.contact_degree;
    let u1 = params.behavior_value(0)?;
    let u2 = params.behavior_value(1)?;
    let u_n = params.infection_loss_value()?;
    let p = (beta1 * k_bar * i).clamp(0.0, 1.0);
    let risk = match mode {
        Mode::Eut => p,
        Mode::Pt => weight(p, d.rationality)?,
    };
    let di = i * (1.0 - i) * beta1 * x1 * k_bar - params.epidemic.recovery_rate * i;
    let dx1 = -beta1 * k_bar * x1 * (1.0 - x1) * i
        + params.k0() * x1 * (1.0 - x1) * (u1 + u_n * risk - u2);
    Ok((di, dx1))
}

/// A sampled solution of the system.
#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<SystemState>,
    /// Largest pre-renormalization simplex drift seen on any step.
    pub max_step_drift: f64,
}

impl Trajectory {
    pub fn terminal(&self) -> &SystemState {
        self.states.last().expect("a trajectory holds at least its initial state")
    }

    /// Writes `t,i,x1,...,xM` rows, keeping every `stride`-th sample plus the
    /// final one.
    pub fn write_csv<W: Write>(&self, mut w: W, stride: usize) -> Result<()> {
        let stride = stride.max(1);
        let m = self.states.first().map_or(0, |s| s.behavior_shares.len());
        write!(w, "t,i")?;
        for j in 1..=m {
            write!(w, ",x{j}")?;
        }
        writeln!(w)?;
        let last = self.times.len() - 1;
        for idx in 0..self.times.len() {
            if idx % stride != 0 && idx != last {
                continue;
            }
            write!(w, "{},{}", self.times[idx], self.states[idx].infected_fraction)?;
            for x in &self.states[idx].behavior_shares {
                write!(w, ",{x}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

struct Stepper {
    field: Field,
    /// Scratch buffers: stage derivatives, the stage state, and utilities.
    k: [Vec<f64>; 4],
    stage: Vec<f64>,
    utils: Vec<f64>,
}

impl Stepper {
    fn new(field: Field, m: usize) -> Self {
        let n = m + 1;
        Stepper {
            field,
            k: [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]],
            stage: vec![0.0; n],
            utils: vec![0.0; m],
        }
    }

    /// One classical 4th-order step of `y = (i, x1..xM)` in place; returns the
    /// pre-renormalization simplex drift.
    fn step(&mut self, y: &mut [f64], dt: f64) -> Result<f64> {
        let n = y.len();
        self.field.rhs(y[0], &y[1..], &mut self.utils, &mut self.k[0])?;
        for s in 1..4 {
            let frac = if s == 3 { 1.0 } else { 0.5 };
            for idx in 0..n {
                self.stage[idx] = y[idx] + frac * dt * self.k[s - 1][idx];
            }
            self.field.rhs(self.stage[0], &self.stage[1..], &mut self.utils, &mut self.k[s])?;
        }
        for idx in 0..n {
            y[idx] += dt / 6.0
                * (self.k[0][idx] + 2.0 * self.k[1][idx] + 2.0 * self.k[2][idx] + self.k[3][idx]);
        }
        // Project back onto the state space: i into [0,1], shares renormalized.
        y[0] = y[0].clamp(0.0, 1.0);
        let mut sum = 0.0;
        for x in y[1..].iter_mut() {
            if *x < 0.0 {
                *x = 0.0;
            }
            sum += *x;
        }
        let drift = (sum - 1.0).abs();
        if drift > 0.0 && sum > 0.0 {
            for x in y[1..].iter_mut() {
                *x /= sum;
            }
        }
        Ok(drift)
    }
}

fn check_finite(y: &[f64], step: usize) -> Result<()> {
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Integration {
            step,
            message: "state became non-finite".to_string(),
        });
    }
    Ok(())
}

/// Fixed-step 4th-order integration from `state0` to time `t_end`, sampling
/// every step.
pub fn integrate(
    state0: &SystemState,
    params: &ModelParams,
    mode: Mode,
    dt: f64,
    t_end: f64,
) -> Result<Trajectory> {
    if !(dt > 0.0) || t_end < dt {
        return Err(Error::Precondition(format!(
            "need dt > 0 and horizon >= dt, got dt={dt}, horizon={t_end}"
        )));
    }
    state0.validate()?;
    params.validate()?;
    let m = params.behavior_count();
    if state0.behavior_shares.len() != m {
        return Err(Error::Domain(format!(
            "state has {} shares for {m} behaviors",
            state0.behavior_shares.len()
        )));
    }
    let steps = (t_end / dt).round() as usize;
    let mut stepper = Stepper::new(Field::new(params, mode)?, m);
    let mut y = Vec::with_capacity(m + 1);
    y.push(state0.infected_fraction);
    y.extend_from_slice(&state0.behavior_shares);

    let mut traj = Trajectory {
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        max_step_drift: 0.0,
    };
    traj.times.push(0.0);
    traj.states.push(state0.clone());
    for step in 1..=steps {
        let drift = stepper.step(&mut y, dt)?;
        check_finite(&y, step)?;
        if drift > DRIFT_ABORT {
            return Err(Error::Integration {
                step,
                message: format!("simplex drift {drift} exceeds {DRIFT_ABORT}"),
            });
        }
        traj.max_step_drift = traj.max_step_drift.max(drift);
        traj.times.push(step as f64 * dt);
        traj.states.push(SystemState {
            infected_fraction: y[0],
            behavior_shares: y[1..].to_vec(),
        });
    }
    Ok(traj)
}

/// Outcome of integrating until the derivative settles.
#[derive(Debug, Clone)]
pub struct Settled {
    pub state: SystemState,
    pub converged: bool,
    /// Derivative max-norm at the final state.
    pub residual: f64,
    pub time: f64,
}

/// Integrates without storing a trajectory until the derivative max-norm
/// stays below 1e-10 for 100 consecutive steps, or `max_time` passes.
pub fn integrate_to_steady(
    state0: &SystemState,
    params: &ModelParams,
    mode: Mode,
    dt: f64,
    max_time: f64,
) -> Result<Settled> {
    if !(dt > 0.0) || max_time < dt {
        return Err(Error::Precondition(format!(
            "need dt > 0 and horizon >= dt, got dt={dt}, horizon={max_time}"
        )));
    }
    state0.validate()?;
    params.validate()?;
    let m = params.behavior_count();
    if state0.behavior_shares.len() != m {
        return Err(Error::Domain(format!(
            "state has {} shares for {m} behaviors",
            state0.behavior_shares.len()
        )));
    }
    let field = Field::new(params, mode)?;
    let mut utils = vec![0.0; m];
    let mut deriv = vec![0.0; m + 1];
    let mut stepper = Stepper::new(Field::new(params, mode)?, m);
    let mut y = Vec::with_capacity(m + 1);
    y.push(state0.infected_fraction);
    y.extend_from_slice(&state0.behavior_shares);

    let steps = (max_time / dt).round() as usize;
    let mut quiet = 0usize;
    let mut time = 0.0;
    let mut converged = false;
    for step in 1..=steps {
        let drift = stepper.step(&mut y, dt)?;
        check_finite(&y, step)?;
        if drift > DRIFT_ABORT {
            return Err(Error::Integration {
                step,
                message: format!("simplex drift {drift} exceeds {DRIFT_ABORT}"),
            });
        }
        time = step as f64 * dt;
        field.rhs(y[0], &y[1..], &mut utils, &mut deriv)?;
        let norm = deriv.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if norm < STEADY_DERIV_NORM {
            quiet += 1;
            if quiet >= STEADY_HOLD_STEPS {
                converged = true;
                break;
            }
        } else {
            quiet = 0;
        }
    }
    field.rhs(y[0], &y[1..], &mut utils, &mut deriv)?;
    let residual = deriv.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    Ok(Settled {
        state: SystemState {
            infected_fraction: y[0],
            behavior_shares: y[1..].to_vec(),
        },
        converged,
        residual,
        time,
    })
}
