//! Long-run outcomes of the coupled system: closed-form classification for
//! the two-behavior model, analytic stability certificates, orderings across
//! rationality levels, a test for the risk-seeking parameter regime, a
//! numeric multi-start search for larger systems, and parameter sweeps.

use std::fmt;
use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::decision::{weight, weight_dp};
use crate::error::{Error, Result};
use crate::mean_field::{integrate_to_steady, rhs_relaxed};
use crate::params::{Mode, ModelParams, SystemState};

/// Relative tolerance for detecting the degenerate balance k_bar*beta1 = gamma.
const THRESHOLD_EQ_REL_TOL: f64 = 1e-12;
/// Required residual of the interior fixed-point equation after bisection.
const ROOT_RESIDUAL: f64 = 1e-12;
/// Terminal points closer than this are treated as one fixed point.
const CLUSTER_RADIUS: f64 = 1e-4;
/// Integration settings for the numeric search.
const SEARCH_DT: f64 = 0.01;
const SEARCH_HORIZON: f64 = 50_000.0;

/// Which long-run regime the two-behavior system settles into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CaseLabel {
    /// Disease dies out; everyone ends up with the risky behavior: (0, 1).
    Case1,
    /// Maximal spread with universal risky behavior: (1 - gamma/(k_bar*beta1), 1).
    Case2,
    /// Interior equilibrium where both the infection and the behavior split persist.
    Case3,
    /// Exact balance k_bar*beta1 = gamma: no steady state exists.
    NoSteadyState,
}

impl fmt::Display for CaseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CaseLabel::Case1 => "Case1",
            CaseLabel::Case2 => "Case2",
            CaseLabel::Case3 => "Case3",
            CaseLabel::NoSteadyState => "NoSteadyState",
        };
        f.write_str(s)
    }
}

/// Linearization summary at a fixed point of the two-behavior system.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Stability {
    /// Trace of the Jacobian (P in the certificate).
    pub trace_p: f64,
    /// Determinant of the Jacobian (Q in the certificate).
    pub det_q: f64,
    pub eigen_re: [f64; 2],
    pub eigen_im: [f64; 2],
    /// Certified asymptotically stable: P < 0 and Q > 0.
    pub stable: bool,
}

/// A classified steady state. `i_star`/`x1_star` are NaN and `stability` is
/// None when no steady state exists.
#[derive(Debug, Clone, Serialize)]
pub struct SteadyState {
    pub case_label: CaseLabel,
    pub i_star: f64,
    pub x1_star: f64,
    /// The sign of this discriminant separates Case2 from Case3; NaN when the
    /// classification never needed it.
    pub discriminant: f64,
    pub stability: Option<Stability>,
}

/// Precomputed scalars of the two-behavior system.
#[derive(Debug, Clone, Copy)]
pub(crate) struct TwoBehavior {
    pub gamma: f64,
    /// k_bar * beta1, the per-unit-time exposure coefficient.
    pub kb1: f64,
    pub k0: f64,
    pub alpha: f64,
    /// u(c1) - u(c2) > 0.
    pub du: f64,
    /// u(c_n) < 0.
    pub un: f64,
}

impl TwoBehavior {
    pub(crate) fn new(params: &ModelParams) -> Result<Self> {
        params.validate()?;
        params.require_two_behavior()?;
        let u1 = params.behavior_value(0)?;
        let u2 = params.behavior_value(1)?;
        Ok(TwoBehavior {
            gamma: params.epidemic.recovery_rate,
            kb1: params.epidemic.contact_degree * params.epidemic.behaviors[0].infection_rate,
            k0: params.k0(),
            alpha: params.decision.rationality,
            du: u1 - u2,
            un: params.infection_loss_value()?,
        })
    }

    fn balance_is_exact(&self) -> bool {
        (self.kb1 - self.gamma).abs() <= THRESHOLD_EQ_REL_TOL * self.kb1.max(self.gamma)
    }

    /// Endemic share when everyone takes the risky behavior.
    fn i_bar(&self) -> f64 {
        1.0 - self.gamma / self.kb1
    }

    fn x1_on_curve(&self, i: f64) -> f64 {
        self.gamma / ((1.0 - i) * self.kb1)
    }

    /// Behavior-pressure term h(i): dx1/dt = x1(1-x1) h(i).
    fn pressure(&self, i: f64, mode: Mode) -> Result<f64> {
        let p = self.kb1 * i;
        let risk = match mode {
            Mode::Eut => p,
            Mode::Pt => weight(p, self.alpha)?,
        };
        Ok(-self.kb1 * i + self.k0 * (self.du + self.un * risk))
    }
}

/// Discriminant separating the maximal-spread and interior regimes when
/// exposure probabilities enter payoffs linearly.
pub fn phi_eut(params: &ModelParams) -> Result<f64> {
    let tb = TwoBehavior::new(params)?;
    Ok(phi_eut_raw(&tb))
}

fn phi_eut_raw(tb: &TwoBehavior) -> f64 {
    -tb.k0 * tb.du + (tb.gamma - tb.kb1) * (tb.k0 * tb.un - 1.0)
}

/// Discriminant for the distorted-probability system. Requires
/// k_bar*beta1 - gamma in [0, 1] so the weighting function is applicable.
pub fn phi_pt(params: &ModelParams) -> Result<f64> {
    let tb = TwoBehavior::new(params)?;
    phi_pt_raw(&tb)
}

fn phi_pt_raw(tb: &TwoBehavior) -> Result<f64> {
    let excess = tb.kb1 - tb.gamma;
    if !(0.0..=1.0).contains(&excess) {
        return Err(Error::Domain(format!(
            "k_bar*beta1 - gamma = {excess} is outside [0,1]; the weighting \
             function does not apply"
        )));
    }
    Ok(-tb.k0 * tb.du - (tb.gamma - tb.kb1) - tb.k0 * tb.un * weight(excess, tb.alpha)?)
}

/// Interior fixed-point equation whose root is the Case3 infected fraction.
fn interior_gap(tb: &TwoBehavior, x: f64, mode: Mode) -> Result<f64> {
    let risk = match mode {
        Mode::Eut => tb.kb1 * x,
        Mode::Pt => weight(tb.kb1 * x, tb.alpha)?,
    };
    Ok(tb.k0 * tb.un * risk - tb.kb1 * x + tb.k0 * tb.du)
}

/// Locates the unique root of the (strictly decreasing) interior fixed-point
/// equation on (0, i_bar] by bisection, shrinking the bracket to machine
/// width so downstream finite differences see a smooth map.
pub(crate) fn interior_root(tb: &TwoBehavior, mode: Mode) -> Result<f64> {
    let i_bar = tb.i_bar();
    // Monotonicity guard on a dense grid; a violation means the parameters
    // broke the model's assumptions and bisection would be meaningless.
    let mut prev = f64::INFINITY;
    for k in 0..=64 {
        let x = 1e-15 + (i_bar - 1e-15) * k as f64 / 64.0;
        let g = interior_gap(tb, x, mode)?;
        if g >= prev {
            return Err(Error::Precondition(format!(
                "interior fixed-point equation is not strictly decreasing near x = {x}"
            )));
        }
        prev = g;
    }
    // The equation is positive in the limit x -> 0+ but can stay negative
    // down to astonishingly small x at low rationality (the weighting
    // function decays like exp(-(-ln p)^alpha)), so expand the bracket on a
    // log scale instead of fixing a left endpoint.
    let mut hi = i_bar;
    let mut lo = 0.5 * i_bar;
    while interior_gap(tb, lo, mode)? <= 0.0 {
        hi = lo;
        lo *= 0.5;
        if lo < f64::MIN_POSITIVE {
            return Err(Error::Domain(
                "interior infected fraction is below floating-point resolution".to_string(),
            ));
        }
    }
    for _ in 0..200 {
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if interior_gap(tb, mid, mode)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let root = 0.5 * (lo + hi);
    let residual = interior_gap(tb, root, mode)?;
    if residual.abs() >= ROOT_RESIDUAL {
        return Err(Error::Domain(format!(
            "bisection residual {residual} did not reach {ROOT_RESIDUAL}"
        )));
    }
    Ok(root)
}

fn classify(params: &ModelParams, mode: Mode) -> Result<SteadyState> {
    let tb = TwoBehavior::new(params)?;
    if tb.balance_is_exact() {
        return Ok(SteadyState {
            case_label: CaseLabel::NoSteadyState,
            i_star: f64::NAN,
            x1_star: f64::NAN,
            discriminant: f64::NAN,
            stability: None,
        });
    }
    if tb.kb1 < tb.gamma {
        let stability = certificate_at(&tb, 0.0, 1.0, mode)?;
        return Ok(SteadyState {
            case_label: CaseLabel::Case1,
            i_star: 0.0,
            x1_star: 1.0,
            discriminant: f64::NAN,
            stability: Some(stability),
        });
    }
    let phi = match mode {
        Mode::Eut => phi_eut_raw(&tb),
        Mode::Pt => phi_pt_raw(&tb)?,
    };
    if phi < 0.0 {
        let i_bar = tb.i_bar();
        let stability = certificate_at(&tb, i_bar, 1.0, mode)?;
        return Ok(SteadyState {
            case_label: CaseLabel::Case2,
            i_star: i_bar,
            x1_star: 1.0,
            discriminant: phi,
            stability: Some(stability),
        });
    }
    let i_star = match mode {
        // The interior equation is linear here, so the root is closed-form.
        Mode::Eut => tb.k0 * tb.du / ((1.0 - tb.k0 * tb.un) * tb.kb1),
        Mode::Pt => interior_root(&tb, mode)?,
    };
    let x1_star = tb.x1_on_curve(i_star);
    let stability = certificate_at(&tb, i_star, x1_star, mode)?;
    Ok(SteadyState {
        case_label: CaseLabel::Case3,
        i_star,
        x1_star,
        discriminant: phi,
        stability: Some(stability),
    })
}

/// Steady state of the two-behavior system when exposure probabilities enter
/// payoffs linearly (no probability distortion).
pub fn classify_eut(params: &ModelParams) -> Result<SteadyState> {
    classify(params, Mode::Eut)
}

/// Steady state of the two-behavior system under distorted probability
/// weighting. Degenerates to the linear classification when the rationality
/// coefficient is exactly 1.
pub fn classify_pt(params: &ModelParams) -> Result<SteadyState> {
    if params.decision.rationality == 1.0 {
        return classify(params, Mode::Eut);
    }
    classify(params, Mode::Pt)
}

/// Analytic Jacobian of the two-behavior flow at an arbitrary state
/// (rows: d(di/dt), d(dx1/dt); columns: d/di, d/dx1).
pub fn two_behavior_jacobian(
    i: f64,
    x1: f64,
    params: &ModelParams,
    mode: Mode,
) -> Result<[[f64; 2]; 2]> {
    let tb = TwoBehavior::new(params)?;
    jacobian_raw(&tb, i, x1, mode)
}

fn jacobian_raw(tb: &TwoBehavior, i: f64, x1: f64, mode: Mode) -> Result<[[f64; 2]; 2]> {
    let df_di = (1.0 - 2.0 * i) * tb.kb1 * x1 - tb.gamma;
    let df_dx = i * (1.0 - i) * tb.kb1;
    let edge = x1 * (1.0 - x1);
    // At x1 = 0 or 1 the share derivative is identically zero along the edge,
    // so its i-derivative is exactly zero; skipping the formula also avoids
    // the weighting function's unbounded slope at zero probability.
    let dg_di = if edge == 0.0 {
        0.0
    } else {
        let wprime = match mode {
            Mode::Eut => 1.0,
            Mode::Pt => weight_dp(tb.kb1 * i, tb.alpha)?,
        };
        edge * tb.kb1 * (tb.k0 * tb.un * wprime - 1.0)
    };
    let dg_dx = (1.0 - 2.0 * x1) * tb.pressure(i, mode)?;
    Ok([[df_di, df_dx], [dg_di, dg_dx]])
}

fn certificate_at(tb: &TwoBehavior, i: f64, x1: f64, mode: Mode) -> Result<Stability> {
    let j = jacobian_raw(tb, i, x1, mode)?;
    let trace_p = j[0][0] + j[1][1];
    let det_q = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    let disc = trace_p * trace_p - 4.0 * det_q;
    let (eigen_re, eigen_im) = if disc >= 0.0 {
        let s = disc.sqrt();
        ([(trace_p + s) / 2.0, (trace_p - s) / 2.0], [0.0, 0.0])
    } else {
        let s = (-disc).sqrt() / 2.0;
        ([trace_p / 2.0, trace_p / 2.0], [s, -s])
    };
    Ok(Stability {
        trace_p,
        det_q,
        eigen_re,
        eigen_im,
        stable: trace_p < 0.0 && det_q > 0.0,
    })
}

/// Linearization at a candidate fixed point of the two-behavior system.
/// The point must satisfy the fixed-point equations to within 1e-8.
pub fn stability_certificate(
    i: f64,
    x1: f64,
    params: &ModelParams,
    mode: Mode,
) -> Result<Stability> {
    let tb = TwoBehavior::new(params)?;
    let (di, dx1) = crate::mean_field::rhs_2(i, x1, params, mode)?;
    let residual = di.abs().max(dx1.abs());
    if residual >= 1e-8 {
        return Err(Error::Precondition(format!(
            "({i}, {x1}) is not a fixed point: derivative norm {residual}"
        )));
    }
    certificate_at(&tb, i, x1, mode)
}

/// Largest endemic level the disease can reach (everyone risky).
pub fn max_spread(params: &ModelParams) -> Result<f64> {
    let tb = TwoBehavior::new(params)?;
    if tb.kb1 <= tb.gamma {
        return Err(Error::Domain(format!(
            "k_bar*beta1 = {} does not exceed gamma = {}; the disease cannot persist",
            tb.kb1, tb.gamma
        )));
    }
    Ok(tb.i_bar())
}

/// Whether distorted weighting inflates (`Overweighting`) or deflates
/// (`Underweighting`) the perceived exposure risk around the steady state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum OrderingRegime {
    /// Steady infection sits below the weighting crossover: lower rationality
    /// drives behavior toward caution (lower i and x1).
    Overweighting,
    /// Steady infection sits above the crossover: lower rationality drives
    /// behavior toward risk (higher i and x1).
    Underweighting,
}

/// What the comparison across two rationality levels found.
#[derive(Debug, Clone, Serialize)]
pub enum ComparisonFinding {
    /// Both steady states are interior; the predicted orderings are checked.
    InteriorPair {
        regime: OrderingRegime,
        i_ordering_holds: bool,
        x1_ordering_holds: bool,
    },
    /// The two rationality levels land in different regimes; the consistent
    /// assignment is predicted from the maximal spread level.
    MixedPair {
        expected_low: CaseLabel,
        expected_high: CaseLabel,
        matches: bool,
    },
    /// Both closed-form outcomes are independent of rationality.
    Degenerate { identical: bool },
}

/// Side-by-side steady states at two rationality levels.
#[derive(Debug, Clone, Serialize)]
pub struct RationalityComparison {
    pub alpha_low: f64,
    pub alpha_high: f64,
    pub low: SteadyState,
    pub high: SteadyState,
    /// Infected fraction at which the weighting function crosses the
    /// identity: 1/(k_bar*beta1*e).
    pub crossover_infection: f64,
    pub finding: ComparisonFinding,
}

/// Classifies the system at two rationality levels and checks the predicted
/// ordering of the steady states against the computed ones.
pub fn compare_rationality(
    params: &ModelParams,
    alpha_low: f64,
    alpha_high: f64,
) -> Result<RationalityComparison> {
    if !(alpha_low > 0.0 && alpha_low <= alpha_high && alpha_high <= 1.0) {
        return Err(Error::Precondition(format!(
            "need 0 < alpha_low <= alpha_high <= 1, got ({alpha_low}, {alpha_high})"
        )));
    }
    let at = |alpha: f64| -> Result<SteadyState> {
        let mut p = params.clone();
        p.decision.rationality = alpha;
        classify_pt(&p)
    };
    let low = at(alpha_low)?;
    let high = at(alpha_high)?;
    for (alpha, ss) in [(alpha_low, &low), (alpha_high, &high)] {
        if ss.case_label == CaseLabel::NoSteadyState {
            return Err(Error::Domain(format!(
                "no steady state exists at rationality {alpha}"
            )));
        }
    }
    let tb = TwoBehavior::new(params)?;
    let crossover = 1.0 / (tb.kb1 * std::f64::consts::E);
    let finding = match (low.case_label, high.case_label) {
        (CaseLabel::Case3, CaseLabel::Case3) => {
            let regime = if high.i_star <= crossover {
                OrderingRegime::Overweighting
            } else {
                OrderingRegime::Underweighting
            };
            let (i_ok, x_ok) = match regime {
                OrderingRegime::Overweighting => (
                    high.i_star >= low.i_star,
                    high.x1_star >= low.x1_star,
                ),
                OrderingRegime::Underweighting => (
                    high.i_star <= low.i_star,
                    high.x1_star <= low.x1_star,
                ),
            };
            ComparisonFinding::InteriorPair {
                regime,
                i_ordering_holds: i_ok,
                x1_ordering_holds: x_ok,
            }
        }
        (a, b) if a != b => {
            // Rationality cannot move the system across the extinction
            // threshold, so a mixed pair means one level saturated at
            // universal risk-taking. Which level does is set by whether the
            // maximal spread sits below or above the weighting crossover.
            let (expected_low, expected_high) = if tb.i_bar() <= crossover {
                (CaseLabel::Case3, CaseLabel::Case2)
            } else {
                (CaseLabel::Case2, CaseLabel::Case3)
            };
            ComparisonFinding::MixedPair {
                expected_low,
                expected_high,
                matches: a == expected_low && b == expected_high,
            }
        }
        _ => ComparisonFinding::Degenerate {
            identical: low.i_star == high.i_star && low.x1_star == high.x1_star,
        },
    };
    Ok(RationalityComparison {
        alpha_low,
        alpha_high,
        low,
        high,
        crossover_infection: crossover,
        finding,
    })
}

/// Diagnostics for whether lowering rationality can push behavior toward
/// risk rather than caution.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RadicalRegime {
    pub possible: bool,
    /// k_bar*beta1 - gamma; must exceed `spread_floor`.
    pub spread_margin: f64,
    /// 1/e.
    pub spread_floor: f64,
    /// u(c_n)/(u(c2) - u(c1)), a positive measure of how mild infection is
    /// relative to the behavior gap.
    pub loss_ratio: f64,
    /// e + 1/(k0*(u(c2) - u(c1))); the ratio must stay strictly below this.
    pub loss_ratio_ceiling: f64,
}

/// Tests the two strict conditions under which lower rationality yields more
/// risk-taking: a high enough endemic pressure and a mild enough infection
/// loss.
pub fn radical_regime_test(params: &ModelParams) -> Result<RadicalRegime> {
    let tb = TwoBehavior::new(params)?;
    let spread_margin = tb.kb1 - tb.gamma;
    let spread_floor = std::f64::consts::E.recip();
    // u(c2) - u(c1) = -du < 0, and un < 0, so the ratio is positive while
    // the ceiling subtracts from e.
    let loss_ratio = tb.un / (-tb.du);
    let loss_ratio_ceiling = std::f64::consts::E + 1.0 / (tb.k0 * (-tb.du));
    Ok(RadicalRegime {
        possible: spread_margin > spread_floor && loss_ratio < loss_ratio_ceiling,
        spread_margin,
        spread_floor,
        loss_ratio,
        loss_ratio_ceiling,
    })
}

/// One terminal cluster found by the multi-start numeric search.
#[derive(Debug, Clone, Serialize)]
pub struct NumericCandidate {
    pub state: SystemState,
    /// Derivative max-norm at the cluster representative.
    pub residual: f64,
    /// How many starts converged into this cluster.
    pub basin_count: usize,
    /// Eigenvalues of the reduced Jacobian (coordinates i, x1..x_{M-1}),
    /// from central finite differences.
    pub eigen_re: Vec<f64>,
    pub eigen_im: Vec<f64>,
    /// All eigenvalue real parts strictly negative.
    pub stable: bool,
    /// Trace/determinant certificate, available for two-behavior systems.
    pub certificate: Option<Stability>,
}

/// Result of the multi-start search.
#[derive(Debug, Clone, Serialize)]
pub struct NumericSearch {
    pub candidates: Vec<NumericCandidate>,
    /// Starts that failed to settle within the horizon.
    pub unconverged: usize,
}

/// Deterministic low-discrepancy interior states: a Kronecker sequence on
/// the open cube, mapped onto (i, shares) with a log transform for the
/// simplex.
fn interior_starts(behaviors: usize, count: usize) -> Vec<SystemState> {
    let dims = behaviors + 1;
    // Kronecker step from the generalized golden ratio: the positive root of
    // x^(d+1) = x + 1.
    let mut phi = 1.5f64;
    for _ in 0..64 {
        let f = phi.powi(dims as i32 + 1) - phi - 1.0;
        let fp = (dims as f64 + 1.0) * phi.powi(dims as i32) - 1.0;
        phi -= f / fp;
    }
    let alphas: Vec<f64> = (1..=dims).map(|k| phi.powi(-(k as i32)).fract()).collect();
    (0..count)
        .map(|n| {
            let coords: Vec<f64> = alphas
                .iter()
                .map(|a| (0.5 + (n as f64 + 1.0) * a).fract())
                .collect();
            let infected = 0.02 + 0.96 * coords[0];
            let mut shares: Vec<f64> = coords[1..]
                .iter()
                .map(|&u| -(u.max(1e-9).min(1.0 - 1e-9)).ln())
                .collect();
            let total: f64 = shares.iter().sum();
            for s in shares.iter_mut() {
                *s /= total;
            }
            SystemState { infected_fraction: infected, behavior_shares: shares }
        })
        .collect()
}

/// Central finite-difference Jacobian of the reduced flow in coordinates
/// (i, x1..x_{M-1}), with the last share eliminated by the simplex.
fn fd_reduced_jacobian(
    state: &SystemState,
    params: &ModelParams,
    mode: Mode,
) -> Result<DMatrix<f64>> {
    let m = params.behavior_count();
    let dim = m; // i plus m-1 free shares
    let h = 1e-6;
    let reduced_rhs = |z: &[f64]| -> Result<Vec<f64>> {
        let i = z[0];
        let mut shares = Vec::with_capacity(m);
        shares.extend_from_slice(&z[1..]);
        let tail = 1.0 - shares.iter().sum::<f64>();
        shares.push(tail);
        let full = rhs_relaxed(i, &shares, params, mode)?;
        Ok(full[..dim].to_vec())
    };
    let mut z0 = Vec::with_capacity(dim);
    z0.push(state.infected_fraction);
    z0.extend_from_slice(&state.behavior_shares[..m - 1]);
    let mut jac = DMatrix::zeros(dim, dim);
    for col in 0..dim {
        let mut zp = z0.clone();
        let mut zm = z0.clone();
        zp[col] += h;
        zm[col] -= h;
        let fp = reduced_rhs(&zp)?;
        let fm = reduced_rhs(&zm)?;
        for row in 0..dim {
            jac[(row, col)] = (fp[row] - fm[row]) / (2.0 * h);
        }
    }
    Ok(jac)
}

/// Multi-start numeric search for steady states: integrates from
/// low-discrepancy interior starts, clusters the settled terminals, and
/// attaches a finite-difference linearization to each cluster.
pub fn numeric_steady_state(
    params: &ModelParams,
    mode: Mode,
    starts: usize,
) -> Result<NumericSearch> {
    params.validate()?;
    if starts == 0 {
        return Err(Error::Precondition("need at least one start".to_string()));
    }
    let m = params.behavior_count();
    let initial = interior_starts(m, starts);
    let settled: Vec<_> = initial
        .par_iter()
        .map(|s0| integrate_to_steady(s0, params, mode, SEARCH_DT, SEARCH_HORIZON))
        .collect::<Result<Vec<_>>>()?;

    let mut unconverged = 0usize;
    let mut reps: Vec<(SystemState, f64, usize)> = Vec::new();
    for s in &settled {
        if !s.converged {
            unconverged += 1;
            continue;
        }
        let found = reps.iter_mut().find(|(rep, _, _)| {
            let mut d2 =
                (rep.infected_fraction - s.state.infected_fraction).powi(2);
            for (a, b) in rep.behavior_shares.iter().zip(&s.state.behavior_shares) {
                d2 += (a - b).powi(2);
            }
            d2.sqrt() < CLUSTER_RADIUS
        });
        match found {
            Some((_, _, count)) => *count += 1,
            None => reps.push((s.state.clone(), s.residual, 1)),
        }
    }

    let mut candidates = Vec::with_capacity(reps.len());
    for (state, residual, basin_count) in reps {
        let jac = fd_reduced_jacobian(&state, params, mode)?;
        let eig = jac.clone().complex_eigenvalues();
        let eigen_re: Vec<f64> = eig.iter().map(|c| c.re).collect();
        let eigen_im: Vec<f64> = eig.iter().map(|c| c.im).collect();
        let stable = eigen_re.iter().all(|&r| r < 0.0);
        let certificate = if m == 2 {
            let trace_p = jac[(0, 0)] + jac[(1, 1)];
            let det_q = jac[(0, 0)] * jac[(1, 1)] - jac[(0, 1)] * jac[(1, 0)];
            Some(Stability {
                trace_p,
                det_q,
                eigen_re: [eigen_re[0], eigen_re[1]],
                eigen_im: [eigen_im[0], eigen_im[1]],
                stable: trace_p < 0.0 && det_q > 0.0,
            })
        } else {
            None
        };
        candidates.push(NumericCandidate {
            state,
            residual,
            basin_count,
            eigen_re,
            eigen_im,
            stable,
            certificate,
        });
    }
    Ok(NumericSearch { candidates, unconverged })
}

/// Which parameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SweepAxis {
    /// The risky behavior's infection rate (beta1).
    RiskyInfectionRate,
    /// The rationality coefficient (alpha).
    Rationality,
}

/// One grid point of a sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub param_value: f64,
    pub steady: SteadyState,
}

/// Classifies the system at every grid value of the chosen axis. Grid points
/// are independent and evaluated in parallel, merged back in grid order.
pub fn sweep(
    params: &ModelParams,
    axis: SweepAxis,
    grid: &[f64],
    mode: Mode,
) -> Result<Vec<SweepRow>> {
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Precondition("sweep grid must be strictly increasing".to_string()));
    }
    grid.par_iter()
        .map(|&v| {
            let mut p = params.clone();
            match axis {
                SweepAxis::RiskyInfectionRate => {
                    p.epidemic.behaviors[0].infection_rate = v;
                }
                SweepAxis::Rationality => p.decision.rationality = v,
            }
            let steady = match mode {
                Mode::Eut => classify_eut(&p)?,
                Mode::Pt => classify_pt(&p)?,
            };
            Ok(SweepRow { param_value: v, steady })
        })
        .collect()
}

/// Writes a sweep as `param_value,case,i_star,x1_star,phi,P,Q`; absent
/// quantities are NaN.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut w: W) -> Result<()> {
    writeln!(w, "param_value,case,i_star,x1_star,phi,P,Q")?;
    for row in rows {
        let (p, q) = row
            .steady
            .stability
            .map_or((f64::NAN, f64::NAN), |s| (s.trace_p, s.det_q));
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            row.param_value,
            row.steady.case_label,
            row.steady.i_star,
            row.steady.x1_star,
            row.steady.discriminant,
            p,
            q
        )?;
    }
    Ok(())
}
