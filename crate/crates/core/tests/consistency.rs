//! Cross-module agreement checks: the closed-form classifier, the ODE
//! integrator, the numeric multi-start search, and the agent simulation must
//! describe the same system.

use epigame::agent_sim::run_ensemble;
use epigame::mean_field::{integrate_to_steady, rhs_2};
use epigame::params::{default_payoff_scale, BehaviorSpec, DecisionParams, EpidemicParams};
use epigame::steady_state::{classify_pt, numeric_steady_state};
use epigame::{CaseLabel, Mode, ModelParams, SystemState};

fn endemic_params(beta1: f64, alpha: f64) -> ModelParams {
    let behaviors = vec![
        BehaviorSpec { infection_rate: beta1, intrinsic_payoff: 0.0 },
        BehaviorSpec { infection_rate: 0.0, intrinsic_payoff: -1.0 },
    ];
    let scale = default_payoff_scale(&behaviors, -20.0, 0.65, 1.0).unwrap();
    ModelParams {
        epidemic: EpidemicParams {
            recovery_rate: 0.03,
            contact_degree: 10.0,
            info_degree: 20.0,
            behaviors,
        },
        decision: DecisionParams {
            infection_loss: -20.0,
            rationality: alpha,
            value_curvature: 0.65,
            loss_sensitivity: 1.0,
            focal_fraction: 1.0,
            selection_strength: 1.0,
            payoff_scale: scale,
        },
    }
}

#[test]
fn classified_interior_states_are_flow_fixed_points() {
    for beta1 in [0.012, 0.016, 0.02] {
        for alpha in [0.6, 1.0] {
            let params = endemic_params(beta1, alpha);
            let ss = classify_pt(&params).unwrap();
            assert_eq!(ss.case_label, CaseLabel::Case3);
            let (di, dx1) = rhs_2(ss.i_star, ss.x1_star, &params, Mode::Pt).unwrap();
            assert!(di.abs() < 1e-12, "flow residual {di} in i at beta1={beta1}");
            assert!(dx1.abs() < 1e-12, "flow residual {dx1} in x1 at beta1={beta1}");

            let s0 = SystemState::new(ss.i_star, vec![ss.x1_star, 1.0 - ss.x1_star]).unwrap();
            let settled = integrate_to_steady(&s0, &params, Mode::Pt, 0.05, 5_000.0).unwrap();
            assert!(settled.converged);
            assert!(
                (settled.state.infected_fraction - ss.i_star).abs() < 1e-8,
                "integration drifted from the classified state at beta1={beta1}"
            );
            assert!((settled.state.behavior_shares[0] - ss.x1_star).abs() < 1e-8);
        }
    }
}

#[test]
fn numeric_search_recovers_the_closed_form() {
    let params = endemic_params(0.02, 0.6);
    let ss = classify_pt(&params).unwrap();
    let search = numeric_steady_state(&params, Mode::Pt, 16).unwrap();
    let best = search
        .candidates
        .iter()
        .min_by(|a, b| {
            let da = (a.state.infected_fraction - ss.i_star).abs();
            let db = (b.state.infected_fraction - ss.i_star).abs();
            da.total_cmp(&db)
        })
        .unwrap();
    assert!((best.state.infected_fraction - ss.i_star).abs() < 1e-7);
    assert!((best.state.behavior_shares[0] - ss.x1_star).abs() < 1e-7);
    assert!(best.stable);
}

#[test]
fn ensembles_are_reproducible_from_the_seed() {
    let params = endemic_params(0.02, 1.0);
    let run = |seed| {
        run_ensemble(&params, Mode::Pt, 200, 10, 20, 50, 5, 0.05, &[0.5, 0.5], seed).unwrap()
    };
    let a = run(42);
    let b = run(42);
    assert_eq!(a.i_mean, b.i_mean);
    assert_eq!(a.share_means, b.share_means);
    let c = run(43);
    assert_ne!(a.i_mean, c.i_mean, "different seeds should not coincide");
}
