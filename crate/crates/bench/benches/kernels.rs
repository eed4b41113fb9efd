//! Microbenchmarks for the hot kernels: the decision functions, the
//! two-behavior vector field, the closed-form steady-state classifier, and
//! one synchronous round of the stochastic simulation.

use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use epigame::agent_sim::{build_regular, initialize, step};
use epigame::decision::{value, weight};
use epigame::mean_field::rhs_2;
use epigame::params::default_payoff_scale;
use epigame::steady_state::classify_pt;
use epigame::{BehaviorSpec, DecisionParams, EpidemicParams, Mode, ModelParams};

fn two_behavior_params(beta1: f64, alpha: f64) -> ModelParams {
    let behaviors = vec![
        BehaviorSpec { infection_rate: beta1, intrinsic_payoff: 0.0 },
        BehaviorSpec { infection_rate: 0.0, intrinsic_payoff: -1.0 },
    ];
    let payoff_scale = default_payoff_scale(&behaviors, -20.0, 0.65, 1.0).unwrap();
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
            payoff_scale,
        },
    }
}

fn decision_kernels(c: &mut Criterion) {
    c.bench_function("weight_distorted", |b| {
        b.iter(|| weight(black_box(0.13), black_box(0.6)).unwrap())
    });
    c.bench_function("value_loss_branch", |b| {
        b.iter(|| value(black_box(-7.3), black_box(0.65), black_box(1.0)).unwrap())
    });
}

fn vector_field(c: &mut Criterion) {
    let params = two_behavior_params(0.02, 0.6);
    c.bench_function("rhs_two_behavior", |b| {
        b.iter(|| rhs_2(black_box(0.2), black_box(0.4), &params, Mode::Pt).unwrap())
    });
}

fn classifier(c: &mut Criterion) {
    // An interior steady state, so the timing includes the bisection solve.
    let params = two_behavior_params(0.02, 0.6);
    c.bench_function("classify_interior", |b| {
        b.iter(|| classify_pt(black_box(&params)).unwrap())
    });
}

fn agent_round(c: &mut Criterion) {
    let params = two_behavior_params(0.02, 0.6);
    let n = 1000;
    let contact = build_regular(n, 10).unwrap();
    let info = build_regular(n, 20).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(1);
    let pop = initialize(n, &params, 0.05, &[0.5, 0.5], &mut rng).unwrap();
    c.bench_function("agent_round_n1000", |b| {
        b.iter_batched(
            || (pop.clone(), ChaCha12Rng::seed_from_u64(2)),
            |(mut p, mut r)| step(&mut p, &contact, &info, &params, Mode::Pt, &mut r).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, decision_kernels, vector_field, classifier, agent_round);
criterion_main!(benches);
