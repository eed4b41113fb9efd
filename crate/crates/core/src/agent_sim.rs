//! Stochastic individual-level simulation on a pair of ring lattices: one
//! network carries infection, the other carries imitation. Serves as a
//! cross-check on the population-level integrator.
//!
//! One synchronous time unit runs three phases: infection (per-contact
//! exposure to neighbors infected at the start of the step), recovery (with
//! re-entry behavior drawn from the start-of-step susceptible shares), and
//! imitation (a focal fraction of the post-transition susceptibles each
//! compares payoffs with one random susceptible information-neighbor).
//! Infected individuals keep their behavior until they recover.

use std::io::Write;

use rand::{Rng, SeedableRng};
use serde::Serialize;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::decision::{imitation_prob, utility};
use crate::error::{Error, Result};
use crate::params::{Mode, ModelParams};

/// Circulant ring lattice: node v is adjacent to v±1..v±degree/2 modulo the
/// node count. Undirected, no self-loops, every node has the same degree.
#[derive(Debug, Clone)]
pub struct RegularNetwork {
    node_count: usize,
    degree: usize,
    /// Flat neighbor table, `degree` entries per node.
    neighbors: Vec<u32>,
}

impl RegularNetwork {
    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn neighbors(&self, v: usize) -> &[u32] {
        &self.neighbors[v * self.degree..(v + 1) * self.degree]
    }

    /// Writes each undirected edge once as two whitespace-separated node ids.
    pub fn write_edge_list<W: Write>(&self, mut w: W) -> Result<()> {
        for v in 0..self.node_count {
            for &u in self.neighbors(v) {
                if u as usize > v {
                    writeln!(w, "{} {}", v, u)?;
                }
            }
        }
        Ok(())
    }
}

/// Builds the ring lattice. The degree must be even (offsets come in ± pairs)
/// and smaller than the node count.
pub fn build_regular(n: usize, degree: usize) -> Result<RegularNetwork> {
    if degree % 2 != 0 || degree < 2 || degree >= n {
        return Err(Error::Precondition(format!(
            "regular lattice needs an even degree with 2 <= degree < n, got n = {n}, degree = {degree}"
        )));
    }
    if n > u32::MAX as usize {
        return Err(Error::Precondition(format!("node count {n} exceeds the index width")));
    }
    let mut neighbors = Vec::with_capacity(n * degree);
    for v in 0..n {
        for o in 1..=degree / 2 {
            neighbors.push(((v + o) % n) as u32);
            neighbors.push(((v + n - o) % n) as u32);
        }
    }
    Ok(RegularNetwork { node_count: n, degree, neighbors })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Health {
    Susceptible,
    Infected,
}

/// Joint health/behavior state of every individual.
#[derive(Debug, Clone)]
pub struct Population {
    pub health: Vec<Health>,
    pub behavior: Vec<usize>,
}

impl Population {
    pub fn len(&self) -> usize {
        self.health.len()
    }

    pub fn is_empty(&self) -> bool {
        self.health.is_empty()
    }

    pub fn infected_count(&self) -> usize {
        self.health.iter().filter(|&&h| h == Health::Infected).count()
    }

    pub fn infected_fraction(&self) -> f64 {
        self.infected_count() as f64 / self.len() as f64
    }

    /// Behavior shares among the susceptible population, or None when nobody
    /// is susceptible.
    pub fn susceptible_shares(&self, behaviors: usize) -> Option<Vec<f64>> {
        let mut counts = vec![0usize; behaviors];
        let mut total = 0usize;
        for (h, &b) in self.health.iter().zip(&self.behavior) {
            if *h == Health::Susceptible {
                counts[b] += 1;
                total += 1;
            }
        }
        if total == 0 {
            return None;
        }
        Some(counts.iter().map(|&c| c as f64 / total as f64).collect())
    }
}

/// Draws an initial population: a rounded fraction of individuals infected
/// uniformly at random, behaviors sampled independently from the given
/// shares.
pub fn initialize<R: Rng>(
    n: usize,
    params: &ModelParams,
    initial_infected: f64,
    initial_shares: &[f64],
    rng: &mut R,
) -> Result<Population> {
    params.validate_frozen_dynamics()?;
    if n == 0 {
        return Err(Error::Precondition("population must be nonempty".to_string()));
    }
    if !(0.0..=1.0).contains(&initial_infected) {
        return Err(Error::Precondition(format!(
            "initial infected fraction must lie in [0,1], got {initial_infected}"
        )));
    }
    let m = params.behavior_count();
    if initial_shares.len() != m {
        return Err(Error::Precondition(format!(
            "got {} initial shares for {} behaviors",
            initial_shares.len(),
            m
        )));
    }
    let total: f64 = initial_shares.iter().sum();
    if initial_shares.iter().any(|&s| s < 0.0) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::Precondition(format!(
            "initial shares must be a probability vector, got sum {total}"
        )));
    }
    let mut behavior = Vec::with_capacity(n);
    for _ in 0..n {
        let mut r = rng.gen::<f64>() * total;
        let mut chosen = m - 1;
        for (j, &s) in initial_shares.iter().enumerate() {
            if r < s {
                chosen = j;
                break;
            }
            r -= s;
        }
        behavior.push(chosen);
    }
    let mut health = vec![Health::Susceptible; n];
    let infected = (initial_infected * n as f64).round() as usize;
    for idx in rand::seq::index::sample(rng, n, infected.min(n)) {
        health[idx] = Health::Infected;
    }
    Ok(Population { health, behavior })
}

/// Advances the population one synchronous time unit.
pub fn step<R: Rng>(
    pop: &mut Population,
    contact: &RegularNetwork,
    info: &RegularNetwork,
    params: &ModelParams,
    mode: Mode,
    rng: &mut R,
) -> Result<()> {
    params.validate_frozen_dynamics()?;
    let n = pop.health.len();
    if pop.behavior.len() != n || contact.node_count() != n || info.node_count() != n {
        return Err(Error::Precondition(format!(
            "size mismatch: population {}/{}, contact {}, information {}",
            pop.health.len(),
            pop.behavior.len(),
            contact.node_count(),
            info.node_count()
        )));
    }
    let behaviors = params.behavior_count();
    if pop.behavior.iter().any(|&b| b >= behaviors) {
        return Err(Error::Precondition(format!(
            "behavior index out of range for {behaviors} behaviors"
        )));
    }

    let health0 = pop.health.clone();
    let mut counts0 = vec![0usize; behaviors];
    for v in 0..n {
        if health0[v] == Health::Susceptible {
            counts0[pop.behavior[v]] += 1;
        }
    }
    let susceptible0: usize = counts0.iter().sum();

    // Phase 1: infection from the start-of-step state. A susceptible with
    // n_inf infected contacts escapes each exposure independently, so it
    // becomes infected with probability 1 - (1-beta)^n_inf.
    for v in 0..n {
        if health0[v] != Health::Susceptible {
            continue;
        }
        let beta = params.epidemic.behaviors[pop.behavior[v]].infection_rate;
        if beta == 0.0 {
            continue;
        }
        let n_inf = contact
            .neighbors(v)
            .iter()
            .filter(|&&u| health0[u as usize] == Health::Infected)
            .count();
        if n_inf == 0 {
            continue;
        }
        let p = 1.0 - (1.0 - beta).powi(n_inf as i32);
        if rng.gen::<f64>() < p {
            pop.health[v] = Health::Infected;
        }
    }

    // Phase 2: recovery of those infected at the start of the step (a fresh
    // infection cannot recover in the same unit). Re-entry behavior is drawn
    // from the start-of-step susceptible shares; with no susceptibles to
    // define shares, the recovered individual keeps its own behavior.
    let gamma = params.epidemic.recovery_rate;
    for v in 0..n {
        if health0[v] != Health::Infected {
            continue;
        }
        if rng.gen::<f64>() < gamma {
            pop.health[v] = Health::Susceptible;
            if susceptible0 > 0 {
                let mut r = rng.gen_range(0..susceptible0);
                for (j, &c) in counts0.iter().enumerate() {
                    if r < c {
                        pop.behavior[v] = j;
                        break;
                    }
                    r -= c;
                }
            }
        }
    }

    // Phase 3: imitation among the post-transition susceptibles, applied
    // simultaneously.
    let susceptible: Vec<usize> = (0..n)
        .filter(|&v| pop.health[v] == Health::Susceptible)
        .collect();
    let n0 = susceptible.len();
    let focal_count = (params.decision.focal_fraction * n0 as f64).floor() as usize;
    if focal_count == 0 {
        return Ok(());
    }
    let i_post = (n - n0) as f64 / n as f64;
    let mut utils = Vec::with_capacity(behaviors);
    for j in 0..behaviors {
        utils.push(utility(j, i_post, params, mode)?);
    }
    let behavior_mid = pop.behavior.clone();
    let mut switches: Vec<(usize, usize)> = Vec::new();
    for k in rand::seq::index::sample(rng, n0, focal_count) {
        let v = susceptible[k];
        let candidates: Vec<usize> = info
            .neighbors(v)
            .iter()
            .map(|&u| u as usize)
            .filter(|&u| pop.health[u] == Health::Susceptible)
            .collect();
        if candidates.is_empty() {
            continue;
        }
        let w = candidates[rng.gen_range(0..candidates.len())];
        let p = imitation_prob(
            utils[behavior_mid[v]],
            utils[behavior_mid[w]],
            params.decision.selection_strength,
            params.decision.payoff_scale,
        )?;
        if rng.gen::<f64>() < p {
            switches.push((v, behavior_mid[w]));
        }
    }
    for (v, b) in switches {
        pop.behavior[v] = b;
    }
    Ok(())
}

/// Recorded series of one stochastic run, sampled once per time unit.
/// When nobody is susceptible the shares carry the last defined value.
#[derive(Debug, Clone)]
pub struct AgentSeries {
    pub times: Vec<f64>,
    pub infected: Vec<f64>,
    pub shares: Vec<Vec<f64>>,
}

impl AgentSeries {
    pub fn terminal(&self) -> (f64, &[f64]) {
        (
            *self.infected.last().expect("series is never empty"),
            self.shares.last().expect("series is never empty"),
        )
    }

    /// Writes `t,i,x1,...,xM`, keeping every `stride`-th row plus the final
    /// row.
    pub fn write_csv<W: Write>(&self, mut w: W, stride: usize) -> Result<()> {
        if stride == 0 {
            return Err(Error::Precondition("stride must be positive".to_string()));
        }
        let m = self.shares[0].len();
        write!(w, "t,i")?;
        for j in 1..=m {
            write!(w, ",x{j}")?;
        }
        writeln!(w)?;
        let last = self.times.len() - 1;
        for k in 0..self.times.len() {
            if k % stride != 0 && k != last {
                continue;
            }
            write!(w, "{},{}", self.times[k], self.infected[k])?;
            for x in &self.shares[k] {
                write!(w, ",{x}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Runs one seeded realization for `horizon` time units.
pub fn run(
    contact: &RegularNetwork,
    info: &RegularNetwork,
    params: &ModelParams,
    mode: Mode,
    horizon: usize,
    initial_infected: f64,
    initial_shares: &[f64],
    seed: u64,
) -> Result<AgentSeries> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut pop = initialize(contact.node_count(), params, initial_infected, initial_shares, &mut rng)?;
    let m = params.behavior_count();
    let mut times = Vec::with_capacity(horizon + 1);
    let mut infected = Vec::with_capacity(horizon + 1);
    let mut shares = Vec::with_capacity(horizon + 1);
    times.push(0.0);
    infected.push(pop.infected_fraction());
    shares.push(
        pop.susceptible_shares(m)
            .unwrap_or_else(|| initial_shares.to_vec()),
    );
    for t in 1..=horizon {
        step(&mut pop, contact, info, params, mode, &mut rng)?;
        times.push(t as f64);
        infected.push(pop.infected_fraction());
        let prev = shares.last().expect("at least one sample").clone();
        shares.push(pop.susceptible_shares(m).unwrap_or(prev));
    }
    Ok(AgentSeries { times, infected, shares })
}

/// Derives an independent stream seed from a base seed; the splitting is the
/// SplitMix64 output function over base + (stream+1)·golden-ratio increment.
pub fn split_seed(base: u64, stream: u64) -> u64 {
    let mut z = base.wrapping_add(
        stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15),
    );
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Pointwise ensemble statistics over independent seeded runs, plus each
/// run's terminal state.
#[derive(Debug, Clone, Serialize)]
pub struct EnsembleSeries {
    pub times: Vec<f64>,
    pub i_mean: Vec<f64>,
    /// Sample standard deviation over runs (zero for a single run).
    pub i_std: Vec<f64>,
    pub share_means: Vec<Vec<f64>>,
    pub terminals: Vec<(f64, Vec<f64>)>,
}

impl EnsembleSeries {
    pub fn terminal_mean(&self) -> (f64, &[f64]) {
        (
            *self.i_mean.last().expect("series is never empty"),
            self.share_means.last().expect("series is never empty"),
        )
    }

    /// Writes `t,i_mean,i_std,x1_mean,...,xM_mean`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let m = self.share_means[0].len();
        write!(w, "t,i_mean,i_std")?;
        for j in 1..=m {
            write!(w, ",x{j}_mean")?;
        }
        writeln!(w)?;
        for k in 0..self.times.len() {
            write!(w, "{},{},{}", self.times[k], self.i_mean[k], self.i_std[k])?;
            for x in &self.share_means[k] {
                write!(w, ",{x}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Builds both lattices and averages `runs` independent realizations, each
/// seeded deterministically from the base seed. Runs execute in parallel;
/// the merge is by run index, so the output is reproducible.
#[allow(clippy::too_many_arguments)]
pub fn run_ensemble(
    params: &ModelParams,
    mode: Mode,
    n: usize,
    contact_degree: usize,
    info_degree: usize,
    horizon: usize,
    runs: usize,
    initial_infected: f64,
    initial_shares: &[f64],
    base_seed: u64,
) -> Result<EnsembleSeries> {
    if runs == 0 {
        return Err(Error::Precondition("need at least one run".to_string()));
    }
    let contact = build_regular(n, contact_degree)?;
    let info = build_regular(n, info_degree)?;
    let series: Vec<AgentSeries> = (0..runs)
        .into_par_iter()
        .map(|r| {
            run(
                &contact,
                &info,
                params,
                mode,
                horizon,
                initial_infected,
                initial_shares,
                split_seed(base_seed, r as u64),
            )
        })
        .collect::<Result<_>>()?;
    Ok(merge_runs(&series, params.behavior_count()))
}

fn merge_runs(series: &[AgentSeries], behaviors: usize) -> EnsembleSeries {
    let runs = series.len();
    let len = series[0].times.len();
    let mut i_mean = vec![0.0; len];
    let mut i_std = vec![0.0; len];
    let mut share_means = vec![vec![0.0; behaviors]; len];
    for s in series {
        for k in 0..len {
            i_mean[k] += s.infected[k];
            for j in 0..behaviors {
                share_means[k][j] += s.shares[k][j];
            }
        }
    }
    for k in 0..len {
        i_mean[k] /= runs as f64;
        for j in 0..behaviors {
            share_means[k][j] /= runs as f64;
        }
    }
    if runs > 1 {
        for s in series {
            for k in 0..len {
                i_std[k] += (s.infected[k] - i_mean[k]).powi(2);
            }
        }
        for v in i_std.iter_mut() {
            *v = (*v / (runs - 1) as f64).sqrt();
        }
    }
    let terminals = series
        .iter()
        .map(|s| {
            let (i, x) = s.terminal();
            (i, x.to_vec())
        })
        .collect();
    EnsembleSeries {
        times: series[0].times.clone(),
        i_mean,
        i_std,
        share_means,
        terminals,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{test_params, BehaviorSpec};

    #[test]
    fn cycle_graph_neighbors() {
        let net = build_regular(6, 2).unwrap();
        assert_eq!(net.neighbors(0), &[1, 5]);
        assert_eq!(net.neighbors(3), &[4, 2]);
        assert_eq!(net.neighbors(5), &[0, 4]);
    }

    #[test]
    fn lattice_is_regular_symmetric_and_loop_free() {
        let net = build_regular(500, 10).unwrap();
        for v in 0..500 {
            let nb = net.neighbors(v);
            assert_eq!(nb.len(), 10);
            let mut sorted: Vec<u32> = nb.to_vec();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), 10, "duplicate neighbor at node {v}");
            assert!(!nb.contains(&(v as u32)));
            for &u in nb {
                assert!(net.neighbors(u as usize).contains(&(v as u32)));
            }
        }
    }

    #[test]
    fn degenerate_lattices_are_rejected() {
        assert!(matches!(build_regular(4, 4).unwrap_err(), Error::Precondition(_)));
        assert!(matches!(build_regular(10, 5).unwrap_err(), Error::Precondition(_)));
        assert!(matches!(build_regular(10, 0).unwrap_err(), Error::Precondition(_)));
    }

    #[test]
    fn edge_list_has_each_edge_once() {
        let net = build_regular(12, 4).unwrap();
        let mut buf = Vec::new();
        net.write_edge_list(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 12 * 4 / 2);
        let mut seen = std::collections::HashSet::new();
        for line in lines {
            let mut it = line.split_whitespace();
            let a: usize = it.next().unwrap().parse().unwrap();
            let b: usize = it.next().unwrap().parse().unwrap();
            assert!(a < b);
            assert!(seen.insert((a, b)), "edge repeated: {a} {b}");
        }
    }

    fn sim_params(beta1: f64) -> ModelParams {
        let mut p = test_params(beta1, -20.0);
        p.epidemic.contact_degree = 10.0;
        p.epidemic.info_degree = 20.0;
        p
    }

    #[test]
    fn initialization_matches_requested_composition() {
        let params = sim_params(0.01);
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let pop = initialize(400, &params, 0.05, &[0.7, 0.3], &mut rng).unwrap();
        assert_eq!(pop.infected_count(), 20);
        let shares = pop.susceptible_shares(2).unwrap();
        assert!((shares[0] - 0.7).abs() < 0.1, "share {}", shares[0]);
        let bad = initialize(400, &params, 0.05, &[0.7, 0.2], &mut rng);
        assert!(matches!(bad.unwrap_err(), Error::Precondition(_)));
    }

    #[test]
    fn no_spontaneous_infection_without_infected_contacts() {
        let params = sim_params(0.02);
        let contact = build_regular(60, 4).unwrap();
        let info = build_regular(60, 6).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let mut pop = initialize(60, &params, 0.0, &[0.5, 0.5], &mut rng).unwrap();
        let x1_start = pop.susceptible_shares(2).unwrap()[0];
        for _ in 0..200 {
            step(&mut pop, &contact, &info, &params, Mode::Pt, &mut rng).unwrap();
            assert_eq!(pop.infected_count(), 0);
        }
        // With zero infection risk the higher intrinsic payoff should win
        // ground through imitation alone.
        let x1_end = pop.susceptible_shares(2).unwrap()[0];
        assert!(
            x1_end > x1_start + 0.2,
            "imitation did not favor the better payoff: {x1_start} -> {x1_end}"
        );
    }

    #[test]
    fn zero_infection_rates_make_infections_nonincreasing() {
        let mut params = sim_params(0.0);
        params.epidemic.behaviors[0].infection_rate = 0.0;
        let contact = build_regular(80, 4).unwrap();
        let info = build_regular(80, 4).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let mut pop = initialize(80, &params, 0.5, &[0.5, 0.5], &mut rng).unwrap();
        let mut prev = pop.infected_count();
        for _ in 0..150 {
            step(&mut pop, &contact, &info, &params, Mode::Pt, &mut rng).unwrap();
            let now = pop.infected_count();
            assert!(now <= prev, "infections rose {prev} -> {now} with zero rates");
            prev = now;
        }
        assert_eq!(prev, 0);
    }

    #[test]
    fn infected_individuals_never_switch_behavior() {
        // Zero recovery freezes the infected set, so their behaviors must
        // stay fixed through any number of steps.
        let mut params = sim_params(0.02);
        params.epidemic.recovery_rate = 0.0;
        let contact = build_regular(50, 4).unwrap();
        let info = build_regular(50, 6).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let mut pop = initialize(50, &params, 0.4, &[0.5, 0.5], &mut rng).unwrap();
        let infected_at_start: Vec<usize> = (0..50)
            .filter(|&v| pop.health[v] == Health::Infected)
            .collect();
        let behaviors_at_start: Vec<usize> =
            infected_at_start.iter().map(|&v| pop.behavior[v]).collect();
        for _ in 0..60 {
            step(&mut pop, &contact, &info, &params, Mode::Pt, &mut rng).unwrap();
        }
        for (&v, &b) in infected_at_start.iter().zip(&behaviors_at_start) {
            assert_eq!(pop.health[v], Health::Infected);
            assert_eq!(pop.behavior[v], b, "infected node {v} changed behavior");
        }
    }

    /// Exact one-step expectation of the risky share among susceptibles when
    /// only infection acts (no recovery, no imitation), by enumerating all
    /// infection outcomes.
    fn exact_share_after_infection(
        pop: &Population,
        contact: &RegularNetwork,
        params: &ModelParams,
    ) -> f64 {
        let n = pop.len();
        let susceptibles: Vec<usize> = (0..n)
            .filter(|&v| pop.health[v] == Health::Susceptible)
            .collect();
        let probs: Vec<f64> = susceptibles
            .iter()
            .map(|&v| {
                let beta = params.epidemic.behaviors[pop.behavior[v]].infection_rate;
                let n_inf = contact
                    .neighbors(v)
                    .iter()
                    .filter(|&&u| pop.health[u as usize] == Health::Infected)
                    .count();
                1.0 - (1.0 - beta).powi(n_inf as i32)
            })
            .collect();
        let x1_before = pop.susceptible_shares(params.behavior_count()).unwrap()[0];
        let mut expectation = 0.0;
        for mask in 0..(1usize << susceptibles.len()) {
            let mut prob = 1.0;
            let mut survivors = 0usize;
            let mut risky = 0usize;
            for (bit, (&v, &q)) in susceptibles.iter().zip(&probs).enumerate() {
                if mask & (1 << bit) != 0 {
                    prob *= q;
                } else {
                    prob *= 1.0 - q;
                    survivors += 1;
                    if pop.behavior[v] == 0 {
                        risky += 1;
                    }
                }
            }
            let share = if survivors == 0 {
                x1_before
            } else {
                risky as f64 / survivors as f64
            };
            expectation += prob * share;
        }
        expectation
    }

    #[test]
    fn infection_step_matches_exhaustive_expectation() {
        // Freeze recovery and imitation so the only share movement comes
        // from the risky behavior's extra infections.
        let mut params = sim_params(0.08);
        params.epidemic.recovery_rate = 0.0;
        params.decision.focal_fraction = 0.0;
        params.epidemic.contact_degree = 2.0;
        params.epidemic.info_degree = 2.0;
        let contact = build_regular(8, 2).unwrap();
        let info = build_regular(8, 2).unwrap();
        let template = Population {
            health: vec![
                Health::Infected,
                Health::Susceptible,
                Health::Susceptible,
                Health::Infected,
                Health::Susceptible,
                Health::Susceptible,
                Health::Susceptible,
                Health::Susceptible,
            ],
            behavior: vec![0, 0, 0, 1, 1, 0, 1, 0],
        };
        let exact = exact_share_after_infection(&template, &contact, &params);
        let x1_before = template.susceptible_shares(2).unwrap()[0];
        assert!(
            exact < x1_before,
            "risky share should fall in expectation: {exact} vs {x1_before}"
        );
        let trials = 40_000;
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        let mut total = 0.0;
        for _ in 0..trials {
            let mut pop = template.clone();
            step(&mut pop, &contact, &info, &params, Mode::Pt, &mut rng).unwrap();
            total += pop
                .susceptible_shares(2)
                .map_or(x1_before, |s| s[0]);
        }
        let empirical = total / trials as f64;
        // Share values live in [0,1]; 0.012 is about five standard errors.
        assert!(
            (empirical - exact).abs() < 0.012,
            "empirical {empirical} vs exact {exact}"
        );
    }

    #[test]
    fn ensembles_are_deterministic_in_the_seed() {
        let params = sim_params(0.015);
        let a = run_ensemble(&params, Mode::Pt, 60, 4, 6, 40, 3, 0.05, &[0.5, 0.5], 99).unwrap();
        let b = run_ensemble(&params, Mode::Pt, 60, 4, 6, 40, 3, 0.05, &[0.5, 0.5], 99).unwrap();
        assert_eq!(a.i_mean, b.i_mean);
        assert_eq!(a.share_means, b.share_means);
        assert_eq!(a.terminals, b.terminals);
        let c = run_ensemble(&params, Mode::Pt, 60, 4, 6, 40, 3, 0.05, &[0.5, 0.5], 100).unwrap();
        assert_ne!(a.i_mean, c.i_mean);
    }

    #[test]
    fn single_run_ensemble_is_the_run_itself() {
        let params = sim_params(0.015);
        let ens = run_ensemble(&params, Mode::Pt, 60, 4, 6, 30, 1, 0.05, &[0.5, 0.5], 7).unwrap();
        let contact = build_regular(60, 4).unwrap();
        let info = build_regular(60, 6).unwrap();
        let single = run(
            &contact,
            &info,
            &params,
            Mode::Pt,
            30,
            0.05,
            &[0.5, 0.5],
            split_seed(7, 0),
        )
        .unwrap();
        assert_eq!(ens.i_mean, single.infected);
        assert!(ens.i_std.iter().all(|&s| s == 0.0));
        assert_eq!(ens.share_means, single.shares);
    }

    #[test]
    fn subcritical_contact_rate_extinguishes_the_infection() {
        // k_bar*beta1 = 0.02 < gamma = 0.03 puts the system in the
        // extinction regime.
        let params = sim_params(0.002);
        let ens =
            run_ensemble(&params, Mode::Pt, 300, 10, 20, 1200, 4, 0.05, &[0.5, 0.5], 42).unwrap();
        let (i_terminal, _) = ens.terminal_mean();
        assert!(i_terminal < 0.01, "terminal infection {i_terminal}");
    }

    #[test]
    fn three_behavior_population_steps_cleanly() {
        let mut params = sim_params(0.01);
        params.epidemic.behaviors = vec![
            BehaviorSpec { infection_rate: 0.005, intrinsic_payoff: -4.5 },
            BehaviorSpec { infection_rate: 0.015, intrinsic_payoff: -2.0 },
            BehaviorSpec { infection_rate: 0.025, intrinsic_payoff: -1.0 },
        ];
        params.decision.payoff_scale = crate::params::default_payoff_scale(
            &params.epidemic.behaviors,
            params.decision.infection_loss,
            params.decision.value_curvature,
            params.decision.loss_sensitivity,
        )
        .unwrap();
        let ens = run_ensemble(
            &params,
            Mode::Pt,
            90,
            6,
            4,
            50,
            2,
            0.05,
            &[0.3, 0.3, 0.4],
            1,
        )
        .unwrap();
        for k in 0..ens.times.len() {
            let total: f64 = ens.share_means[k].iter().sum();
            assert!((total - 1.0).abs() < 1e-9);
            assert!(ens.i_mean[k] >= 0.0 && ens.i_mean[k] <= 1.0);
        }
    }

    #[test]
    fn mismatched_structures_are_rejected() {
        let params = sim_params(0.01);
        let contact = build_regular(40, 4).unwrap();
        let info = build_regular(42, 4).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let mut pop = initialize(40, &params, 0.05, &[0.5, 0.5], &mut rng).unwrap();
        let err = step(&mut pop, &contact, &info, &params, Mode::Pt, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }

    #[test]
    fn series_csv_shape() {
        let params = sim_params(0.015);
        let contact = build_regular(60, 4).unwrap();
        let info = build_regular(60, 6).unwrap();
        let series =
            run(&contact, &info, &params, Mode::Pt, 25, 0.05, &[0.5, 0.5], 3).unwrap();
        let mut buf = Vec::new();
        series.write_csv(&mut buf, 10).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,i,x1,x2");
        // rows 0, 10, 20 plus the final row 25
        assert_eq!(lines.len(), 5);
        assert!(lines.last().unwrap().starts_with("25,"));

        let ens = run_ensemble(&params, Mode::Pt, 60, 4, 6, 25, 2, 0.05, &[0.5, 0.5], 3).unwrap();
        let mut buf = Vec::new();
        ens.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,i_mean,i_std,x1_mean,x2_mean");
        assert_eq!(lines.len(), 27);
        let cols = lines[0].split(',').count();
        assert!(lines.iter().all(|l| l.split(',').count() == cols));
    }

    #[test]
    fn split_seed_streams_differ() {
        let s: Vec<u64> = (0..50).map(|k| split_seed(12345, k)).collect();
        let mut dedup = s.clone();
        dedup.sort_unstable();
        dedup.dedup();
        assert_eq!(dedup.len(), s.len());
        assert_eq!(split_seed(12345, 7), split_seed(12345, 7));
        assert_ne!(split_seed(12345, 7), split_seed(12346, 7));
    }
}
