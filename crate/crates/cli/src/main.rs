//! Command-line front end. Every subcommand reads one flat TOML experiment
//! config, runs the matching library routine, and writes its outputs into
//! the `--out` directory. Command-line flags override config keys; log
//! verbosity comes from the `EPIGAME_LOG` environment variable (tracing
//! filter syntax, e.g. `info` or `epigame=debug`).
//!
//! Exit codes: 0 on success, 2 for configuration problems (bad flags,
//! unreadable or invalid config, malformed input tables), 1 for runtime
//! failures.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use tracing::info;

use epigame::agent_sim::run_ensemble;
use epigame::estimation::{
    correlate, estimate_subjects, group_by_appetite, read_choice_csv, read_insurance_csv,
    read_subject_csv, write_subject_csv,
};
use epigame::guidance::{optimize, write_loss_csv, write_report};
use epigame::mean_field::{integrate, Trajectory};
use epigame::steady_state::{
    classify_pt, numeric_steady_state, radical_regime_test, sweep, write_sweep_csv,
    ComparisonFinding, RationalityComparison,
};
use epigame::steady_state::compare_rationality;
use epigame::{Error, ExperimentConfig, Mode, Result, SteadyState};

#[derive(Parser)]
#[command(name = "epigame", version, about = "Epidemic-behavior co-evolution toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the population-level dynamics and write the trajectory
    SimulateMeanfield(Common),
    /// Average stochastic lattice simulations over independently seeded runs
    SimulateAgents(Common),
    /// Steady state: closed form for two behaviors, multi-start numeric search otherwise
    SteadyState(Common),
    /// Steady states along a parameter grid
    Sweep(Common),
    /// Steady states at two rationality levels, with the predicted ordering checked
    CompareRationality(Common),
    /// Search for the cheapest parameter adjustment that meets a prevalence/share target
    Optimize(Common),
    /// Estimate each subject's probability-distortion exponent from choice data
    EstimateAlpha(Common),
    /// Correlate estimated exponents with revealed risk appetite
    Correlate(Common),
}

/// Flags shared by every subcommand. A flag set here wins over the matching
/// config key.
#[derive(Args)]
struct Common {
    /// Experiment configuration file (flat TOML)
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Root random seed; overrides the config's `seed`
    #[arg(long)]
    seed: Option<u64>,
    /// Directory the output files are written into
    #[arg(long, value_name = "DIR", default_value = ".")]
    out: PathBuf,
    /// Output format
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

fn main() -> ExitCode {
    init_logging();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_env("EPIGAME_LOG")
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn"));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SimulateMeanfield(c) => simulate_meanfield(&c),
        Command::SimulateAgents(c) => simulate_agents(&c),
        Command::SteadyState(c) => steady_state(&c),
        Command::Sweep(c) => run_sweep(&c),
        Command::CompareRationality(c) => compare(&c),
        Command::Optimize(c) => run_optimize(&c),
        Command::EstimateAlpha(c) => estimate_alpha(&c),
        Command::Correlate(c) => run_correlate(&c),
    }
}

/// Loads the config, applies flag overrides, and makes the output directory.
fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = Some(seed);
    }
    std::fs::create_dir_all(&common.out)?;
    Ok(cfg)
}

fn create(out: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(out.join(name))?))
}

fn write_json<T: serde::Serialize>(out: &Path, name: &str, value: &T) -> Result<()> {
    let mut w = create(out, name)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(std::io::Error::from)?;
    writeln!(w)?;
    w.flush()?;
    info!(file = name, "wrote");
    Ok(())
}

/// Opens a data file named by the config; failures are config problems.
fn open_input(path: &str) -> Result<File> {
    File::open(path).map_err(|e| Error::Config(format!("cannot read {path}: {e}")))
}

fn simulate_meanfield(common: &Common) -> Result<()> {
    let cfg = load(common)?;
    let params = cfg.model_params()?;
    let state0 = cfg.initial_state(params.behavior_count())?;
    let traj = integrate(&state0, &params, Mode::Pt, cfg.dt(), cfg.t_max())?;
    info!(samples = traj.times.len(), drift = traj.max_step_drift, "integrated");
    match common.format {
        Format::Csv => {
            let mut w = create(&common.out, "meanfield.csv")?;
            traj.write_csv(&mut w, cfg.stride())?;
            w.flush()?;
            info!(file = "meanfield.csv", "wrote");
        }
        Format::Json => write_json(&common.out, "meanfield.json", &thin(&traj, cfg.stride()))?,
    }
    Ok(())
}

/// Keeps every stride-th sample plus the final one, like the CSV writer.
fn thin(traj: &Trajectory, stride: usize) -> Trajectory {
    let stride = stride.max(1);
    let last = traj.times.len() - 1;
    let keep: Vec<usize> =
        (0..traj.times.len()).filter(|&k| k % stride == 0 || k == last).collect();
    Trajectory {
        times: keep.iter().map(|&k| traj.times[k]).collect(),
        states: keep.iter().map(|&k| traj.states[k].clone()).collect(),
        max_step_drift: traj.max_step_drift,
    }
}

fn simulate_agents(common: &Common) -> Result<()> {
    let cfg = load(common)?;
    let params = cfg.model_params()?;
    let state0 = cfg.initial_state(params.behavior_count())?;
    let (contact, info_degree) = cfg.lattice_degrees()?;
    let series = run_ensemble(
        &params,
        Mode::Pt,
        cfg.population()?,
        contact,
        info_degree,
        cfg.horizon()?,
        cfg.runs(),
        state0.infected_fraction,
        &state0.behavior_shares,
        cfg.seed(),
    )?;
    let (i_term, _) = series.terminal_mean();
    info!(runs = cfg.runs(), terminal_i = i_term, "ensemble finished");
    match common.format {
        Format::Csv => {
            let mut w = create(&common.out, "agents.csv")?;
            series.write_csv(&mut w)?;
            w.flush()?;
            info!(file = "agents.csv", "wrote");
        }
        Format::Json => write_json(&common.out, "agents.json", &series)?,
    }
    Ok(())
}

fn steady_state(common: &Common) -> Result<()> {
    let cfg = load(common)?;
    let params = cfg.model_params()?;
    let closed_form = params.behavior_count() == 2 && params.require_two_behavior().is_ok();
    if closed_form {
        let steady = classify_pt(&params)?;
        let radical = radical_regime_test(&params)?;
        info!(case = %steady.case_label, i_star = steady.i_star, "classified");
        match common.format {
            Format::Csv => {
                let mut w = create(&common.out, "steady.csv")?;
                write_steady_csv(&steady, &mut w)?;
                w.flush()?;
                info!(file = "steady.csv", "wrote");
            }
            Format::Json => write_json(
                &common.out,
                "steady.json",
                &json!({ "steady": steady, "radical_regime": radical }),
            )?,
        }
    } else {
        let search = numeric_steady_state(&params, Mode::Pt, cfg.starts())?;
        info!(
            candidates = search.candidates.len(),
            unconverged = search.unconverged,
            "numeric search finished"
        );
        match common.format {
            Format::Csv => {
                let mut w = create(&common.out, "steady.csv")?;
                write!(w, "i_star")?;
                for j in 1..=params.behavior_count() {
                    write!(w, ",x{j}")?;
                }
                writeln!(w, ",residual,basin_count,stable")?;
                for c in &search.candidates {
                    write!(w, "{}", c.state.infected_fraction)?;
                    for x in &c.state.behavior_shares {
                        write!(w, ",{x}")?;
                    }
                    writeln!(w, ",{},{},{}", c.residual, c.basin_count, c.stable)?;
                }
                w.flush()?;
                info!(file = "steady.csv", "wrote");
            }
            Format::Json => write_json(&common.out, "steady.json", &search)?,
        }
    }
    Ok(())
}

fn write_steady_csv<W: Write>(s: &SteadyState, mut w: W) -> Result<()> {
    writeln!(w, "case,i_star,x1_star,phi,P,Q")?;
    let (p, q) = s.stability.map_or((f64::NAN, f64::NAN), |st| (st.trace_p, st.det_q));
    writeln!(
        w,
        "{},{},{},{},{},{}",
        s.case_label, s.i_star, s.x1_star, s.discriminant, p, q
    )?;
    Ok(())
}

fn run_sweep(common: &Common) -> Result<()> {
    let cfg = load(common)?;
    let params = cfg.model_params()?;
    let (axis, grid) = cfg.sweep()?;
    let rows = sweep(&params, axis, &grid, Mode::Pt)?;
    info!(points = rows.len(), "sweep finished");
    match common.format {
        Format::Csv => {
            let mut w = create(&common.out, "sweep.csv")?;
            write_sweep_csv(&rows, &mut w)?;
            w.flush()?;
            info!(file = "sweep.csv", "wrote");
        }
        Format::Json => write_json(&common.out, "sweep.json", &rows)?,
    }
    Ok(())
}

fn compare(common: &Common) -> Result<()> {
    let cfg = load(common)?;
    let params = cfg.model_params()?;
    let (alpha_low, alpha_high) = cfg.rationality_pair()?;
    let cmp = compare_rationality(&params, alpha_low, alpha_high)?;
    match common.format {
        Format::Csv => {
            let mut w = create(&common.out, "compare.csv")?;
            write_compare_csv(&cmp, &mut w)?;
            w.flush()?;
            info!(file = "compare.csv", "wrote");
        }
        Format::Json => write_json(&common.out, "compare.json", &cmp)?,
    }
    Ok(())
}

/// One row per rationality level; the pair-level finding repeats on both
/// rows so each row stands alone.
fn write_compare_csv<W: Write>(cmp: &RationalityComparison, mut w: W) -> Result<()> {
    let finding = match &cmp.finding {
        ComparisonFinding::InteriorPair { regime, i_ordering_holds, x1_ordering_holds } => {
            format!(
                "interior {regime:?} i_ordered={i_ordering_holds} x1_ordered={x1_ordering_holds}"
            )
        }
        ComparisonFinding::MixedPair { expected_low, expected_high, matches } => {
            format!("mixed expected={expected_low}/{expected_high} matches={matches}")
        }
        ComparisonFinding::Degenerate { identical } => format!("degenerate identical={identical}"),
    };
    writeln!(w, "alpha,case,i_star,x1_star,phi,crossover_i,finding")?;
    for (alpha, s) in [(cmp.alpha_low, &cmp.low), (cmp.alpha_high, &cmp.high)] {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            alpha, s.case_label, s.i_star, s.x1_star, s.discriminant, cmp.crossover_infection,
            finding
        )?;
    }
    Ok(())
}

fn run_optimize(common: &Common) -> Result<()> {
    let cfg = load(common)?;
    let params = cfg.model_params()?;
    let target = cfg.target()?;
    let cost = cfg.guidance_cost()?;
    let guidance = optimize(&target, &params, &cost, &cfg.optimizer_config())?;
    info!(
        feasible = guidance.feasible,
        objective = guidance.objective_value,
        "optimization finished"
    );
    match common.format {
        Format::Csv => {
            let mut w = create(&common.out, "guidance.txt")?;
            write_report(&guidance, &target, &mut w)?;
            w.flush()?;
            let mut w = create(&common.out, "loss.csv")?;
            write_loss_csv(&guidance.loss_trace, &mut w)?;
            w.flush()?;
            info!(file = "guidance.txt", "wrote");
        }
        Format::Json => write_json(
            &common.out,
            "guidance.json",
            &json!({ "target": target, "result": guidance }),
        )?,
    }
    Ok(())
}

fn estimate_alpha(common: &Common) -> Result<()> {
    let cfg = load(common)?;
    let responses = read_insurance_csv(open_input(cfg.responses_file()?)?)?;
    let choices = match &cfg.choices_file {
        Some(path) => read_choice_csv(open_input(path)?)?,
        None => Vec::new(),
    };
    let subjects = estimate_subjects(&responses, &choices, cfg.estimation_sigma())?;
    info!(subjects = subjects.len(), "estimated");
    match common.format {
        Format::Csv => {
            let mut w = create(&common.out, "subjects.csv")?;
            write_subject_csv(&subjects, &mut w)?;
            w.flush()?;
            info!(file = "subjects.csv", "wrote");
        }
        Format::Json => write_json(&common.out, "subjects.json", &subjects)?,
    }
    Ok(())
}

fn run_correlate(common: &Common) -> Result<()> {
    let cfg = load(common)?;
    let rows = read_subject_csv(open_input(cfg.subjects_file()?)?)?;
    let with_appetite: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| r.appetite.map(|a| (a, r.alpha_hat)))
        .collect();
    let alphas: Vec<f64> = with_appetite.iter().map(|&(_, alpha)| alpha).collect();
    let appetites: Vec<f64> = with_appetite.iter().map(|&(a, _)| a).collect();
    let corr = correlate(&alphas, &appetites)?;
    info!(
        n = corr.n,
        pearson = corr.pearson_r,
        spearman = corr.spearman_rho,
        "correlated"
    );
    let bins = match cfg.bins {
        Some(b) => Some(group_by_appetite(&with_appetite, b)?),
        None => None,
    };
    match common.format {
        Format::Csv => {
            let mut w = create(&common.out, "correlation.csv")?;
            writeln!(w, "n,pearson_r,pearson_p,spearman_rho,spearman_p,spearman_exact")?;
            writeln!(
                w,
                "{},{},{},{},{},{}",
                corr.n,
                corr.pearson_r,
                corr.pearson_p,
                corr.spearman_rho,
                corr.spearman_p,
                corr.spearman_exact
            )?;
            w.flush()?;
            info!(file = "correlation.csv", "wrote");
            if let Some(bins) = &bins {
                let mut w = create(&common.out, "bins.csv")?;
                writeln!(w, "lower,upper,count,mean_alpha")?;
                for b in bins {
                    writeln!(w, "{},{},{},{}", b.lower, b.upper, b.count, b.mean_alpha)?;
                }
                w.flush()?;
                info!(file = "bins.csv", "wrote");
            }
        }
        Format::Json => write_json(
            &common.out,
            "correlation.json",
            &json!({ "correlation": corr, "bins": bins }),
        )?,
    }
    Ok(())
}
