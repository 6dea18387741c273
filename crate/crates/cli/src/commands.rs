//! Subcommands and their file outputs.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use esilc::direct::{minimize, DirectConfig, DEFAULT_EPSILON};
use esilc::ilc::{run_learning, run_trial, IlcError, LearningReport, Scenario, TrialFailure, TrialRecord};
use esilc::mpc::{synthesize, MpcController, MpcError, Uncertainty};
use esilc::numerics::{induced_inf_norm, Mat, Vector};
use esilc::polytope::{Polytope, Support};
use serde::Serialize;

use crate::bench::BenchFunction;
use crate::scenario::SourcedScenario;
use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "esilc", version, about = "Learning tube MPC for uncertain linear plants")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize the controller for one estimate and print its ingredients.
    Synthesize(SynthesizeArgs),
    /// Run one closed-loop trial and write its trajectory.
    Trial(TrialArgs),
    /// Learn the uncertainty with DIRECT over repeated trials.
    Learn(LearnArgs),
    /// Run DIRECT on a built-in test function.
    DirectBench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// scenario file (TOML)
    #[arg(long)]
    pub scenario: PathBuf,
    /// noise seed, overriding the scenario file
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    #[command(flatten)]
    pub common: ScenarioArgs,
    /// estimate `[vec(dA); vec(dB)]` row-major as a comma list (default: zero)
    #[arg(long, allow_hyphen_values = true)]
    pub delta_hat: Option<String>,
    /// directory for a JSON dump of the synthesized sets
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrialArgs {
    #[command(flatten)]
    pub common: ScenarioArgs,
    /// estimate `[vec(dA); vec(dB)]` row-major as a comma list (default: zero)
    #[arg(long, allow_hyphen_values = true)]
    pub delta_hat: Option<String>,
    /// initial state as a comma list, overriding the scenario file
    #[arg(long, allow_hyphen_values = true)]
    pub x0: Option<String>,
    /// output directory
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LearnArgs {
    #[command(flatten)]
    pub common: ScenarioArgs,
    /// threads for evaluating the trials of one DIRECT sweep
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// output directory
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_enum)]
    pub function: BenchFunction,
    #[arg(long, default_value_t = 150)]
    pub budget: usize,
    /// output directory
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synthesize(args) => cmd_synthesize(&args),
        Command::Trial(args) => cmd_trial(&args),
        Command::Learn(args) => cmd_learn(&args),
        Command::DirectBench(args) => cmd_direct_bench(&args),
    }
}

fn load(args: &ScenarioArgs) -> Result<Scenario, CliError> {
    let mut scenario = SourcedScenario::load(&args.scenario)?.to_scenario()?;
    if let Some(seed) = args.seed {
        scenario.learning.seed = seed;
    }
    Ok(scenario)
}

fn parse_list(text: &str, what: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| CliError::Parse(format!("{what}: '{}' is not a finite number", t.trim())))
        })
        .collect()
}

fn estimate_from(scenario: &Scenario, text: Option<&str>) -> Result<Uncertainty, CliError> {
    let n = scenario.model.states();
    let m = scenario.model.inputs();
    let Some(text) = text else {
        return Ok(Uncertainty::zeros(n, m));
    };
    let values = parse_list(text, "--delta-hat")?;
    if values.len() != Uncertainty::dim(n, m) {
        return Err(CliError::Parse(format!(
            "--delta-hat has {} entries, expected {} (dA then dB, row-major)",
            values.len(),
            Uncertainty::dim(n, m)
        )));
    }
    let est = Uncertainty::unflatten(&Vector::from_vec(values), n, m).map_err(|e| CliError::Parse(e.to_string()))?;
    let tol = 1e-12;
    if induced_inf_norm(&est.da) > scenario.ell_a + tol || induced_inf_norm(&est.db) > scenario.ell_b + tol {
        return Err(CliError::Parse("--delta-hat exceeds the declared uncertainty bounds".into()));
    }
    Ok(est)
}

fn build(scenario: &Scenario, est: &Uncertainty) -> Result<MpcController, CliError> {
    synthesize(
        &scenario.model,
        est,
        &scenario.x_set,
        &scenario.u_set,
        &scenario.tuning,
        scenario.ell_a,
        scenario.ell_b,
        &scenario.synthesis,
    )
    .map_err(|e| match e {
        MpcError::Dimension(msg) => CliError::Parse(msg),
        other => CliError::Synthesis(other.to_string()),
    })
}

fn fmt_vec(v: &Vector) -> String {
    let items: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
    format!("[{}]", items.join(", "))
}

fn fmt_mat(m: &Mat) -> String {
    let rows: Vec<String> = m
        .row_iter()
        .map(|r| r.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(", "))
        .collect();
    format!("[{}]", rows.join("; "))
}

/// `max_z |z_i|` over `set` for each axis `i`.
fn axis_extent(set: &Polytope) -> Result<Vector, CliError> {
    let n = set.dim();
    let mut out = Vector::zeros(n);
    for i in 0..n {
        let mut e = Vector::zeros(n);
        e[i] = 1.0;
        let hi = set.support(&e).map_err(|e| CliError::Synthesis(e.to_string()))?;
        let lo = set.support(&-e).map_err(|e| CliError::Synthesis(e.to_string()))?;
        out[i] = hi.max(lo);
    }
    Ok(out)
}

fn same_set(a: &Polytope, b: &Polytope) -> Result<bool, CliError> {
    let sub = |x: &Polytope, y: &Polytope| x.is_subset_of(y).map_err(|e| CliError::Synthesis(e.to_string()));
    Ok(sub(a, b)? && sub(b, a)?)
}

#[derive(Serialize)]
struct SetDump {
    normals: Vec<Vec<f64>>,
    offsets: Vec<f64>,
}

impl SetDump {
    fn of(p: &Polytope) -> Self {
        SetDump {
            normals: p.normals().row_iter().map(|r| r.iter().copied().collect()).collect(),
            offsets: p.offsets().iter().copied().collect(),
        }
    }
}

#[derive(Serialize)]
struct SynthesisDump {
    estimate: Vec<f64>,
    tube_gain: Vec<Vec<f64>>,
    terminal_gain: Vec<Vec<f64>>,
    terminal_weight: Vec<Vec<f64>>,
    disturbance_set: SetDump,
    tube_set: SetDump,
    tightened_state_set: SetDump,
    tightened_input_set: SetDump,
    terminal_set: SetDump,
    determination_index: usize,
}

fn rows(m: &Mat) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn cmd_synthesize(args: &SynthesizeArgs) -> Result<(), CliError> {
    let scenario = load(&args.common)?;
    let est = estimate_from(&scenario, args.delta_hat.as_deref())?;
    let ctrl = build(&scenario, &est)?;
    let (steps, alpha, inflation) = ctrl.rpi_parameters();
    let extent = axis_extent(ctrl.tube_set())?;

    println!("estimate: {}", fmt_vec(&est.flatten()));
    println!("tube gain K: {}", fmt_mat(ctrl.tube_gain()));
    println!("terminal gain Kbar: {}", fmt_mat(ctrl.terminal_gain()));
    println!("terminal weight P: {}", fmt_mat(ctrl.terminal_weight()));
    println!("disturbance set W: half-widths {}", fmt_vec(&axis_extent(ctrl.disturbance_set())?));
    if extent.amax() == 0.0 {
        println!("tube set Phi_K: {{0}}");
    } else {
        println!(
            "tube set Phi_K: {} facets, s = {steps}, alpha = {alpha:.6}, inflation = {inflation:.6}",
            ctrl.tube_set().n_facets()
        );
        println!("tube set radius: {:.12}", extent.amax());
        println!("tube set half-widths: {}", fmt_vec(&extent));
    }
    let x_equal = same_set(ctrl.tightened_state_set(), ctrl.state_set())?;
    let u_equal = same_set(ctrl.tightened_input_set(), ctrl.input_set())?;
    println!(
        "tightened state set X1: {} facets{}",
        ctrl.tightened_state_set().n_facets(),
        if x_equal { " (X1 = X)" } else { "" }
    );
    println!(
        "tightened input set U1: {} facets{}",
        ctrl.tightened_input_set().n_facets(),
        if u_equal { " (U1 = U)" } else { "" }
    );
    println!("terminal set Omega: {} facets", ctrl.terminal_set().n_facets());
    println!("determination index k*: {}", ctrl.determination_index());

    if let Some(dir) = &args.out {
        fs::create_dir_all(dir)?;
        let dump = SynthesisDump {
            estimate: est.flatten().iter().copied().collect(),
            tube_gain: rows(ctrl.tube_gain()),
            terminal_gain: rows(ctrl.terminal_gain()),
            terminal_weight: rows(ctrl.terminal_weight()),
            disturbance_set: SetDump::of(ctrl.disturbance_set()),
            tube_set: SetDump::of(ctrl.tube_set()),
            tightened_state_set: SetDump::of(ctrl.tightened_state_set()),
            tightened_input_set: SetDump::of(ctrl.tightened_input_set()),
            terminal_set: SetDump::of(ctrl.terminal_set()),
            determination_index: ctrl.determination_index(),
        };
        write_json(&dir.join("sets.json"), &dump)?;
    }
    Ok(())
}

/// Summary written next to a trial trajectory.
#[derive(Debug, Serialize)]
pub struct TrialSummary {
    pub iteration: usize,
    pub estimate: Vec<f64>,
    pub feasible: bool,
    pub failure: Option<String>,
    #[serde(rename = "Q")]
    pub cost: f64,
    pub steps: usize,
    pub trial_length: usize,
    pub max_tube_error: f64,
    pub constraint_violations: usize,
    pub tube_violations: usize,
    pub trajectory: String,
}

fn failure_text(f: &TrialFailure) -> String {
    match f {
        TrialFailure::SynthesisFailed(msg) => format!("synthesis failed: {msg}"),
        TrialFailure::InfeasibleAtStep(k) => format!("infeasible at step {k}"),
    }
}

fn summarize(rec: &TrialRecord, scenario: &Scenario, csv: &Path) -> TrialSummary {
    TrialSummary {
        iteration: rec.iteration,
        estimate: rec.estimate.flatten().iter().copied().collect(),
        feasible: rec.feasible,
        failure: rec.failure.as_ref().map(failure_text),
        cost: rec.cost,
        steps: rec.len(),
        trial_length: scenario.learning.trial_length,
        max_tube_error: rec.max_tube_error(),
        constraint_violations: rec.constraint_violations(),
        tube_violations: rec.tube_violations(),
        trajectory: csv.display().to_string(),
    }
}

pub fn cmd_trial(args: &TrialArgs) -> Result<(), CliError> {
    let mut scenario = load(&args.common)?;
    if let Some(text) = &args.x0 {
        let x0 = parse_list(text, "--x0")?;
        scenario.x0 = Vector::from_vec(x0);
        scenario.validate().map_err(|e| CliError::Parse(e.to_string()))?;
    }
    let est = estimate_from(&scenario, args.delta_hat.as_deref())?;
    // fail with the synthesis exit code before simulating anything
    build(&scenario, &est)?;
    let rec = run_trial(&scenario, &est, 0);

    fs::create_dir_all(&args.out)?;
    let csv = args.out.join("trial.csv");
    write_trajectory(&csv, &rec, &scenario)?;
    let summary = summarize(&rec, &scenario, &csv);
    write_json(&args.out.join("trial.json"), &summary)?;
    println!(
        "Q = {:.6e}, feasible = {}, max tube error = {:.3e}, constraint violations = {}",
        rec.cost,
        rec.feasible,
        rec.max_tube_error(),
        rec.constraint_violations()
    );
    match &rec.failure {
        Some(f) => Err(CliError::Infeasible(failure_text(f))),
        None => Ok(()),
    }
}

/// One row per simulated step. A trial that failed at step `k` gets a last
/// row holding only `k`, the state reached and `feasible = 0`.
pub fn write_trajectory(path: &Path, rec: &TrialRecord, scenario: &Scenario) -> Result<(), CliError> {
    let n = scenario.model.states();
    let m = scenario.model.inputs();
    let p = scenario.model.outputs();
    let mut header = vec!["k".to_string()];
    for (name, len) in [("x", n), ("u", m), ("y", p), ("xbar", n), ("e", n), ("r", p)] {
        header.extend((0..len).map(|i| format!("{name}{i}")));
    }
    header.push("feasible".into());

    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?;
    w.write_record(&header)?;
    let cells = |v: &Vector| v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>();
    for k in 0..rec.len() {
        let mut row = vec![k.to_string()];
        row.extend(cells(&rec.states[k]));
        row.extend(cells(&rec.inputs[k]));
        row.extend(cells(&rec.outputs[k]));
        row.extend(cells(&rec.nominal[k]));
        row.extend(cells(&rec.tube_errors[k]));
        row.extend(cells(&rec.references[k]));
        row.push("1".into());
        w.write_record(&row)?;
    }
    if let Some(TrialFailure::InfeasibleAtStep(k)) = rec.failure {
        let x = match (rec.states.last(), rec.inputs.last()) {
            (Some(x), Some(u)) => {
                let (a, b) = scenario.model.perturbed(&scenario.truth);
                a * x + b * u
            }
            _ => scenario.x0.clone(),
        };
        let mut row = vec![k.to_string()];
        row.extend(cells(&x));
        row.extend(std::iter::repeat_n(String::new(), m + p + 2 * n + p));
        row.push("0".into());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Learning run summary written as `report.json`.
#[derive(Debug, Serialize)]
pub struct RunReport {
    pub iterations: Vec<IterationRow>,
    pub best_estimate: Vec<f64>,
    #[serde(rename = "best_Q")]
    pub best_cost: f64,
    pub best_estimate_error: f64,
    pub termination: String,
    pub learning_curve: String,
    pub first_trial: TrialSummary,
    pub best_trial: TrialSummary,
}

#[derive(Debug, Serialize)]
pub struct IterationRow {
    pub t: usize,
    pub estimate: Vec<f64>,
    #[serde(rename = "Q")]
    pub cost: f64,
    #[serde(rename = "best_Q")]
    pub best_cost: f64,
    pub estimate_error: f64,
    pub tail_error: f64,
    pub feasible: bool,
}

pub fn cmd_learn(args: &LearnArgs) -> Result<(), CliError> {
    let scenario = load(&args.common)?;
    let report = run_learning(&scenario, args.jobs).map_err(|e| match e {
        IlcError::Mpc(err) => CliError::Synthesis(err.to_string()),
        other => CliError::Parse(other.to_string()),
    })?;
    fs::create_dir_all(&args.out)?;
    let curve = args.out.join("learning_curve.csv");
    write_learning_curve(&curve, &report)?;
    let first = args.out.join("first_trial.csv");
    let best = args.out.join("best_trial.csv");
    write_trajectory(&first, &report.first_trial, &scenario)?;
    write_trajectory(&best, &report.best_trial, &scenario)?;

    let run = RunReport {
        iterations: report
            .iterations
            .iter()
            .map(|s| IterationRow {
                t: s.iteration,
                estimate: s.estimate.iter().copied().collect(),
                cost: s.cost,
                best_cost: s.best_cost,
                estimate_error: s.estimate_error,
                tail_error: s.tail_error,
                feasible: s.feasible,
            })
            .collect(),
        best_estimate: report.best_estimate.flatten().iter().copied().collect(),
        best_cost: report.best_cost,
        best_estimate_error: report.best_error,
        termination: format!("{:?}", report.termination).to_lowercase(),
        learning_curve: curve.display().to_string(),
        first_trial: summarize(&report.first_trial, &scenario, &first),
        best_trial: summarize(&report.best_trial, &scenario, &best),
    };
    write_json(&args.out.join("report.json"), &run)?;
    println!(
        "{} trials, best Q = {:.6e}, best estimate {}, |delta - estimate|inf = {:.3e}",
        report.iterations.len(),
        report.best_cost,
        fmt_vec(&report.best_estimate.flatten()),
        report.best_error
    );
    Ok(())
}

/// Columns `t, Q, estimate_error, tail_error`. Infeasible trials have an
/// empty tail error.
pub fn write_learning_curve(path: &Path, report: &LearningReport) -> Result<(), CliError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?;
    w.write_record(["t", "Q", "estimate_error", "tail_error"])?;
    for s in &report.iterations {
        let tail = if s.tail_error.is_finite() {
            format!("{:e}", s.tail_error)
        } else {
            String::new()
        };
        w.write_record([
            s.iteration.to_string(),
            format!("{:e}", s.cost),
            format!("{:e}", s.estimate_error),
            tail,
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_direct_bench(args: &BenchArgs) -> Result<(), CliError> {
    let f = args.function;
    let config = DirectConfig {
        budget: args.budget,
        delta_term: 0.0,
        epsilon: DEFAULT_EPSILON,
    };
    let mut samples: Vec<(Vector, f64)> = Vec::new();
    let state = minimize(f.domain(), config, |x| {
        let v = f.eval(x);
        samples.push((x.clone(), v));
        v
    })
    .map_err(|e| CliError::Parse(e.to_string()))?;

    fs::create_dir_all(&args.out)?;
    let path = args.out.join(format!("direct_{}.csv", f.name()));
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(&path)?;
    w.write_record(["evaluation", "x0", "x1", "value", "best_value", "best_error"])?;
    let target = f.minimizer();
    let mut best = (f64::INFINITY, f64::INFINITY);
    for (i, (x, v)) in samples.iter().enumerate() {
        if *v < best.0 {
            best = (*v, (x - &target).amax());
        }
        w.write_record([
            (i + 1).to_string(),
            format!("{:e}", x[0]),
            format!("{:e}", x[1]),
            format!("{v:e}"),
            format!("{:e}", best.0),
            format!("{:e}", best.1),
        ])?;
    }
    w.flush()?;
    let (x, v) = state.best().expect("at least one evaluation");
    println!(
        "{}: {} evaluations, best {} value {v:.6e}, |x - x*|inf = {:.3e}",
        f.name(),
        state.evaluations(),
        fmt_vec(&x),
        (&x - &target).amax()
    );
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}
