//! Command-line front end: argument parsing, the commands, and exit codes.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::config::{load_config, ConfigError, CouplingKind, GridConfig, RunConfig};
use crate::diagnostics::{
    check_minorization, detect_jumps, detect_period, doeblin_constants, entropy_dissipation, fit_exponential_rate,
    relative_entropy, EntropyKind, JumpEvent, MinorizationCheck, PeriodReport,
};
use crate::error::Error;
use crate::grid::{discretize_density, DensityField, Grid};
use crate::output::{
    write_flux, write_flux_profile, write_json, write_manifest, write_residual, write_snapshot, write_trace,
    write_trace_1d,
};
use crate::presets::{example1_spec, example2_spec, example3_1_spec, example3_2_spec, InitialDatum};
use crate::rate::{verify_bounds, RateTerm};
use crate::reduction::{activity_identity_residual, marginal_l1, solve_classical, Classical, Marginal1D};
use crate::steady::{invariant_flux, reconstruct_steady_density, solve_equilibrium};
use crate::transport::{run_simulation, run_simulation_with, CouplingMode, RunOptions, Simulation};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY_FAILED: i32 = 1;
pub const EXIT_SOLVER: i32 = 2;
pub const EXIT_NO_STEADY_STATE: i32 = 3;
pub const EXIT_USAGE: i32 = 64;

/// Grid and horizon of the canned examples.
pub const EXAMPLE_DELTA: f64 = 0.005;
pub const EXAMPLE_DOMAIN: f64 = 10.0;
pub const EXAMPLE_T_END: f64 = 30.0;

/// Smallest distance used in the decay fit. The fit also ignores distances
/// within ten times the mass lost through the domain edge, where truncation
/// dominates.
const DECAY_FIT_FLOOR: f64 = 1e-6;

#[derive(Debug, Parser)]
#[command(name = "renewal2t", version, about = "Renewal equation with two elapsed times since discharge")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the nonlinear solver and write trace, flux and snapshot CSVs.
    Simulate(Common),
    /// Solve for the equilibrium (or the linear steady state in frozen mode).
    Steady(Common),
    /// Run the invariant, Doeblin, entropy and reduction checks.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Perturbs the recorded mass to exercise the conservation check.
        #[arg(long, hide = true)]
        inject_conservation_defect: bool,
    },
    /// Run a canned reference configuration.
    Example {
        #[arg(value_parser = ["1", "2", "3a", "3b"])]
        name: String,
        #[command(flatten)]
        common: Common,
    },
    /// Run the one-time reduction of an `a`-independent rate.
    Reduce(Common),
}

#[derive(Debug, Clone, Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long = "t-end")]
    t_end: Option<f64>,
    #[arg(long, value_enum)]
    coupling: Option<CouplingArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CouplingArg {
    Picard,
    Explicit,
}

/// Failure of a command, carrying its exit code.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure {
            code: EXIT_SOLVER,
            message: format!("i/o error: {e}"),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

fn solver_code(e: &Error) -> i32 {
    match e {
        Error::NoSteadyState { .. } => EXIT_NO_STEADY_STATE,
        Error::StepFailed { source, .. } => solver_code(source),
        _ => EXIT_SOLVER,
    }
}

/// Writes `error.json` next to the other artifacts and maps the error to its
/// exit code.
fn solver_failure(out: &Path, e: Error) -> Failure {
    let code = solver_code(&e);
    let _ = write_json(&out.join("error.json"), &json!({ "error": e.to_string(), "exit_code": code }));
    Failure {
        code,
        message: e.to_string(),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    if let Err(f) = configure_threads() {
        eprintln!("error: {}", f.message);
        return f.code;
    }
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var("RENEWAL2T_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| usage(format!("RENEWAL2T_THREADS must be a positive integer, got {value:?}")))?;
    // a pool built earlier in the same process stays in place
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn dispatch(command: Command) -> Result<i32, Failure> {
    match command {
        Command::Simulate(c) => {
            let (cfg, out) = prepare(&c, None)?;
            simulate(&cfg, &out, "simulate")
        }
        Command::Steady(c) => {
            let (cfg, out) = prepare(&c, None)?;
            steady(&cfg, &out)
        }
        Command::Verify {
            common,
            inject_conservation_defect,
        } => {
            let (cfg, out) = prepare(&common, None)?;
            verify(&cfg, &out, inject_conservation_defect)
        }
        Command::Example { name, common } => {
            let canned = example_config(&name)?;
            let (cfg, out) = prepare(&common, Some(canned))?;
            write_json(&out.join("config.json"), &cfg)?;
            if name == "3a" {
                reduce(&cfg, &out, "example 3a")
            } else {
                simulate(&cfg, &out, &format!("example {name}"))
            }
        }
        Command::Reduce(c) => {
            let (cfg, out) = prepare(&c, None)?;
            reduce(&cfg, &out, "reduce")
        }
    }
}

/// Loads the configuration (or takes the canned one), applies the command
/// line overrides, revalidates and creates the output directory.
fn prepare(c: &Common, canned: Option<RunConfig>) -> Result<(RunConfig, PathBuf), Failure> {
    let mut cfg = match (canned, &c.config) {
        (Some(cfg), None) => cfg,
        (Some(_), Some(_)) => return Err(usage("example commands take no --config")),
        (None, Some(path)) => load_config(path)?,
        (None, None) => return Err(usage("--config is required")),
    };
    if let Some(d) = c.delta {
        cfg.grid.delta = d;
    }
    if let Some(t) = c.t_end {
        cfg.t_end = t;
    }
    if let Some(mode) = c.coupling {
        cfg.coupling.mode = match mode {
            CouplingArg::Picard => CouplingKind::Picard,
            CouplingArg::Explicit => CouplingKind::Explicit,
        };
    }
    cfg.validate()?;
    let out = c
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out)?;
    Ok((cfg, out))
}

fn example_config(name: &str) -> Result<RunConfig, Failure> {
    let (spec, initial) = match name {
        "1" => (example1_spec(), InitialDatum::ExpA),
        "2" => (example2_spec(), InitialDatum::BoxExample2),
        "3a" => (example3_1_spec(), InitialDatum::ShiftedExpExample3),
        "3b" => (example3_2_spec(), InitialDatum::ShiftedExpExample3),
        other => return Err(usage(format!("unknown example {other:?}; expected 1, 2, 3a or 3b"))),
    };
    Ok(RunConfig {
        grid: GridConfig {
            delta: EXAMPLE_DELTA,
            s_max: EXAMPLE_DOMAIN,
            d_max: EXAMPLE_DOMAIN,
        },
        spec,
        initial,
        t_end: EXAMPLE_T_END,
        coupling: Default::default(),
        snapshot_every: None,
        flux_every: None,
        steady: Default::default(),
        output_dir: None,
    })
}

fn initial_field(cfg: &RunConfig, grid: &Grid) -> Result<DensityField, Error> {
    let datum = cfg.initial;
    Ok(discretize_density(|s, a| datum.density(s, a), grid)?.field)
}

fn config_hash(cfg: &RunConfig) -> String {
    crate::output::sha256_hex(cfg.canonical_json().as_bytes())
}

fn tolerances(cfg: &RunConfig) -> serde_json::Value {
    json!({
        "coupling": cfg.coupling,
        "steady": cfg.steady,
    })
}

/// Steps from the start of the last unit of time to the end of a series.
fn one_time_unit(delta: f64) -> usize {
    (1.0 / delta).round() as usize
}

/// Discontinuities of a flux profile: runs of node-to-node changes above a
/// tenth of its maximum, located at the middle of each run.
pub fn flux_discontinuities(values: &[f64], delta: f64) -> Vec<f64> {
    let top = values.iter().cloned().fold(0.0, f64::max);
    if !(top > 0.0) {
        return Vec::new();
    }
    detect_jumps(values, delta, 0.1 * top)
        .map(|events| {
            events
                .iter()
                .map(|e| e.time + 0.5 * delta + 0.5 * e.steps as f64 * delta)
                .collect()
        })
        .unwrap_or_default()
}

#[derive(Debug, Serialize)]
struct RunSummary {
    command: String,
    t_end: f64,
    final_x: f64,
    final_mass: f64,
    lost_tail: f64,
    /// `|X(t_end) - X(t_end - 1)|`, absent for runs shorter than one unit.
    last_unit_change: Option<f64>,
    fallback_steps: usize,
    initial_deficit: f64,
    jumps: Vec<JumpEvent>,
    period: Option<PeriodReport>,
    /// Locations in `a` of jumps of the final discharge flux.
    final_flux_discontinuities: Vec<f64>,
}

fn last_unit_change(x: &[f64], delta: f64) -> Option<f64> {
    let k = one_time_unit(delta);
    (x.len() > k).then(|| (x[x.len() - 1] - x[x.len() - 1 - k]).abs())
}

fn simulate(cfg: &RunConfig, out: &Path, command: &str) -> Result<i32, Failure> {
    let grid = cfg.build_grid().map_err(|e| solver_failure(out, e))?;
    let datum = cfg.initial;
    let disc = discretize_density(|s, a| datum.density(s, a), &grid).map_err(|e| solver_failure(out, e))?;
    let opts = RunOptions {
        snapshot_every: cfg.steps(cfg.snapshot_every),
        // without a cadence the initial and final rows are kept
        flux_every: cfg.steps(cfg.flux_every).or(Some(usize::MAX)),
        fallback_to_explicit: cfg.coupling.fallback_to_explicit,
    };
    let trace = run_simulation(disc.field.clone(), &cfg.spec, cfg.t_end, cfg.coupling.mode(), opts)
        .map_err(|e| solver_failure(out, e))?;
    let delta = grid.delta;
    let mut files = vec!["trace.csv".to_string(), "flux.csv".to_string()];
    write_trace(
        &out.join("trace.csv"),
        &trace.times,
        &trace.x_series,
        &trace.mass_series,
        &trace.lost_tail_series,
        &trace.picard_iters,
    )?;
    write_flux(&out.join("flux.csv"), delta, &trace.n_rows)?;
    for (t, field) in &trace.snapshots {
        let name = format!("snapshot_{:08}.csv", (t / delta).round() as usize);
        write_snapshot(&out.join(&name), field)?;
        files.push(name);
    }
    let x = &trace.x_series;
    let summary = RunSummary {
        command: command.into(),
        t_end: cfg.t_end,
        final_x: *x.last().expect("at least the initial record"),
        final_mass: *trace.mass_series.last().expect("initial record"),
        lost_tail: *trace.lost_tail_series.last().expect("initial record"),
        last_unit_change: last_unit_change(x, delta),
        fallback_steps: trace.fallback_steps.len(),
        initial_deficit: disc.deficit(),
        jumps: detect_jumps(x, delta, 0.1).unwrap_or_default(),
        period: detect_period(x, delta, None).ok().flatten(),
        final_flux_discontinuities: trace
            .n_rows
            .last()
            .map(|(_, n)| flux_discontinuities(n, delta))
            .unwrap_or_default(),
    };
    write_json(&out.join("summary.json"), &summary)?;
    files.push("summary.json".into());
    write_manifest(out, command, config_hash(cfg), grid, tolerances(cfg), &files)?;
    println!(
        "{command}: X({}) = {:.6}, mass {:.12}, lost {:.3e}, {} jumps, periodic {}",
        cfg.t_end,
        summary.final_x,
        summary.final_mass,
        summary.lost_tail,
        summary.jumps.len(),
        summary.period.is_some_and(|p| p.periodic)
    );
    Ok(EXIT_OK)
}

fn steady(cfg: &RunConfig, out: &Path) -> Result<i32, Failure> {
    let grid = cfg.build_grid().map_err(|e| solver_failure(out, e))?;
    let files = vec!["steady.json".to_string(), "steady_flux.csv".to_string(), "steady_density.csv".to_string()];
    if let CouplingMode::Frozen { x } = cfg.coupling.mode() {
        // linear problem at a fixed activity
        let flux = invariant_flux(&cfg.spec, &grid, x, cfg.steady.power_options()).map_err(|e| solver_failure(out, e))?;
        let rec = reconstruct_steady_density(&cfg.spec, &grid, x, &flux).map_err(|e| solver_failure(out, e))?;
        write_json(
            &out.join("steady.json"),
            &json!({ "X": x, "mass_deficit": rec.deficit, "degenerate": rec.degenerate,
                     "flux_discontinuities": flux_discontinuities(&flux.values, grid.delta) }),
        )?;
        write_flux_profile(&out.join("steady_flux.csv"), &flux)?;
        write_snapshot(&out.join("steady_density.csv"), &rec.field)?;
        println!("steady (frozen X = {x}): flux mass {:.12}", flux.mass());
    } else {
        let res = solve_equilibrium(&cfg.spec, &grid, cfg.steady.options()).map_err(|e| solver_failure(out, e))?;
        let mut summary = serde_json::to_value(res.summary()).expect("summary serializes");
        summary["flux_discontinuities"] = json!(flux_discontinuities(&res.n_star_flux.values, grid.delta));
        write_json(&out.join("steady.json"), &summary)?;
        write_flux_profile(&out.join("steady_flux.csv"), &res.n_star_flux)?;
        write_snapshot(&out.join("steady_density.csv"), &res.n_star)?;
        println!(
            "steady: X* = {:.12}, |Phi(X*) - X*| = {:.3e}, operator residual {:.3e}",
            res.x_star, res.phi_residual, res.operator_residual
        );
    }
    write_manifest(out, "steady", config_hash(cfg), grid, tolerances(cfg), &files)?;
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
struct CheckResult {
    name: String,
    /// `None` when the check does not apply.
    passed: Option<bool>,
    value: Option<f64>,
    limit: Option<f64>,
    note: String,
}

fn check(name: &str, passed: bool, value: f64, limit: f64, note: String) -> CheckResult {
    CheckResult {
        name: name.into(),
        passed: Some(passed),
        value: Some(value),
        limit: Some(limit),
        note,
    }
}

#[derive(Debug, Serialize)]
struct VerificationReport {
    alpha: f64,
    lambda: f64,
    t0: f64,
    x_ref: f64,
    minorization: Option<MinorizationCheck>,
    fitted_rate: Option<f64>,
    checks: Vec<CheckResult>,
    all_passed: bool,
}

fn verify(cfg: &RunConfig, out: &Path, inject_defect: bool) -> Result<i32, Failure> {
    let grid = cfg.build_grid().map_err(|e| solver_failure(out, e))?;
    let delta = grid.delta;
    let spec = &cfg.spec;
    let cert = doeblin_constants(spec.p0, spec.p_inf, spec.sigma).map_err(|e| solver_failure(out, e))?;
    let mut checks = Vec::new();

    // conservation and positivity along the configured nonlinear run
    let init = initial_field(cfg, &grid).map_err(|e| solver_failure(out, e))?;
    let mut negative_steps = 0usize;
    let opts = RunOptions {
        fallback_to_explicit: cfg.coupling.fallback_to_explicit,
        ..RunOptions::default()
    };
    let mut trace = run_simulation_with(init.clone(), spec, cfg.t_end, cfg.coupling.mode(), opts, |sim| {
        if !sim.field().is_non_negative() {
            negative_steps += 1;
        }
    })
    .map_err(|e| solver_failure(out, e))?;
    if inject_defect {
        let half = trace.mass_series.len() / 2;
        trace.mass_series.iter_mut().skip(half).for_each(|m| *m += 1e-6);
    }
    let totals: Vec<f64> = trace.mass_series.iter().zip(&trace.lost_tail_series).map(|(m, l)| m + l).collect();
    let step_drift = totals.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
    let total_drift = totals.iter().map(|t| (t - 1.0).abs()).fold(0.0, f64::max);
    checks.push(check("per-step conservation", step_drift <= 1e-12, step_drift, 1e-12, String::new()));
    checks.push(check("run conservation", total_drift <= 1e-9, total_drift, 1e-9, String::new()));
    checks.push(check("positivity", negative_steps == 0, negative_steps as f64, 0.0, String::new()));
    let x_ref = *trace.x_series.last().expect("initial record");

    // declared bounds over the range of activities the run visits
    let lo = trace.x_series.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = trace.x_series.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let samples: Vec<f64> = (0..=8).map(|k| lo + (hi - lo) * k as f64 / 8.0).collect();
    let bounds = verify_bounds(spec, &grid, &samples);
    checks.push(check(
        "declared rate bounds",
        bounds.holds(),
        bounds.violation_count as f64,
        0.0,
        format!("{} cell evaluations, X in [{lo:.6}, {hi:.6}]", bounds.checked),
    ));

    // linear flow at the final activity: minorization, decay and entropy
    let flux = invariant_flux(spec, &grid, x_ref, cfg.steady.power_options()).map_err(|e| solver_failure(out, e))?;
    let n_x = reconstruct_steady_density(spec, &grid, x_ref, &flux)
        .map_err(|e| solver_failure(out, e))?
        .field;
    let d0 = init.l1_distance(&n_x);
    let every = ((0.1 / delta).round() as usize).max(1);
    let k_minor = (cert.t0 / delta).round() as usize;
    let mut minor: Option<Result<MinorizationCheck, Error>> = None;
    let mut samples: Vec<(f64, f64, f64, f64)> = Vec::new();
    let mut sample_err: Option<Error> = None;
    let mut lost = 0.0f64;
    run_simulation_with(init, spec, cfg.t_end, CouplingMode::Frozen { x: x_ref }, RunOptions::default(), |sim| {
        let k = sim.step_index();
        lost = lost.max(1.0 - sim.total_mass());
        if k == k_minor {
            minor = Some(check_minorization(sim.field(), spec.p0, spec.p_inf, spec.sigma));
        }
        if k % every == 0 && sample_err.is_none() {
            let n = sim.field();
            let h = relative_entropy(n, &n_x, EntropyKind::Square);
            let d = entropy_dissipation(n, &n_x, spec, x_ref, EntropyKind::Square);
            match (h, d) {
                (Ok(h), Ok(d)) => samples.push((sim.time(), n.l1_distance(&n_x), h.value, d.value)),
                (Err(e), _) | (_, Err(e)) => sample_err = Some(e),
            }
        }
    })
    .map_err(|e| solver_failure(out, e))?;
    if let Some(e) = sample_err {
        return Err(solver_failure(out, e));
    }
    let minorization = match minor {
        Some(Ok(m)) => {
            checks.push(check(
                "minorization at t0",
                m.holds,
                m.worst_cell_ratio,
                1.0 - 10.0 * delta,
                format!("{} cells", m.cells),
            ));
            Some(m)
        }
        Some(Err(e)) => return Err(solver_failure(out, e)),
        None => {
            checks.push(CheckResult {
                name: "minorization at t0".into(),
                passed: None,
                value: None,
                limit: None,
                note: format!("t_end {} is shorter than t0 = {}", cfg.t_end, cert.t0),
            });
            None
        }
    };
    let floor = DECAY_FIT_FLOOR.max(10.0 * lost);
    let (t_fit, d_fit): (Vec<f64>, Vec<f64>) = samples
        .iter()
        .filter(|s| s.1 > floor)
        .map(|s| (s.0, s.1))
        .unzip();
    let fitted_rate = fit_exponential_rate(&t_fit, &d_fit, cert.t0).ok().map(|f| f.0);
    checks.push(match fitted_rate {
        Some(rate) => check("decay rate at least lambda", rate >= cert.lambda, rate, cert.lambda, String::new()),
        None => CheckResult {
            name: "decay rate at least lambda".into(),
            passed: None,
            value: None,
            limit: Some(cert.lambda),
            note: format!("too few samples above the fit floor {floor:.1e} after t0"),
        },
    });
    let excess = samples
        .iter()
        .map(|s| s.1 - cert.decay_bound(s.0, d0))
        .fold(f64::NEG_INFINITY, f64::max);
    checks.push(check("decay bound", excess <= 10.0 * delta, excess, 10.0 * delta, String::new()));
    let rise = samples
        .windows(2)
        .map(|w| (w[1].2 - w[0].2) / (w[1].0 - w[0].0))
        .fold(f64::NEG_INFINITY, f64::max);
    let min_d = samples.iter().map(|s| s.3).fold(f64::INFINITY, f64::min);
    if samples.len() > 1 {
        checks.push(check("entropy non-increasing", rise <= 10.0 * delta, rise, 10.0 * delta, String::new()));
    }
    checks.push(check("dissipation non-negative", min_d >= -10.0 * delta, min_d, -10.0 * delta, String::new()));

    // one-time reduction
    if spec.is_a_independent() {
        let n0 = initial_field(cfg, &grid).map_err(|e| solver_failure(out, e))?;
        let gap = reduction_gap(n0, cfg).map_err(|e| solver_failure(out, e))?;
        checks.push(check("one-time reduction", gap <= 1e-10, gap, 1e-10, String::new()));
    } else {
        checks.push(CheckResult {
            name: "one-time reduction".into(),
            passed: None,
            value: None,
            limit: Some(1e-10),
            note: "rate depends on a".into(),
        });
    }

    let all_passed = checks.iter().all(|c| c.passed != Some(false));
    let report = VerificationReport {
        alpha: cert.alpha,
        lambda: cert.lambda,
        t0: cert.t0,
        x_ref,
        minorization,
        fitted_rate,
        checks,
        all_passed,
    };
    write_json(&out.join("verification.json"), &report)?;
    write_manifest(out, "verify", config_hash(cfg), grid, tolerances(cfg), &["verification.json".into()])?;
    for c in &report.checks {
        let tag = match c.passed {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "SKIP",
        };
        let value = c.value.map_or(String::new(), |v| format!(" {v:.3e}"));
        println!("{tag} {}{value} {}", c.name, c.note);
    }
    Ok(if all_passed { EXIT_OK } else { EXIT_VERIFY_FAILED })
}

/// Largest gap between the two-time marginal and the one-time solution,
/// stepping both to `t_end`.
fn reduction_gap(n0: DensityField, cfg: &RunConfig) -> Result<f64, Error> {
    let mode = cfg.coupling.mode();
    let m0 = Marginal1D::from_field(&n0);
    let mut two = Simulation::new(n0, &cfg.spec, mode, cfg.coupling.fallback_to_explicit)?;
    let mut one = Classical::new(m0, &cfg.spec, mode, cfg.coupling.fallback_to_explicit)?;
    let mut gap = marginal_l1(two.field(), one.state())?;
    for _ in 0..crate::transport::step_count(cfg.t_end, cfg.grid.delta) {
        two.advance()?;
        one.advance()?;
        gap = gap.max(marginal_l1(two.field(), one.state())?);
    }
    Ok(gap)
}

#[derive(Debug, Serialize)]
struct ReduceSummary {
    command: String,
    final_x: f64,
    final_mass: f64,
    fallback_steps: usize,
    period: Option<PeriodReport>,
    /// Largest residual of the delay identity on `t >= sigma`, for a rate
    /// `phi(X) 1{s > sigma}`.
    max_identity_residual: Option<f64>,
}

fn reduce(cfg: &RunConfig, out: &Path, command: &str) -> Result<i32, Failure> {
    if !cfg.spec.is_a_independent() {
        return Err(usage("reduce needs a rate that does not depend on a"));
    }
    let grid = cfg.build_grid().map_err(|e| solver_failure(out, e))?;
    let datum = cfg.initial;
    let m0 = Marginal1D::discretize(|s, a| datum.density(s, a), &grid).map_err(|e| solver_failure(out, e))?;
    let trace = solve_classical(
        m0,
        &cfg.spec,
        cfg.t_end,
        cfg.coupling.mode(),
        None,
        cfg.coupling.fallback_to_explicit,
    )
    .map_err(|e| solver_failure(out, e))?;
    let delta = grid.delta;
    let mut files = vec!["trace_1d.csv".to_string()];
    write_trace_1d(&out.join("trace_1d.csv"), &trace.times, &trace.x_series, &trace.mass_series)?;
    let mut max_residual = None;
    if let [RateTerm::ModulatedS { phi, sigma_t }] = cfg.spec.terms.as_slice() {
        let residual = activity_identity_residual(&trace.x_series, delta, *phi, *sigma_t);
        max_residual = residual.iter().map(|r| r.1).reduce(f64::max);
        write_residual(&out.join("residual.csv"), &residual)?;
        files.push("residual.csv".into());
    }
    let summary = ReduceSummary {
        command: command.into(),
        final_x: *trace.x_series.last().expect("initial record"),
        final_mass: *trace.mass_series.last().expect("initial record"),
        fallback_steps: trace.fallback_steps.len(),
        period: detect_period(&trace.x_series, delta, None).ok().flatten(),
        max_identity_residual: max_residual,
    };
    write_json(&out.join("summary.json"), &summary)?;
    files.push("summary.json".into());
    write_manifest(out, command, config_hash(cfg), grid, tolerances(cfg), &files)?;
    println!(
        "{command}: X({}) = {:.6}, periodic {}, max identity residual {}",
        cfg.t_end,
        summary.final_x,
        summary.period.is_some_and(|p| p.periodic),
        max_residual.map_or("n/a".into(), |r| format!("{r:.3e}"))
    );
    Ok(EXIT_OK)
}
