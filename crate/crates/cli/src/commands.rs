use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::Serialize;
use serde_json::json;
use sweeping_core::adjoint::{integrate_adjoint_backward, multiplier_profile, AdjointArc, AdjointOptions};
use sweeping_core::catchup::catchup_simulate;
use sweeping_core::examples::{degenerate_certificate, example2_search, vanishing_costate_candidate, SearchOptions};
use sweeping_core::integrate::{integrate_forward, run_family, FamilyOptions};
use sweeping_core::mpcheck::{assemble_report, MpInputs};
use sweeping_core::penalty::{PenaltyLevel, PenaltySchedule};
use sweeping_core::problem::{validate_assumptions, AssumptionReport};
use sweeping_core::registry::{self, Builtin};
use sweeping_core::sets::ControlSet;
use sweeping_core::trajectory::{ControlSignal, Trajectory};
use sweeping_core::Vector;

use crate::config::{check_at_least, check_positive, resolve, Common, RunConfig, Settings};
use crate::error::{CliError, Op};

/// Either an explicit `(γ, σ)` pair or a level of the default schedule.
#[derive(Debug, Args)]
pub struct LevelArgs {
    /// Penalty parameter gamma; overrides --level.
    #[arg(long, allow_negative_numbers = true)]
    pub gamma: Option<f64>,
    /// Level shift sigma used with --gamma.
    #[arg(long, allow_negative_numbers = true)]
    pub sigma: Option<f64>,
    /// Schedule level k in 1..=K (default K).
    #[arg(long)]
    pub level: Option<usize>,
    /// Bang-bang control: max U up to this time, min U afterwards.
    #[arg(long = "switch", allow_negative_numbers = true)]
    pub switch: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CostateArgs {
    /// Cost multiplier lambda.
    #[arg(long, allow_negative_numbers = true)]
    pub lambda: Option<f64>,
    /// Terminal costate p(T), comma separated.
    #[arg(long = "pT", value_delimiter = ',', allow_hyphen_values = true)]
    pub p_t: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Penalty,
    Catchup,
}

fn write_bytes(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
    let err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| CliError::Output { path, source }
    };
    fs::create_dir_all(dir).map_err(err(dir))?;
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(err(&path))?;
    Ok(path)
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf, CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("report serialization");
    text.push('\n');
    write_bytes(dir, name, text.as_bytes())
}

fn write_trajectory(dir: &Path, name: &str, traj: &Trajectory) -> Result<PathBuf, CliError> {
    let mut buf = Vec::new();
    traj.write_csv(&mut buf).op("Trajectory::write_csv")?;
    write_bytes(dir, name, &buf)
}

fn write_arc(dir: &Path, name: &str, arc: &AdjointArc) -> Result<PathBuf, CliError> {
    let mut buf = Vec::new();
    arc.write_csv(&mut buf).op("AdjointArc::write_csv")?;
    write_bytes(dir, name, &buf)
}

fn load(s: &Settings) -> Result<Builtin, CliError> {
    registry::builtin(&s.problem, &s.params).op("registry::builtin")
}

fn control(b: &Builtin, switch: Option<f64>) -> Result<ControlSignal, CliError> {
    let Some(s) = switch else {
        return Ok(b.control.clone());
    };
    let ControlSet::Box { lo, hi } = &b.spec.controls else {
        return Err(CliError::Config("--switch needs a box control set".into()));
    };
    if !(s > 0.0 && s < b.spec.horizon) {
        return Err(CliError::Config(format!("switch time must lie in (0, {}), got {s}", b.spec.horizon)));
    }
    let (hi, lo) = (Vector::from_column_slice(hi), Vector::from_column_slice(lo));
    ControlSignal::bang_bang(s, hi, lo, b.spec.horizon, &b.spec.controls).op("ControlSignal::bang_bang")
}

fn assumptions(s: &Settings, b: &Builtin) -> Result<AssumptionReport, CliError> {
    validate_assumptions(&b.spec, &s.probe).op("validate_assumptions")
}

fn schedule(s: &Settings, report: &AssumptionReport) -> Result<PenaltySchedule, CliError> {
    PenaltySchedule::build(&s.schedule, report.mu, report.eta).op("PenaltySchedule::build")
}

struct Prepared {
    b: Builtin,
    report: AssumptionReport,
    level: PenaltyLevel,
    control: ControlSignal,
}

fn prepare(s: &Settings, file: &RunConfig, args: &LevelArgs) -> Result<Prepared, CliError> {
    let gamma = args.gamma.or(file.gamma).map(|g| check_positive("gamma", g)).transpose()?;
    let sigma = args.sigma.or(file.sigma).unwrap_or(0.0);
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(CliError::Config(format!("sigma must be nonnegative, got {sigma}")));
    }
    let b = load(s)?;
    let control = control(&b, args.switch.or(file.switch))?;
    let report = assumptions(s, &b)?;
    let level = match gamma {
        Some(g) => PenaltyLevel::new(g, sigma, report.mu, report.eta).op("PenaltyLevel::new")?,
        None => {
            let sched = schedule(s, &report)?;
            let k = args.level.or(file.level).unwrap_or(sched.len());
            if k == 0 || k > sched.len() {
                return Err(CliError::Config(format!("level must lie in 1..={}, got {k}", sched.len())));
            }
            sched.level(k - 1)
        }
    };
    Ok(Prepared { b, report, level, control })
}

fn costate(args: &CostateArgs, file: &RunConfig, dim: usize) -> Result<(f64, Vector), CliError> {
    let lambda = args.lambda.or(file.lambda).unwrap_or(0.0);
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(CliError::Config(format!("lambda must be nonnegative, got {lambda}")));
    }
    let p_t = args
        .p_t
        .clone()
        .or_else(|| file.p_t.clone())
        .ok_or_else(|| CliError::Config("--pT is required".into()))?;
    if p_t.len() != dim {
        return Err(CliError::Config(format!("--pT needs {dim} components, got {}", p_t.len())));
    }
    Ok((lambda, Vector::from_vec(p_t)))
}

/// Backward arc for `(λ, p(T))` rescaled so that `λ + |p(T)| = 1`; the zero
/// pair gives the zero arc.
fn backward_arc(prep: &Prepared, traj: &Trajectory, lambda: f64, p_t: &Vector) -> Result<AdjointArc, CliError> {
    let scale = lambda + p_t.norm();
    let (lambda, p_t, opts) = if scale > 0.0 {
        (lambda / scale, p_t / scale, AdjointOptions::default())
    } else {
        let opts = AdjointOptions {
            normalization_tol: f64::INFINITY,
            ..AdjointOptions::default()
        };
        (lambda, p_t.clone(), opts)
    };
    integrate_adjoint_backward(&prep.b.spec, traj, &p_t, lambda, &prep.level, &opts).op("integrate_adjoint_backward")
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub level: LevelArgs,
    /// Penalty ODE or catch-up scheme.
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    /// Catch-up steps.
    #[arg(long)]
    pub steps: Option<usize>,
}

pub fn simulate(a: &SimulateArgs) -> Result<bool, CliError> {
    let (s, file) = resolve(&a.common)?;
    let method = match (a.method, file.method.as_deref()) {
        (Some(m), _) => m,
        (None, None) => Method::Penalty,
        (None, Some(name)) => Method::from_str(name, true).map_err(|_| CliError::Config(format!("unknown method '{name}'")))?,
    };
    let summary;
    let traj = match method {
        Method::Penalty => {
            let prep = prepare(&s, &file, &a.level)?;
            let traj = integrate_forward(&prep.b.spec, &prep.control, &prep.level, &prep.b.x0, &s.integrator)
                .op("integrate_forward")?;
            let max_xi = traj.xi.iter().copied().fold(0.0, f64::max);
            summary = json!({
                "problem": s.problem,
                "method": "penalty",
                "level": prep.level,
                "nodes": traj.len(),
                "max_xi": max_xi,
                "xi_bound": prep.report.xi_bound(),
                "final_state": traj.final_state().as_slice(),
                "cost": prep.b.spec.cost.value(traj.final_state()),
            });
            traj
        }
        Method::Catchup => {
            let steps = check_at_least("steps", a.steps.or(file.steps).unwrap_or(20_000), 100)?;
            let b = load(&s)?;
            let u = control(&b, a.level.switch.or(file.switch))?;
            let traj = catchup_simulate(&b.spec, &u, &b.x0, steps).op("catchup_simulate")?;
            summary = json!({
                "problem": s.problem,
                "method": "catchup",
                "steps": steps,
                "final_state": traj.final_state().as_slice(),
                "cost": b.spec.cost.value(traj.final_state()),
            });
            traj
        }
    };
    write_trajectory(&s.out, "trajectory.csv", &traj)?;
    write_json(&s.out, "summary.json", &summary)?;
    println!("{} nodes, x(T) = {:?}", traj.len(), traj.final_state().as_slice());
    Ok(true)
}

#[derive(Debug, Args)]
pub struct ConvergeArgs {
    #[command(flatten)]
    pub common: Common,
    /// Catch-up steps of the reference solution.
    #[arg(long)]
    pub oracle_steps: Option<usize>,
    /// Points of the sup-norm comparison grid.
    #[arg(long)]
    pub compare_points: Option<usize>,
    /// Bang-bang control: max U up to this time, min U afterwards.
    #[arg(long = "switch", allow_negative_numbers = true)]
    pub switch: Option<f64>,
}

pub fn converge(a: &ConvergeArgs) -> Result<bool, CliError> {
    let (s, file) = resolve(&a.common)?;
    let b = load(&s)?;
    let u = control(&b, a.switch.or(file.switch))?;
    let report = assumptions(&s, &b)?;
    let sched = schedule(&s, &report)?;
    let opts = FamilyOptions {
        oracle_steps: check_at_least("oracle_steps", a.oracle_steps.or(file.oracle_steps).unwrap_or(20_000), 100)?,
        compare_points: check_at_least("compare_points", a.compare_points.or(file.compare_points).unwrap_or(2001), 2)?,
        integrator: s.integrator.clone(),
        exec: s.exec,
    };
    let fam = run_family(&b.spec, &u, &sched, &b.x0, &opts).op("run_family")?;
    if let Some(oracle) = &fam.oracle {
        write_trajectory(&s.out, "oracle.csv", oracle)?;
    }
    for (m, traj) in fam.members.iter().zip(&fam.trajectories) {
        if let Some(traj) = traj {
            write_trajectory(&s.out, &format!("level_{}.csv", m.k), traj)?;
        }
        match (m.sup_gap, &m.error) {
            (Some(gap), _) => println!("k={} gamma={:.6e} sigma={:.6e} gap={gap:.6e}", m.k, m.gamma, m.sigma),
            (None, Some(e)) => println!("k={} gamma={:.6e} failed: {e}", m.k, m.gamma),
            (None, None) => {}
        }
    }
    write_json(
        &s.out,
        "family.json",
        &json!({ "problem": s.problem, "schedule": sched, "family": fam }),
    )?;
    Ok(fam.monotone && fam.members.iter().all(|m| m.error.is_none()))
}

#[derive(Debug, Args)]
pub struct AdjointArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub level: LevelArgs,
    #[command(flatten)]
    pub costate: CostateArgs,
}

pub fn adjoint(a: &AdjointArgs) -> Result<bool, CliError> {
    let (s, file) = resolve(&a.common)?;
    let prep = prepare(&s, &file, &a.level)?;
    let (lambda, p_t) = costate(&a.costate, &file, prep.b.spec.state_dim())?;
    if lambda + p_t.norm() == 0.0 {
        return Err(CliError::Config("lambda + |pT| must be positive".into()));
    }
    let traj = integrate_forward(&prep.b.spec, &prep.control, &prep.level, &prep.b.x0, &s.integrator)
        .op("integrate_forward")?;
    let arc = backward_arc(&prep, &traj, lambda, &p_t)?;
    let profile = multiplier_profile(&arc, &traj, 1e-2).op("multiplier_profile")?;
    write_trajectory(&s.out, "trajectory.csv", &traj)?;
    write_arc(&s.out, "adjoint.csv", &arc)?;
    let growth = arc.diagnostics.growth_ratio;
    write_json(
        &s.out,
        "adjoint.json",
        &json!({
            "problem": s.problem,
            "level": prep.level,
            "lambda": arc.lambda,
            "p_T": arc.terminal().as_slice(),
            "diagnostics": arc.diagnostics,
            "xi_bound": prep.report.xi_bound(),
            "eta_tv_outside_ib": profile.eta_tv,
            "max_xi_in_ib": profile.max_xi_in_ib,
            "ib_bound": profile.ib_bound,
            "ib_exponentially_small": profile.ib_exponentially_small,
        }),
    )?;
    println!("|p(0)| = {:.6e}, growth ratio = {growth:?}", arc.initial().norm());
    Ok(true)
}

#[derive(Debug, Args)]
pub struct CheckMpArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub level: LevelArgs,
    #[command(flatten)]
    pub costate: CostateArgs,
    /// Weight of the alpha|u - u_hat| term in the maximization condition.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Score this trajectory CSV instead of a fresh penalty solve.
    #[arg(long, value_name = "FILE")]
    pub trajectory: Option<PathBuf>,
}

pub fn check_mp(a: &CheckMpArgs) -> Result<bool, CliError> {
    let (s, file) = resolve(&a.common)?;
    let alpha = a.alpha.or(file.alpha).unwrap_or(0.0);
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(CliError::Config(format!("alpha must be nonnegative, got {alpha}")));
    }
    let prep = prepare(&s, &file, &a.level)?;
    let (lambda, p_t) = costate(&a.costate, &file, prep.b.spec.state_dim())?;
    let traj = match a.trajectory.clone().or(file.trajectory.clone()) {
        Some(path) => {
            let f = fs::File::open(&path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            Trajectory::read_csv(BufReader::new(f)).op("Trajectory::read_csv")?
        }
        None => integrate_forward(&prep.b.spec, &prep.control, &prep.level, &prep.b.x0, &s.integrator)
            .op("integrate_forward")?,
    };
    let arc = backward_arc(&prep, &traj, lambda, &p_t)?;
    let inputs = MpInputs {
        alpha,
        xi_bound: Some(prep.report.xi_bound()),
        ..MpInputs::new(&prep.b.spec, &traj, &arc)
    };
    let report = assemble_report(&inputs).op("assemble_report")?;
    write_json(&s.out, "mp_report.json", &report)?;
    print_verdict(&report.verdict.failed);
    Ok(report.passed())
}

fn print_verdict(failed: &[&str]) {
    if failed.is_empty() {
        println!("all conditions pass");
    } else {
        println!("failed: {}", failed.join(", "));
    }
}

#[derive(Debug, Args)]
pub struct Example1Args {
    #[command(flatten)]
    pub common: Common,
    /// Magnitude of the lower control bound.
    #[arg(long)]
    pub mu_ctrl: Option<f64>,
    /// Intervals of the closed-form trajectory.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Steps of the catch-up simulation.
    #[arg(long)]
    pub catchup_steps: Option<usize>,
}

pub fn example1(a: &Example1Args) -> Result<bool, CliError> {
    let (mut s, file) = resolve(&a.common)?;
    s.problem = "example1".into();
    if let Some(mu) = a.mu_ctrl {
        s.params.insert("mu_ctrl".into(), mu);
    }
    let b = load(&s)?;
    let params = b.example1.clone().expect("example1 carries its parameters");
    let steps = check_at_least("steps", a.steps.or(file.steps).unwrap_or(2000), 2)?;
    let catchup_steps = check_at_least("catchup_steps", a.catchup_steps.or(file.catchup_steps).unwrap_or(20_000), 100)?;

    let closed = params.optimal_trajectory(&b.spec, steps).op("optimal_trajectory")?;
    let sim = catchup_simulate(&b.spec, &b.control, &b.x0, catchup_steps).op("catchup_simulate")?;
    let cert = degenerate_certificate(&closed).op("degenerate_certificate")?;
    let report = assemble_report(&MpInputs::new(&b.spec, &closed, &cert)).op("assemble_report")?;

    write_json(&s.out, "params.json", &params)?;
    write_trajectory(&s.out, "trajectory.csv", &closed)?;
    write_trajectory(&s.out, "catchup.csv", &sim)?;
    write_arc(&s.out, "certificate.csv", &cert)?;
    write_json(&s.out, "mp_report.json", &report)?;

    let rows = [
        ("t1", params.t1),
        ("t2", params.t2),
        ("tstar", params.tstar),
        ("tau", params.tau),
        ("theta", params.theta),
        ("T", params.horizon),
        ("r_T", params.r_t),
        ("Delta", params.delta),
    ];
    for (name, v) in rows {
        println!("{name:>6} = {v:.17e}");
    }
    print_verdict(&report.verdict.failed);
    Ok(report.passed())
}

#[derive(Debug, Args)]
pub struct Example2Args {
    #[command(flatten)]
    pub common: Common,
    /// Magnitude of the lower control bound.
    #[arg(long)]
    pub mu_ctrl: Option<f64>,
    /// Drift coefficient in the second state equation.
    #[arg(long)]
    pub sigma_drift: Option<f64>,
    /// Switch times on the search grid (at least 100).
    #[arg(long)]
    pub switch_points: Option<usize>,
    /// Catch-up steps per candidate.
    #[arg(long)]
    pub catchup_steps: Option<usize>,
    /// Random admissible controls to compare against.
    #[arg(long)]
    pub adversaries: Option<usize>,
}

pub fn example2(a: &Example2Args) -> Result<bool, CliError> {
    let (mut s, file) = resolve(&a.common)?;
    s.problem = "example2".into();
    if let Some(mu) = a.mu_ctrl {
        s.params.insert("mu_ctrl".into(), mu);
    }
    if let Some(sd) = a.sigma_drift {
        s.params.insert("sigma_drift".into(), sd);
    }
    let b = load(&s)?;
    let sigma_drift = b.params["sigma_drift"];
    let d = SearchOptions::default();
    let opts = SearchOptions {
        switch_points: check_at_least("switch_points", a.switch_points.or(file.switch_points).unwrap_or(d.switch_points), 100)?,
        catchup_steps: check_at_least("catchup_steps", a.catchup_steps.or(file.catchup_steps).unwrap_or(d.catchup_steps), 100)?,
        adversaries: a.adversaries.or(file.adversaries).unwrap_or(d.adversaries),
        seed: s.seed,
        exec: s.exec,
        ..d
    };
    let search = example2_search(&b.spec, &b.x0, &opts).op("example2_search")?;
    let traj = &search.best_trajectory;

    // costates vanishing on a terminal interval must be rejected
    let from = 0.5 * (search.best_switch + b.spec.horizon);
    let mut candidates = Vec::new();
    for (lambda, q) in [(1.0, 0.0), (0.0, 0.0), (0.5, -0.5), (0.2, 0.8), (0.0, 1.0)] {
        let arc = vanishing_costate_candidate(traj, sigma_drift, from, lambda, q).op("vanishing_costate_candidate")?;
        let report = assemble_report(&MpInputs::new(&b.spec, traj, &arc)).op("assemble_report")?;
        candidates.push(json!({ "lambda": lambda, "q": q, "vanishing_from": from, "report": report }));
    }
    let all_rejected = candidates.iter().all(|c| c["report"]["verdict"]["pass"] == false);

    write_json(&s.out, "search.json", &search)?;
    write_trajectory(&s.out, "trajectory.csv", traj)?;
    write_json(&s.out, "candidates.json", &candidates)?;
    println!(
        "switch = {:.17e}, cost = {:.17e}, beats {} adversaries: {}",
        search.best_switch,
        search.best_cost,
        search.adversaries.len(),
        search.beats_adversaries
    );
    println!("vanishing-costate candidates rejected: {all_rejected}");
    Ok(search.beats_adversaries && all_rejected)
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub common: Common,
}

pub fn validate(a: &ValidateArgs) -> Result<bool, CliError> {
    let (s, _) = resolve(&a.common)?;
    let b = load(&s)?;
    let report = assumptions(&s, &b)?;
    write_json(&s.out, "assumptions.json", &report)?;
    for c in &report.checks {
        println!("{:<22} {:?}: {}", c.name, c.status, c.detail);
    }
    println!("M = {:.6}, eta = {:.6}, mu = {:.6}, mu/eta^2 = {:.6}", report.m_bound, report.eta, report.mu, report.xi_bound());
    Ok(report.passed())
}
