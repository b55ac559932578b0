//! Forward integration of the penalized dynamics and penalty-family runs.

use serde::Serialize;

use crate::catchup::catchup_simulate;
use crate::ode::{self, OdeOptions};
use crate::penalty::{penalty_eval, PenaltyLevel, PenaltySchedule};
use crate::problem::ProblemSpec;
use crate::trajectory::{ControlSignal, Trajectory};
use crate::{Error, Execution, Result, Vector};

#[derive(Clone, Debug)]
pub struct IntegratorOptions {
    /// Local error tolerance per step (absolute and relative).
    pub tol: f64,
    pub max_steps: usize,
    /// Step cap `factor / λ` with `λ ≈ ξ (γ |∇ψ|² + |∇²ψ|)` the local decay rate.
    pub stiffness_factor: f64,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        IntegratorOptions {
            tol: 1e-8,
            max_steps: 20_000_000,
            stiffness_factor: 2.0,
        }
    }
}

fn check_control(p: &ProblemSpec, u: &ControlSignal) -> Result<()> {
    if (u.horizon() - p.horizon).abs() > 1e-12 * p.horizon.max(1.0) {
        return Err(Error::invalid(format!(
            "control ends at {} but the horizon is {}",
            u.horizon(),
            p.horizon
        )));
    }
    if u.dim() != p.control_dim() {
        return Err(Error::invalid("control dimension does not match the dynamics"));
    }
    Ok(())
}

/// Integrates `ẋ = f(t,x,u) − γ e^{γ(ψ−σ)} ∇ψ` from `x0` with adaptive
/// Dormand–Prince steps. The grid contains every control breakpoint.
pub fn integrate_forward(
    p: &ProblemSpec,
    u: &ControlSignal,
    level: &PenaltyLevel,
    x0: &Vector,
    opts: &IntegratorOptions,
) -> Result<Trajectory> {
    check_control(p, u)?;
    if !(opts.tol > 0.0) {
        return Err(Error::invalid("integrator tolerance must be positive"));
    }
    let psi0 = p.constraint.value(0.0, x0);
    if !level.in_inflated_set(psi0) {
        return Err(Error::InitialStateOutside {
            excess: psi0 - level.sigma,
            mu_k: level.mu_k,
        });
    }

    let ode_opts = OdeOptions {
        tol: opts.tol,
        max_steps: opts.max_steps,
        h_init: None,
    };
    let cap = |t: f64, y: &Vector| -> f64 {
        let ev = p.constraint.eval(t, y);
        match level.multiplier(t, ev.value) {
            Ok(xi) => {
                let rate = xi * (level.gamma * ev.grad.norm_squared() + ev.hess.norm());
                opts.stiffness_factor / rate.max(1e-300)
            }
            Err(_) => 0.0,
        }
    };

    let bps = u.breakpoints();
    let mut grid = Vec::new();
    let mut states = Vec::new();
    let mut velocities = Vec::new();
    let mut controls = Vec::new();
    let mut x = x0.clone();
    let mut budget = opts.max_steps;
    for (seg, w) in bps.windows(2).enumerate() {
        let useg = u.values()[seg].clone();
        let rhs = |t: f64, y: &Vector| penalty_eval(p, t, y, &useg, level).map(|e| e.velocity);
        let (nodes, stats) = ode::solve(
            rhs,
            cap,
            w[0],
            x.clone(),
            w[1],
            &OdeOptions {
                max_steps: budget,
                ..ode_opts.clone()
            },
            true,
        )?;
        budget = budget.saturating_sub(stats.accepted);
        let skip = usize::from(seg > 0);
        for node in nodes.into_iter().skip(skip) {
            // the node at a breakpoint carries the velocity of the incoming segment
            grid.push(node.t);
            states.push(node.y);
            velocities.push(node.dy);
        }
        let added = grid.len() - 1 - controls.len();
        controls.extend(std::iter::repeat_n(useg.clone(), added));
        x = states.last().unwrap().clone();
    }

    let mut psi = Vec::with_capacity(grid.len());
    let mut xi = Vec::with_capacity(grid.len());
    for (t, s) in grid.iter().zip(&states) {
        let v = p.constraint.value(*t, s);
        psi.push(v);
        xi.push(level.multiplier(*t, v)?);
    }
    Trajectory::new(grid, states, Some(velocities), psi, xi, controls)
}

/// Replays the penalized dynamics with fixed Dormand–Prince steps on `grid`,
/// which must contain every control breakpoint.
pub fn integrate_on_grid(
    p: &ProblemSpec,
    u: &ControlSignal,
    level: &PenaltyLevel,
    x0: &Vector,
    grid: &[f64],
) -> Result<Trajectory> {
    check_control(p, u)?;
    let mut states = vec![x0.clone()];
    let mut controls = Vec::with_capacity(grid.len());
    let mut x = x0.clone();
    for w in grid.windows(2) {
        let useg = u.value_at(w[0]).clone();
        let mut rhs = |t: f64, y: &Vector| penalty_eval(p, t, y, &useg, level).map(|e| e.velocity);
        x = ode::fixed_step(&mut rhs, w[0], &x, w[1] - w[0])?;
        states.push(x.clone());
        controls.push(useg);
    }
    let mut psi = Vec::with_capacity(grid.len());
    let mut xi = Vec::with_capacity(grid.len());
    for (t, s) in grid.iter().zip(&states) {
        let v = p.constraint.value(*t, s);
        psi.push(v);
        xi.push(level.multiplier(*t, v)?);
    }
    Trajectory::new(grid.to_vec(), states, None, psi, xi, controls)
}

/// Largest `|∇²_x ψ|` (spectral norm) along a trajectory.
pub fn max_hessian_norm(p: &ProblemSpec, traj: &Trajectory) -> f64 {
    traj.grid
        .iter()
        .zip(&traj.states)
        .map(|(t, x)| {
            let h = p.constraint.eval(*t, x).hess;
            h.svd(false, false).singular_values.max()
        })
        .fold(0.0, f64::max)
}

/// Largest `|∇_x ψ|` along a trajectory.
pub fn max_gradient_norm(p: &ProblemSpec, traj: &Trajectory) -> f64 {
    traj.grid
        .iter()
        .zip(&traj.states)
        .map(|(t, x)| p.constraint.eval(*t, x).grad.norm())
        .fold(0.0, f64::max)
}

/// Worst ratio `|x_{i+1} − x_i| / (bound · Δt)` over consecutive nodes.
pub fn speed_ratio(traj: &Trajectory, bound: f64) -> f64 {
    traj.grid
        .windows(2)
        .zip(traj.states.windows(2))
        .map(|(t, x)| (&x[1] - &x[0]).norm() / (bound * (t[1] - t[0])))
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, Serialize)]
pub struct ContractionReport {
    pub initial_offset: f64,
    /// `max_t log(|δ(t)|/|δ(0)|)/t`, floored at zero.
    pub rate: f64,
    pub max_ratio: f64,
    pub final_ratio: f64,
}

/// Integrates from `x0` and `x0 + delta` with identical controls and step
/// sequence, and measures the realized growth rate of the separation.
pub fn measure_contraction(
    p: &ProblemSpec,
    u: &ControlSignal,
    level: &PenaltyLevel,
    x0: &Vector,
    delta: &Vector,
    opts: &IntegratorOptions,
) -> Result<ContractionReport> {
    let reference = integrate_forward(p, u, level, x0, opts)?;
    let shifted = integrate_on_grid(p, u, level, &(x0 + delta), &reference.grid)?;
    let replay = integrate_on_grid(p, u, level, x0, &reference.grid)?;
    let d0 = delta.norm();
    let mut rate = 0.0f64;
    let mut max_ratio = 0.0f64;
    let mut last = 1.0;
    for i in 0..reference.len() {
        let ratio = (&shifted.states[i] - &replay.states[i]).norm() / d0;
        max_ratio = max_ratio.max(ratio);
        let t = reference.grid[i];
        if t > 0.0 && ratio > 0.0 {
            rate = rate.max(ratio.ln() / t);
        }
        last = ratio;
    }
    Ok(ContractionReport {
        initial_offset: d0,
        rate,
        max_ratio,
        final_ratio: last,
    })
}

#[derive(Clone, Debug)]
pub struct FamilyOptions {
    pub oracle_steps: usize,
    pub compare_points: usize,
    pub integrator: IntegratorOptions,
    pub exec: Execution,
}

impl Default for FamilyOptions {
    fn default() -> Self {
        FamilyOptions {
            oracle_steps: 20_000,
            compare_points: 2001,
            integrator: IntegratorOptions::default(),
            exec: Execution::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FamilyMember {
    pub k: usize,
    pub gamma: f64,
    pub sigma: f64,
    pub mu_k: f64,
    pub sup_gap: Option<f64>,
    /// `ε_k = |x_k(T) − x_ref(T)|`
    pub eps: Option<f64>,
    pub max_xi: Option<f64>,
    /// `max_t (ψ − σ_k − μ_k)`; nonpositive when the trajectory stays in `C^k(t)`.
    pub max_inflation_excess: Option<f64>,
    pub nodes: Option<usize>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct FamilyReport {
    pub members: Vec<FamilyMember>,
    pub oracle_steps: usize,
    pub compare_points: usize,
    pub xi_bound: f64,
    /// Gaps decrease strictly over the successful members.
    pub monotone: bool,
    /// Levels `k` whose gap did not improve on the previous successful level.
    pub non_monotone_at: Vec<usize>,
    #[serde(skip)]
    pub trajectories: Vec<Option<Trajectory>>,
    #[serde(skip)]
    pub oracle: Option<Trajectory>,
}

impl FamilyReport {
    pub fn gaps(&self) -> Vec<Option<f64>> {
        self.members.iter().map(|m| m.sup_gap).collect()
    }
}

/// Runs every schedule level with the same control and compares against the
/// catch-up solution. Failures at one level are recorded and do not stop the
/// others.
pub fn run_family(
    p: &ProblemSpec,
    u: &ControlSignal,
    schedule: &PenaltySchedule,
    x0: &Vector,
    opts: &FamilyOptions,
) -> Result<FamilyReport> {
    let psi0 = p.constraint.value(0.0, x0);
    if psi0 > 1e-10 {
        return Err(Error::OutsideSet { t: 0.0, psi: psi0 });
    }
    let oracle = catchup_simulate(p, u, x0, opts.oracle_steps)?;
    let levels = schedule.levels();
    let runs = opts.exec.map(&levels, |level| integrate_forward(p, u, level, x0, &opts.integrator));

    let mut members = Vec::with_capacity(levels.len());
    let mut trajectories = Vec::with_capacity(levels.len());
    for (k, (level, run)) in levels.iter().zip(runs).enumerate() {
        let mut m = FamilyMember {
            k: k + 1,
            gamma: level.gamma,
            sigma: level.sigma,
            mu_k: level.mu_k,
            sup_gap: None,
            eps: None,
            max_xi: None,
            max_inflation_excess: None,
            nodes: None,
            error: None,
        };
        match run {
            Ok(traj) => {
                m.sup_gap = Some(traj.sup_gap(&oracle, opts.compare_points));
                m.eps = Some((traj.final_state() - oracle.final_state()).norm());
                m.max_xi = Some(traj.xi.iter().copied().fold(0.0, f64::max));
                m.max_inflation_excess = Some(
                    traj.psi
                        .iter()
                        .map(|&v| v - level.sigma - level.mu_k)
                        .fold(f64::NEG_INFINITY, f64::max),
                );
                m.nodes = Some(traj.len());
                trajectories.push(Some(traj));
            }
            Err(e) => {
                m.error = Some(e.to_string());
                trajectories.push(None);
            }
        }
        members.push(m);
    }

    let mut non_monotone_at = Vec::new();
    let mut prev: Option<f64> = None;
    for m in &members {
        if let Some(g) = m.sup_gap {
            if prev.is_some_and(|p| g >= p) {
                non_monotone_at.push(m.k);
            }
            prev = Some(g);
        }
    }
    Ok(FamilyReport {
        monotone: non_monotone_at.is_empty(),
        non_monotone_at,
        members,
        oracle_steps: opts.oracle_steps,
        compare_points: opts.compare_points,
        xi_bound: schedule.xi_bound(),
        trajectories,
        oracle: Some(oracle),
    })
}
