//! Residuals of the Maximum Principle conditions for a candidate
//! `(trajectory, control, λ, adjoint arc)`.
//!
//! * (a) nontriviality: `λ + |p(T)| > 0`;
//! * (b) adjoint identity: `dp = (−(∇_x f)ᵀ p + ξ ∇²ψ p) dt + ∇ψ dη`;
//! * (c) maximization of `⟨p, f(t, x̂, u)⟩` over `U`;
//! * (d) transversality at both endpoints.

use serde::Serialize;

use crate::adjoint::AdjointArc;
use crate::problem::{Cost, ProblemSpec};
use crate::sets::SimpleSet;
use crate::trajectory::Trajectory;
use crate::{Error, Result, Vector};

#[derive(Clone, Debug, Serialize)]
pub struct MpTolerances {
    pub nontriviality: f64,
    /// Scaled by `1 + |p|_∞ M`.
    pub maximization: f64,
    /// Scaled by `1 + |p|_∞`.
    pub transversality: f64,
    /// Scaled by `1 + |p|_∞`.
    pub adjoint: f64,
    /// Endpoint membership and boundary detection for `C0`, `CT`.
    pub set_tol: f64,
}

impl Default for MpTolerances {
    fn default() -> Self {
        MpTolerances {
            nontriviality: 1e-9,
            maximization: 1e-6,
            transversality: 1e-8,
            adjoint: 1e-6,
            set_tol: 1e-8,
        }
    }
}

fn check_grids(traj: &Trajectory, arc: &AdjointArc) -> Result<()> {
    if traj.len() != arc.len() || traj.grid.iter().zip(&arc.grid).any(|(a, b)| (a - b).abs() > 1e-14 * (1.0 + a.abs())) {
        return Err(Error::GridMismatch("trajectory and adjoint arc use different grids".into()));
    }
    Ok(())
}

/// `max_i [max_u (⟨p, f(t,x,u)⟩ − α|u − û|) − ⟨p, f(t,x,û)⟩]` at interval
/// midpoints, where `û` is the control on that interval. Never negative.
pub fn maximization_residual(p: &ProblemSpec, traj: &Trajectory, arc: &AdjointArc, u_samples: &[Vector], alpha: f64) -> Result<f64> {
    if u_samples.is_empty() {
        return Err(Error::EmptyControlSet);
    }
    if !(alpha >= 0.0) {
        return Err(Error::invalid("alpha must be nonnegative"));
    }
    check_grids(traj, arc)?;
    let mut worst = 0.0f64;
    for i in 0..traj.len() - 1 {
        let t = 0.5 * (traj.grid[i] + traj.grid[i + 1]);
        let x = traj.state_at(t);
        let pv = (&arc.p[i] + &arc.p[i + 1]) * 0.5;
        let u_hat = &traj.controls[i];
        let base = pv.dot(&p.dynamics.velocity(t, &x, u_hat));
        let best = u_samples
            .iter()
            .map(|u| pv.dot(&p.dynamics.velocity(t, &x, u)) - alpha * (u - u_hat).norm())
            .fold(f64::NEG_INFINITY, f64::max);
        worst = worst.max(best - base);
    }
    Ok(worst.max(0.0))
}

/// `(dist(p0, N_{C0}(x̂0)), min_g dist(−pT − λ g, N_{CT}(x̂T)))` over the
/// subgradients `g ∈ ∂φ(x̂T)`.
#[allow(clippy::too_many_arguments)]
pub fn transversality_residual(
    c0: &SimpleSet,
    ct: &SimpleSet,
    cost: &dyn Cost,
    x0: &Vector,
    xt: &Vector,
    p0: &Vector,
    pt: &Vector,
    lambda: f64,
    set_tol: f64,
) -> Result<(f64, f64)> {
    let r0 = c0
        .normal_cone_distance(x0, p0, set_tol)
        .map_err(|e| rename(e, "initial state"))?;
    let mut rt = f64::INFINITY;
    for g in cost.subgradients(xt) {
        let v = -pt - g * lambda;
        let d = ct
            .normal_cone_distance(xt, &v, set_tol)
            .map_err(|e| rename(e, "terminal state"))?;
        rt = rt.min(d);
    }
    Ok((r0, rt))
}

fn rename(e: Error, what: &'static str) -> Error {
    match e {
        Error::NotInSet { distance, .. } => Error::NotInSet { what, distance },
        other => other,
    }
}

/// `Σ_i |p_{i+1} − p_i − S_i − M_i|` where `S_i`, `M_i` are the smooth and
/// measure increments over `[t_i, t_{i+1}]`. Integrated arcs supply both;
/// for sampled arcs `S_i` is the trapezoid rule and `M_i = ∇ψ_avg Δη_i`.
pub fn adjoint_residual(p: &ProblemSpec, traj: &Trajectory, arc: &AdjointArc) -> Result<f64> {
    check_grids(traj, arc)?;
    if let (Some(s), Some(m)) = (&arc.smooth_increments, &arc.measure_increments) {
        return Ok((0..arc.len() - 1)
            .map(|i| (&arc.p[i + 1] - &arc.p[i] - &s[i] - &m[i]).norm())
            .sum());
    }
    let mut total = 0.0;
    for i in 0..arc.len() - 1 {
        let u = &traj.controls[i];
        let side = |j: usize| {
            let (t, x) = (traj.grid[j], &traj.states[j]);
            let ev = p.constraint.eval(t, x);
            let jac = p.dynamics.eval(t, x, u).jac_x;
            let g = -(jac.transpose() * &arc.p[j]) + (&ev.hess * &arc.p[j]) * arc.xi[j];
            (g, ev.grad)
        };
        let (g0, n0) = side(i);
        let (g1, n1) = side(i + 1);
        let dt = traj.grid[i + 1] - traj.grid[i];
        let r = &arc.p[i + 1] - &arc.p[i] - (g0 + g1) * (0.5 * dt) - (n0 + n1) * (0.5 * arc.deta[i]);
        total += r.norm();
    }
    Ok(total)
}

#[derive(Clone, Debug, Serialize)]
pub struct Condition {
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Condition {
    fn new(residual: f64, tolerance: f64) -> Self {
        Condition {
            residual,
            tolerance,
            pass: residual <= tolerance,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Nontriviality {
    /// `λ + |p(T)|`
    pub value: f64,
    pub lambda: f64,
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct Maximization {
    #[serde(flatten)]
    pub condition: Condition,
    pub alpha: f64,
    pub samples: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct Transversality {
    pub r0: Option<f64>,
    pub r_t: Option<f64>,
    pub tolerance: f64,
    pub pass: bool,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundDiagnostics {
    /// `μ/η²`, when known.
    pub star_bound: Option<f64>,
    pub max_xi: f64,
    pub star_holds: Option<bool>,
    pub measure_mass: f64,
    pub p_variation: f64,
    pub eta_variation: f64,
    pub k0: Option<f64>,
    pub growth_ratio: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Verdict {
    pub pass: bool,
    pub failed: Vec<&'static str>,
}

/// One block per condition, plus bound diagnostics and the overall verdict.
#[derive(Clone, Debug, Serialize)]
pub struct MpReport {
    pub nontriviality: Nontriviality,
    pub adjoint: Condition,
    pub maximization: Maximization,
    pub transversality: Transversality,
    pub bounds: BoundDiagnostics,
    pub verdict: Verdict,
}

impl MpReport {
    pub fn passed(&self) -> bool {
        self.verdict.pass
    }
}

pub struct MpInputs<'a> {
    pub problem: &'a ProblemSpec,
    pub traj: &'a Trajectory,
    pub arc: &'a AdjointArc,
    /// Defaults to the extreme points of `U`.
    pub u_samples: Option<Vec<Vector>>,
    pub alpha: f64,
    pub xi_bound: Option<f64>,
    pub tol: MpTolerances,
}

impl<'a> MpInputs<'a> {
    pub fn new(problem: &'a ProblemSpec, traj: &'a Trajectory, arc: &'a AdjointArc) -> Self {
        MpInputs {
            problem,
            traj,
            arc,
            u_samples: None,
            alpha: 0.0,
            xi_bound: None,
            tol: MpTolerances::default(),
        }
    }
}

/// Evaluates conditions (a)–(d) and the bound diagnostics.
///
/// Endpoints outside `C0` or `CT` fail transversality with the reason
/// recorded instead of aborting the report.
pub fn assemble_report(inp: &MpInputs) -> Result<MpReport> {
    let (p, traj, arc) = (inp.problem, inp.traj, inp.arc);
    check_grids(traj, arc)?;
    let samples = inp.u_samples.clone().unwrap_or_else(|| p.controls.extreme_points());
    let p_sup = arc.sup_norm();

    let value = arc.lambda + arc.terminal().norm();
    let nontriviality = Nontriviality {
        value,
        lambda: arc.lambda,
        threshold: inp.tol.nontriviality,
        pass: value >= inp.tol.nontriviality,
    };

    let adjoint = Condition::new(adjoint_residual(p, traj, arc)?, inp.tol.adjoint * (1.0 + p_sup));

    let mut m_bound = 0.0f64;
    for i in 0..traj.len() {
        for u in &samples {
            m_bound = m_bound.max(p.dynamics.velocity(traj.grid[i], &traj.states[i], u).norm());
        }
    }
    let maximization = Maximization {
        condition: Condition::new(
            maximization_residual(p, traj, arc, &samples, inp.alpha)?,
            inp.tol.maximization * (1.0 + p_sup * m_bound),
        ),
        alpha: inp.alpha,
        samples: samples.len(),
    };

    let t_tol = inp.tol.transversality * (1.0 + p_sup);
    let transversality = match transversality_residual(
        &p.initial_set,
        &p.terminal_set,
        p.cost.as_ref(),
        traj.initial_state(),
        traj.final_state(),
        arc.initial(),
        arc.terminal(),
        arc.lambda,
        inp.tol.set_tol,
    ) {
        Ok((r0, rt)) => Transversality {
            r0: Some(r0),
            r_t: Some(rt),
            tolerance: t_tol,
            pass: r0 <= t_tol && rt <= t_tol,
            error: None,
        },
        Err(e @ Error::NotInSet { .. }) => Transversality {
            r0: None,
            r_t: None,
            tolerance: t_tol,
            pass: false,
            error: Some(e.to_string()),
        },
        Err(e) => return Err(e),
    };

    let d = &arc.diagnostics;
    let max_xi = arc.xi.iter().copied().fold(0.0, f64::max);
    let bounds = BoundDiagnostics {
        star_bound: inp.xi_bound,
        max_xi,
        star_holds: inp.xi_bound.map(|b| max_xi <= b + 1e-6),
        measure_mass: d.measure_mass,
        p_variation: d.p_tv,
        eta_variation: d.eta_tv,
        k0: d.k0,
        growth_ratio: d.growth_ratio,
    };

    let mut failed = Vec::new();
    if !nontriviality.pass {
        failed.push("nontriviality");
    }
    if !adjoint.pass {
        failed.push("adjoint");
    }
    if !maximization.condition.pass {
        failed.push("maximization");
    }
    if !transversality.pass {
        failed.push("transversality");
    }
    Ok(MpReport {
        nontriviality,
        adjoint,
        maximization,
        transversality,
        bounds,
        verdict: Verdict {
            pass: failed.is_empty(),
            failed,
        },
    })
}
