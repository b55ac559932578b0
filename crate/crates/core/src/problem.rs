//! Optimal-control problems over sweeping systems.
//!
//! A [`ProblemSpec`] bundles the dynamics `f`, the moving-set function `ψ`
//! (through [`ConstraintFn`]), the control set `U`, the endpoint sets, the
//! terminal cost and the horizon. [`validate_assumptions`] probes the standing
//! assumptions on a grid and measures the constants the penalty schedule
//! needs: the bound `M`, the band gradient floor `η` and the constant `μ`.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::catchup::{project_onto_sublevel, ProjectionOptions};
use crate::sets::{ControlSet, SimpleSet};
use crate::{Error, Execution, Matrix, Result, Vector};

/// States with `|ψ| ≤ BOUNDARY_TOL` count as boundary points.
pub const BOUNDARY_TOL: f64 = 1e-8;

/// `ψ` and the derivatives the penalty, adjoint and projection code need.
#[derive(Clone, Debug)]
pub struct ConstraintEval {
    pub value: f64,
    pub grad: Vector,
    pub hess: Matrix,
    /// `∂_t ψ`
    pub dt: f64,
    /// `∂_t ∇_x ψ`
    pub dt_grad: Vector,
}

/// The function `ψ(t, x)` whose zero sublevel set is `C(t)`.
pub trait ConstraintFn: Send + Sync {
    fn dim(&self) -> usize;

    fn eval(&self, t: f64, x: &Vector) -> ConstraintEval;

    fn value(&self, t: f64, x: &Vector) -> f64 {
        self.eval(t, x).value
    }

    /// `Some((center, radius))` when `ψ = |x − c|² − ρ(t)²`, which lets the
    /// projection use the radial formula.
    fn as_disc(&self, _t: f64) -> Option<(Vector, f64)> {
        None
    }
}

#[derive(Clone, Debug)]
pub struct DynamicsEval {
    pub velocity: Vector,
    /// `∇_x f`, one row per state component.
    pub jac_x: Matrix,
}

/// The controlled vector field `f(t, x, u)`.
pub trait Dynamics: Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn eval(&self, t: f64, x: &Vector, u: &Vector) -> DynamicsEval;

    fn velocity(&self, t: f64, x: &Vector, u: &Vector) -> Vector {
        self.eval(t, x, u).velocity
    }
}

/// Terminal cost `φ(x)` with a sample of its limiting subdifferential.
pub trait Cost: Send + Sync {
    fn value(&self, x: &Vector) -> f64;
    /// Nonempty list of subgradients; a single gradient for smooth costs.
    fn subgradients(&self, x: &Vector) -> Vec<Vector>;
}

/// `ψ(t, x) = |x − c|² − ρ(t)²`.
#[derive(Clone)]
pub struct MovingDisc {
    center: Vector,
    radius: Arc<dyn Fn(f64) -> (f64, f64) + Send + Sync>,
}

impl MovingDisc {
    /// `radius(t)` returns `(ρ(t), ρ̇(t))`.
    pub fn new(center: Vector, radius: impl Fn(f64) -> (f64, f64) + Send + Sync + 'static) -> Self {
        MovingDisc {
            center,
            radius: Arc::new(radius),
        }
    }

    pub fn radius(&self, t: f64) -> f64 {
        (self.radius)(t).0
    }
}

impl ConstraintFn for MovingDisc {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn eval(&self, t: f64, x: &Vector) -> ConstraintEval {
        let (rho, rho_dot) = (self.radius)(t);
        let d = x - &self.center;
        let n = d.len();
        ConstraintEval {
            value: d.norm_squared() - rho * rho,
            grad: d * 2.0,
            hess: Matrix::identity(n, n) * 2.0,
            dt: -2.0 * rho * rho_dot,
            dt_grad: Vector::zeros(n),
        }
    }

    fn value(&self, t: f64, x: &Vector) -> f64 {
        let rho = (self.radius)(t).0;
        (x - &self.center).norm_squared() - rho * rho
    }

    fn as_disc(&self, t: f64) -> Option<(Vector, f64)> {
        Some((self.center.clone(), (self.radius)(t).0))
    }
}

/// `f(t, x, u) = A x + B u`.
#[derive(Clone, Debug)]
pub struct LinearDynamics {
    pub a: Matrix,
    pub b: Matrix,
}

impl Dynamics for LinearDynamics {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn control_dim(&self) -> usize {
        self.b.ncols()
    }

    fn eval(&self, _t: f64, x: &Vector, u: &Vector) -> DynamicsEval {
        DynamicsEval {
            velocity: &self.a * x + &self.b * u,
            jac_x: self.a.clone(),
        }
    }

    fn velocity(&self, _t: f64, x: &Vector, u: &Vector) -> Vector {
        &self.a * x + &self.b * u
    }
}

/// `φ(x) = ⟨c, x⟩`.
#[derive(Clone, Debug)]
pub struct LinearCost {
    pub c: Vector,
}

impl Cost for LinearCost {
    fn value(&self, x: &Vector) -> f64 {
        self.c.dot(x)
    }

    fn subgradients(&self, _x: &Vector) -> Vec<Vector> {
        vec![self.c.clone()]
    }
}

/// Problem (P): minimize `φ(x(T))` over the controlled sweeping process with
/// `(x(0), x(T)) ∈ C0 × CT`.
#[derive(Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub dynamics: Arc<dyn Dynamics>,
    pub constraint: Arc<dyn ConstraintFn>,
    pub controls: ControlSet,
    pub initial_set: SimpleSet,
    pub terminal_set: SimpleSet,
    pub cost: Arc<dyn Cost>,
    pub horizon: f64,
    /// Box in state space that contains `C(t) + B_n` for every `t`; assumption
    /// probes are drawn from it.
    pub probe_box: (Vector, Vector),
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("controls", &self.controls)
            .field("initial_set", &self.initial_set)
            .field("terminal_set", &self.terminal_set)
            .field("horizon", &self.horizon)
            .finish_non_exhaustive()
    }
}

impl ProblemSpec {
    pub fn state_dim(&self) -> usize {
        self.dynamics.state_dim()
    }

    pub fn control_dim(&self) -> usize {
        self.dynamics.control_dim()
    }

    /// Basic shape checks: matching dimensions, positive horizon, valid sets.
    pub fn check(&self) -> Result<()> {
        let n = self.state_dim();
        if self.constraint.dim() != n {
            return Err(Error::invalid("constraint and dynamics dimensions differ"));
        }
        if self.controls.is_empty() {
            return Err(Error::EmptyControlSet);
        }
        if self.controls.dim() != self.control_dim() {
            return Err(Error::invalid("control set and dynamics control dimension differ"));
        }
        if self.initial_set.dim() != n || self.terminal_set.dim() != n {
            return Err(Error::invalid("endpoint set dimension differs from the state dimension"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::invalid(format!("horizon must be positive, got {}", self.horizon)));
        }
        let (lo, hi) = &self.probe_box;
        if lo.len() != n || hi.len() != n || lo.iter().zip(hi.iter()).any(|(l, h)| !(l < h)) {
            return Err(Error::invalid("probe box must satisfy lo < hi in every coordinate"));
        }
        Ok(())
    }

    /// The natural starting state: the point, ball center or box midpoint of `C0`.
    pub fn nominal_initial_state(&self) -> Vector {
        self.initial_set.nominal()
    }
}

/// Probe densities for [`validate_assumptions`].
#[derive(Clone, Debug)]
pub struct ProbeGrid {
    pub time_samples: usize,
    pub state_per_axis: usize,
    pub control_per_axis: usize,
    /// Band width `β` in `{ψ ≥ −β}`.
    pub beta: f64,
    pub exec: Execution,
}

impl Default for ProbeGrid {
    fn default() -> Self {
        ProbeGrid {
            time_samples: 64,
            state_per_axis: 64,
            control_per_axis: 5,
            beta: 0.01,
            exec: Execution::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    NotVerified,
}

#[derive(Clone, Debug, Serialize)]
pub struct AssumptionCheck {
    pub name: &'static str,
    pub status: CheckStatus,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct AssumptionReport {
    pub checks: Vec<AssumptionCheck>,
    /// Measured bound on `|f|` and `|∇_x f|`.
    pub m_bound: f64,
    /// Largest `η` with `|∇_x ψ| > η` on the probed band.
    pub eta: f64,
    pub beta: f64,
    /// `max(|∇_x ψ||f| + |∂_t ψ|) + 1` over the probed region.
    pub mu: f64,
    /// Lipschitz estimate of the cost from subgradient norms.
    pub lipschitz_cost: f64,
    pub time_samples: usize,
    pub state_per_axis: usize,
    pub control_samples: usize,
}

impl AssumptionReport {
    /// The multiplier bound `μ/η²`.
    pub fn xi_bound(&self) -> f64 {
        self.mu / (self.eta * self.eta)
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != CheckStatus::Fail)
    }

    pub fn status(&self, name: &str) -> Option<CheckStatus> {
        self.checks.iter().find(|c| c.name == name).map(|c| c.status)
    }
}

#[derive(Default)]
struct SliceStats {
    m_bound: f64,
    mu_core: f64,
    region_points: usize,
    eta: f64,
    band_candidates: Vec<(f64, f64, Vector)>,
    box_boundary_min_psi: f64,
}

const CANDIDATES: usize = 16;

fn push_candidate(list: &mut Vec<(f64, f64, Vector)>, c: (f64, f64, Vector)) {
    if list.len() < CANDIDATES {
        list.push(c);
    } else if let Some(worst) = list
        .iter_mut()
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .filter(|w| w.0 > c.0)
    {
        *worst = c;
    }
}

fn spectral_norm(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(0.0f64, |a, &b| a.max(b))
}

/// Probes the standing assumptions on a grid and measures `M`, `η` and `μ`.
///
/// `μ` and `M` are suprema over `[0,T] × (C(t)+B_n) × U` taken on the probe
/// grid; `η` is the minimum of `|∇_x ψ|` over band probes together with points
/// pulled onto the level set `ψ = −β`.
pub fn validate_assumptions(p: &ProblemSpec, grid: &ProbeGrid) -> Result<AssumptionReport> {
    p.check()?;
    if grid.time_samples < 10 || grid.state_per_axis < 10 {
        return Err(Error::invalid("probe grid needs at least 10 samples per axis"));
    }
    if !(grid.beta > 0.0) {
        return Err(Error::invalid("band width beta must be positive"));
    }
    let n = p.state_dim();
    let k = grid.state_per_axis;
    let total = (k as f64).powi(n as i32);
    if total > 4.0e6 {
        return Err(Error::invalid(format!(
            "state probe grid of {total} points is too large; lower state_per_axis"
        )));
    }
    let (lo, hi) = &p.probe_box;
    let states: Vec<(Vector, bool)> = (0..total as usize)
        .map(|idx| {
            let mut rem = idx;
            let mut on_face = false;
            let x = Vector::from_iterator(
                n,
                (0..n).map(|i| {
                    let j = rem % k;
                    rem /= k;
                    on_face |= j == 0 || j == k - 1;
                    lo[i] + (hi[i] - lo[i]) * j as f64 / (k - 1) as f64
                }),
            );
            (x, on_face)
        })
        .collect();
    let cell = (hi - lo).norm() / (k - 1) as f64;
    let controls = p.controls.samples(grid.control_per_axis);
    let beta = grid.beta;
    let proj = ProjectionOptions {
        tol: 1e-12,
        min_grad: 1e-12,
        max_iter: 100,
    };

    let slices = grid.exec.map_range(grid.time_samples, |ti| {
        let t = p.horizon * ti as f64 / (grid.time_samples - 1) as f64;
        let mut s = SliceStats {
            eta: f64::INFINITY,
            box_boundary_min_psi: f64::INFINITY,
            ..Default::default()
        };
        for (x, on_face) in &states {
            let ev = p.constraint.eval(t, x);
            let gnorm = ev.grad.norm();
            if *on_face {
                s.box_boundary_min_psi = s.box_boundary_min_psi.min(ev.value);
            }
            if ev.value >= -beta {
                s.eta = s.eta.min(gnorm);
                push_candidate(&mut s.band_candidates, (gnorm, t, x.clone()));
            }
            // pull probes within about one cell of the level set onto it
            if (ev.value + beta).abs() <= 2.0 * gnorm * cell && gnorm > 0.0 {
                if let Some(g) = level_set_gradient(p, t, x, -beta, lo, hi) {
                    s.eta = s.eta.min(g);
                }
            }
            let inside = if ev.value <= 0.0 {
                true
            } else {
                match project_onto_sublevel(p.constraint.as_ref(), t, x, &proj) {
                    Ok(r) => (x - r.point).norm() <= 1.0,
                    // conservative: keep the probe, which can only raise μ
                    Err(_) => true,
                }
            };
            if !inside {
                continue;
            }
            s.region_points += 1;
            for u in &controls {
                let de = p.dynamics.eval(t, x, u);
                let fnorm = de.velocity.norm();
                s.m_bound = s.m_bound.max(fnorm).max(spectral_norm(&de.jac_x));
                s.mu_core = s.mu_core.max(gnorm * fnorm + ev.dt.abs());
            }
        }
        s
    });

    let mut m_bound = 0.0f64;
    let mut mu_core = 0.0f64;
    let mut eta = f64::INFINITY;
    let mut region_points = 0usize;
    let mut candidates: Vec<(f64, f64, Vector)> = Vec::new();
    let mut box_min_psi = f64::INFINITY;
    for s in slices {
        m_bound = m_bound.max(s.m_bound);
        mu_core = mu_core.max(s.mu_core);
        eta = eta.min(s.eta);
        region_points += s.region_points;
        box_min_psi = box_min_psi.min(s.box_boundary_min_psi);
        for c in s.band_candidates {
            push_candidate(&mut candidates, c);
        }
    }

    // a critical point of ψ inside the band makes the gradient bound fail outright
    for (_, t, x0) in &candidates {
        if let Some((xc, psi)) = critical_point(p, *t, x0) {
            if psi >= -beta {
                let g = p.constraint.eval(*t, &xc).grad.norm();
                return Err(Error::VanishingGradient {
                    t: *t,
                    x: xc.iter().copied().collect(),
                    psi,
                    grad_norm: g,
                });
            }
        }
    }
    if !(eta > 1e-12) {
        let (g, t, x) = candidates
            .iter()
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .cloned()
            .unwrap_or((0.0, 0.0, Vector::zeros(n)));
        let psi = p.constraint.value(t, &x);
        return Err(Error::VanishingGradient {
            t,
            x: x.iter().copied().collect(),
            psi,
            grad_norm: g,
        });
    }

    let mut checks = Vec::new();
    checks.push(AssumptionCheck {
        name: "bounded_dynamics",
        status: if m_bound.is_finite() && region_points > 0 {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        },
        detail: format!("M = {m_bound:.6} over {region_points} (t, x) probes"),
    });
    checks.push(check_convex_images(p, &states, &controls));
    checks.push(AssumptionCheck {
        name: "nondegenerate_gradient",
        status: if box_min_psi > 0.0 {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        },
        detail: format!(
            "eta = {eta:.6} on the band psi >= -{beta}; min psi on probe-box faces = {box_min_psi:.4e}"
        ),
    });
    checks.push(AssumptionCheck {
        name: "compact_controls",
        status: CheckStatus::Pass,
        detail: match &p.controls {
            ControlSet::Box { .. } => "U is a bounded box".into(),
            ControlSet::Finite { values } => format!("U is a finite list of {} values", values.len()),
        },
    });
    checks.push(AssumptionCheck {
        name: "endpoint_sets",
        status: CheckStatus::Pass,
        detail: "endpoint sets are points, closed balls or boxes".into(),
    });
    let mut lipschitz_cost = 0.0f64;
    for (x, _) in states.iter().step_by(7) {
        for g in p.cost.subgradients(x) {
            lipschitz_cost = lipschitz_cost.max(g.norm());
        }
    }
    checks.push(AssumptionCheck {
        name: "lipschitz_cost",
        status: if lipschitz_cost.is_finite() {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        },
        detail: format!("L_phi >= {lipschitz_cost:.6}"),
    });
    for (name, set, t) in [
        ("initial_set_inside", &p.initial_set, 0.0),
        ("terminal_set_inside", &p.terminal_set, p.horizon),
    ] {
        let worst = set
            .boundary_probes()
            .iter()
            .map(|x| p.constraint.value(t, x))
            .fold(f64::NEG_INFINITY, f64::max);
        checks.push(AssumptionCheck {
            name,
            status: if worst <= 1e-9 {
                CheckStatus::Pass
            } else {
                CheckStatus::Fail
            },
            detail: format!("max psi over set boundary probes = {worst:.4e}"),
        });
    }

    Ok(AssumptionReport {
        checks,
        m_bound,
        eta,
        beta,
        mu: mu_core + 1.0,
        lipschitz_cost,
        time_samples: grid.time_samples,
        state_per_axis: grid.state_per_axis,
        control_samples: controls.len(),
    })
}

/// Newton along the gradient onto `ψ(t, ·) = level`; returns `|∇ψ|` there.
fn level_set_gradient(p: &ProblemSpec, t: f64, x0: &Vector, level: f64, lo: &Vector, hi: &Vector) -> Option<f64> {
    let mut x = x0.clone();
    for _ in 0..30 {
        let ev = p.constraint.eval(t, &x);
        let r = ev.value - level;
        let g2 = ev.grad.norm_squared();
        if g2 == 0.0 {
            return None;
        }
        if r.abs() <= 1e-13 * (1.0 + level.abs()) {
            let inside_box = x.iter().enumerate().all(|(i, &v)| v >= lo[i] && v <= hi[i]);
            return inside_box.then(|| g2.sqrt());
        }
        x -= ev.grad * (r / g2);
    }
    None
}

/// Newton on `∇_x ψ(t, ·) = 0`; returns the critical point and `ψ` there.
fn critical_point(p: &ProblemSpec, t: f64, x0: &Vector) -> Option<(Vector, f64)> {
    let mut x = x0.clone();
    for _ in 0..60 {
        let ev = p.constraint.eval(t, &x);
        if ev.grad.norm() <= 1e-10 {
            return Some((x, ev.value));
        }
        let step = ev.hess.lu().solve(&ev.grad)?;
        if !step.iter().all(|v| v.is_finite()) {
            return None;
        }
        x -= step;
    }
    None
}

fn check_convex_images(p: &ProblemSpec, states: &[(Vector, bool)], controls: &[Vector]) -> AssumptionCheck {
    match &p.controls {
        ControlSet::Finite { values } if values.len() > 1 => AssumptionCheck {
            name: "convex_velocities",
            status: CheckStatus::NotVerified,
            detail: "f(t,x,U) over a finite U is convex only in degenerate cases".into(),
        },
        ControlSet::Finite { .. } => AssumptionCheck {
            name: "convex_velocities",
            status: CheckStatus::Pass,
            detail: "single control value".into(),
        },
        ControlSet::Box { .. } => {
            // affine in u over a box ⇒ f(t, x, U) is a convex polytope
            let mut worst = 0.0f64;
            for (x, _) in states.iter().step_by(97) {
                for t in [0.0, 0.5 * p.horizon, p.horizon] {
                    for a in controls {
                        for b in controls.iter().rev().take(3) {
                            let mid = (a + b) * 0.5;
                            let fa = p.dynamics.velocity(t, x, a);
                            let fb = p.dynamics.velocity(t, x, b);
                            let fm = p.dynamics.velocity(t, x, &mid);
                            let dev = (fm - (fa + &fb) * 0.5).norm() / (1.0 + fb.norm());
                            worst = worst.max(dev);
                        }
                    }
                }
            }
            AssumptionCheck {
                name: "convex_velocities",
                status: if worst <= 1e-9 {
                    CheckStatus::Pass
                } else {
                    CheckStatus::NotVerified
                },
                detail: format!("max midpoint deviation from affinity in u = {worst:.3e}"),
            }
        }
    }
}

/// Normal-cone multiplier `ξ` keeping a boundary trajectory on `∂C(t)`:
/// `(⟨∇_x ψ, f⟩ + ∂_t ψ) / |∇_x ψ|²`, clipped at zero, and zero in the interior.
pub fn boundary_multiplier(p: &ProblemSpec, t: f64, x: &Vector, u: &Vector) -> Result<f64> {
    let ev = p.constraint.eval(t, x);
    if ev.value > BOUNDARY_TOL {
        return Err(Error::OutsideSet { t, psi: ev.value });
    }
    if ev.value < -BOUNDARY_TOL {
        return Ok(0.0);
    }
    let g2 = ev.grad.norm_squared();
    if g2 == 0.0 {
        return Err(Error::VanishingGradient {
            t,
            x: x.iter().copied().collect(),
            psi: ev.value,
            grad_norm: 0.0,
        });
    }
    let f = p.dynamics.velocity(t, x, u);
    Ok(((ev.grad.dot(&f) + ev.dt) / g2).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    #[test]
    fn multiplier_on_example1_boundary() {
        let p = registry::example1(0.05).unwrap().spec;
        let x = v(&[0.25, 3f64.sqrt() / 4.0]);
        let xi = boundary_multiplier(&p, 0.25, &x, &v(&[1.0])).unwrap();
        assert!((xi - 2.5).abs() < 1e-12, "xi = {xi}");
    }

    #[test]
    fn multiplier_vanishes_inside() {
        let p = registry::example1(0.05).unwrap().spec;
        let x = v(&[0.0, 3f64.sqrt() / 4.0]);
        assert_eq!(boundary_multiplier(&p, 0.0, &x, &v(&[1.0])).unwrap(), 0.0);
    }

    #[test]
    fn multiplier_clipped_for_inward_motion() {
        // at t = 0.75 the disc grows (ρ̇ = 2, ∂_tψ < 0); pushing inward gives a negative raw value
        let p = registry::example1(0.05).unwrap().spec;
        let rho = crate::examples::rho(0.75);
        let x = v(&[rho, 0.0]);
        let xi = boundary_multiplier(&p, 0.75, &x, &v(&[-0.05])).unwrap();
        assert_eq!(xi, 0.0);
    }

    #[test]
    fn multiplier_rejects_outside_state() {
        let p = registry::example1(0.05).unwrap().spec;
        let x = v(&[2.0, 0.0]);
        assert!(matches!(
            boundary_multiplier(&p, 0.0, &x, &v(&[1.0])),
            Err(Error::OutsideSet { .. })
        ));
    }

    #[test]
    fn probe_grid_too_coarse() {
        let p = registry::example1(0.05).unwrap().spec;
        let g = ProbeGrid {
            state_per_axis: 5,
            ..Default::default()
        };
        assert!(validate_assumptions(&p, &g).is_err());
    }
}
