//! Moreau catch-up scheme: a free Euler step followed by projection onto `C(t)`.
//!
//! This is the reference solution for the sweeping process. It shares no code
//! with the penalty integrator beyond the problem description.

use crate::problem::{ConstraintFn, ProblemSpec};
use crate::trajectory::{ControlSignal, Trajectory};
use crate::{Error, Matrix, Result, Vector};

#[derive(Clone, Debug)]
pub struct ProjectionResult {
    pub point: Vector,
    /// `s ≥ 0` with `y − point = s ∇_x ψ(t, point)`.
    pub multiplier: f64,
    pub active: bool,
}

#[derive(Clone, Debug)]
pub struct ProjectionOptions {
    /// Residual tolerance on the KKT system.
    pub tol: f64,
    /// Iterates with `|∇_x ψ|` below this are rejected (typically `η/2`).
    pub min_grad: f64,
    pub max_iter: usize,
}

impl Default for ProjectionOptions {
    fn default() -> Self {
        ProjectionOptions {
            tol: 1e-13,
            min_grad: 1e-8,
            max_iter: 100,
        }
    }
}

/// Nearest point to `y` in `{z : ψ(t, z) ≤ 0}`.
///
/// Uses the radial formula for discs and otherwise Newton's method on the KKT
/// system `z − y + s ∇ψ(z) = 0`, `ψ(z) = 0`.
pub fn project_onto_sublevel(
    c: &dyn ConstraintFn,
    t: f64,
    y: &Vector,
    opts: &ProjectionOptions,
) -> Result<ProjectionResult> {
    let psi_y = c.value(t, y);
    if psi_y <= 0.0 {
        return Ok(ProjectionResult {
            point: y.clone(),
            multiplier: 0.0,
            active: false,
        });
    }

    if let Some((center, rho)) = c.as_disc(t) {
        let d = y - &center;
        let dn = d.norm();
        let point = &center + d * (rho / dn);
        // y − z = s · 2(z − c) with |z − c| = ρ
        let multiplier = (dn - rho) / (2.0 * rho);
        return Ok(ProjectionResult {
            point,
            multiplier,
            active: true,
        });
    }

    kkt_newton(c, t, y, opts)
}

fn kkt_newton(c: &dyn ConstraintFn, t: f64, y: &Vector, opts: &ProjectionOptions) -> Result<ProjectionResult> {
    let n = y.len();
    let mut z = y.clone();
    let mut s = 0.0f64;

    let residual = |z: &Vector, s: f64| -> (Vector, f64, f64) {
        let ev = c.eval(t, z);
        let r1 = z - y + &ev.grad * s;
        let norm = (r1.norm_squared() + ev.value * ev.value).sqrt();
        (r1, ev.value, norm)
    };

    for _ in 0..opts.max_iter {
        let ev = c.eval(t, &z);
        let gnorm = ev.grad.norm();
        if gnorm < opts.min_grad {
            return Err(Error::ProjectionDegenerate { t, grad_norm: gnorm });
        }
        let r1 = &z - y + &ev.grad * s;
        let r2 = ev.value;
        let rnorm = (r1.norm_squared() + r2 * r2).sqrt();
        if r1.norm() <= opts.tol * (1.0 + y.norm()) && r2.abs() <= opts.tol && s >= 0.0 {
            return Ok(finish(c, t, z, s));
        }

        let mut jac = Matrix::zeros(n + 1, n + 1);
        let top = Matrix::identity(n, n) + &ev.hess * s;
        jac.view_mut((0, 0), (n, n)).copy_from(&top);
        for i in 0..n {
            jac[(i, n)] = ev.grad[i];
            jac[(n, i)] = ev.grad[i];
        }
        let mut rhs = Vector::zeros(n + 1);
        rhs.rows_mut(0, n).copy_from(&r1);
        rhs[n] = r2;
        let Some(step) = jac.lu().solve(&rhs) else {
            return Err(Error::ProjectionDiverged {
                t,
                y: y.iter().copied().collect(),
            });
        };

        // backtrack on the residual norm
        let mut alpha = 1.0;
        loop {
            let z_try = &z - step.rows(0, n) * alpha;
            let s_try = s - step[n] * alpha;
            let (_, _, norm_try) = residual(&z_try, s_try);
            if norm_try < rnorm || alpha < 1e-6 {
                z = z_try;
                s = s_try;
                break;
            }
            alpha *= 0.5;
        }
    }
    Err(Error::ProjectionDiverged {
        t,
        y: y.iter().copied().collect(),
    })
}

/// Pull a converged iterate onto the feasible side of the level set.
fn finish(c: &dyn ConstraintFn, t: f64, mut z: Vector, s: f64) -> ProjectionResult {
    for _ in 0..3 {
        let ev = c.eval(t, &z);
        if ev.value <= 0.0 {
            break;
        }
        let g2 = ev.grad.norm_squared();
        z -= &ev.grad * ((ev.value + 1e-15) / g2);
    }
    ProjectionResult {
        point: z,
        multiplier: s,
        active: true,
    }
}

/// Catch-up scheme `x_{i+1} = proj_{C(t_{i+1})}(x_i + h f(t_i, x_i, u(t_i)))`
/// on a uniform grid of `steps` intervals.
///
/// The `xi` column of the result holds `multiplier / h`, the discrete density
/// of the normal-cone term.
pub fn catchup_simulate(p: &ProblemSpec, u: &ControlSignal, x0: &Vector, steps: usize) -> Result<Trajectory> {
    if steps < 100 {
        return Err(Error::invalid(format!("catch-up needs at least 100 steps, got {steps}")));
    }
    let psi0 = p.constraint.value(0.0, x0);
    if psi0 > 1e-10 {
        return Err(Error::OutsideSet { t: 0.0, psi: psi0 });
    }
    let h = p.horizon / steps as f64;
    let opts = ProjectionOptions::default();

    let mut grid = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut psi = Vec::with_capacity(steps + 1);
    let mut xi = Vec::with_capacity(steps + 1);
    let mut controls = Vec::with_capacity(steps);

    grid.push(0.0);
    states.push(x0.clone());
    psi.push(psi0);
    xi.push(0.0);

    let mut x = x0.clone();
    for i in 0..steps {
        let t = i as f64 * h;
        let t_next = if i + 1 == steps { p.horizon } else { (i + 1) as f64 * h };
        let ui = u.value_at(t).clone();
        let y = &x + p.dynamics.velocity(t, &x, &ui) * (t_next - t);
        let r = project_onto_sublevel(p.constraint.as_ref(), t_next, &y, &opts)?;
        x = r.point;
        grid.push(t_next);
        psi.push(p.constraint.value(t_next, &x));
        xi.push(r.multiplier / (t_next - t));
        states.push(x.clone());
        controls.push(ui);
    }
    Trajectory::new(grid, states, None, psi, xi, controls)
}
