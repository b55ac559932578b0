//! Backward integration of the penalized adjoint equation and extraction of
//! the multiplier `ξ` and the measure increments `Δη`.

use std::io::Write;

use serde::Serialize;

use crate::ode::{self, hermite};
use crate::penalty::PenaltyLevel;
use crate::problem::ProblemSpec;
use crate::trajectory::{fmt17, Trajectory};
use crate::{Error, Execution, Result, Vector};

/// Pieces of the adjoint right-hand side at one point.
#[derive(Clone, Debug)]
pub struct AdjointParts {
    /// `−(∇_x f)ᵀ p + ξ ∇²_x ψ p`
    pub smooth: Vector,
    /// `γ ξ ⟨∇_x ψ, p⟩`, the density of `η`.
    pub density: f64,
    pub grad: Vector,
    pub xi: f64,
}

impl AdjointParts {
    pub fn velocity(&self) -> Vector {
        &self.smooth + &self.grad * self.density
    }
}

pub fn adjoint_parts(p: &ProblemSpec, t: f64, x: &Vector, u: &Vector, costate: &Vector, level: &PenaltyLevel) -> Result<AdjointParts> {
    let ev = p.constraint.eval(t, x);
    let xi = level.multiplier(t, ev.value)?;
    let jac = p.dynamics.eval(t, x, u).jac_x;
    let smooth = -(jac.transpose() * costate) + (&ev.hess * costate) * xi;
    let density = level.gamma * xi * ev.grad.dot(costate);
    Ok(AdjointParts {
        smooth,
        density,
        grad: ev.grad,
        xi,
    })
}

/// `ṗ = −(∇_x f)ᵀ p + ξ ∇²_x ψ p + γ ξ ∇_x ψ ⟨∇_x ψ, p⟩` with `ξ = γ e^{γ(ψ−σ)}`.
pub fn adjoint_rhs(p: &ProblemSpec, t: f64, x: &Vector, u: &Vector, costate: &Vector, gamma: f64, sigma: f64) -> Result<Vector> {
    let level = PenaltyLevel::unchecked(gamma, sigma)?;
    adjoint_parts(p, t, x, u, costate, &level).map(|a| a.velocity())
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct AdjointDiagnostics {
    /// `λ + |p(T)|`
    pub normalization: f64,
    /// `max|∇_x f| + max ξ |∇²_x ψ|` along the run.
    pub k0: Option<f64>,
    /// `max_t |p(t)| / (e^{K₀(T−t)} |p(T)|)`; at most one when the growth bound holds.
    pub growth_ratio: Option<f64>,
    /// `Σ |p(t_{i+1}) − p(t_i)|`
    pub p_tv: f64,
    /// `Σ |Δη_i|`
    pub eta_tv: f64,
    /// `∫ γ ξ |∇_x ψ| |⟨∇_x ψ, p⟩| dt`
    pub measure_mass: f64,
    pub max_xi: f64,
}

/// A costate arc on a trajectory grid.
///
/// `deta[i]` and the optional increments refer to `[grid[i], grid[i+1]]`.
/// Integrated arcs carry the exact split `p_{i+1} − p_i = smooth + measure`
/// accumulated by the integrator; sampled arcs leave it empty.
#[derive(Clone, Debug)]
pub struct AdjointArc {
    pub grid: Vec<f64>,
    pub p: Vec<Vector>,
    pub xi: Vec<f64>,
    pub deta: Vec<f64>,
    pub lambda: f64,
    pub level: Option<PenaltyLevel>,
    pub smooth_increments: Option<Vec<Vector>>,
    pub measure_increments: Option<Vec<Vector>>,
    pub diagnostics: AdjointDiagnostics,
}

impl AdjointArc {
    /// Arc from user-supplied samples, e.g. an analytic multiplier certificate.
    pub fn from_samples(grid: Vec<f64>, p: Vec<Vector>, xi: Vec<f64>, deta: Vec<f64>, lambda: f64) -> Result<Self> {
        let n = grid.len();
        if n < 2 || p.len() != n || xi.len() != n || deta.len() + 1 != n {
            return Err(Error::GridMismatch(format!(
                "grid {n}, p {}, xi {}, deta {}",
                p.len(),
                xi.len(),
                deta.len()
            )));
        }
        if !(lambda >= 0.0) {
            return Err(Error::invalid(format!("lambda must be nonnegative, got {lambda}")));
        }
        let mut arc = AdjointArc {
            grid,
            p,
            xi,
            deta,
            lambda,
            level: None,
            smooth_increments: None,
            measure_increments: None,
            diagnostics: AdjointDiagnostics::default(),
        };
        arc.diagnostics.normalization = lambda + arc.terminal().norm();
        arc.diagnostics.p_tv = arc.p_variation();
        arc.diagnostics.eta_tv = arc.deta.iter().map(|d| d.abs()).sum();
        arc.diagnostics.max_xi = arc.xi.iter().copied().fold(0.0, f64::max);
        Ok(arc)
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn terminal(&self) -> &Vector {
        self.p.last().unwrap()
    }

    pub fn initial(&self) -> &Vector {
        &self.p[0]
    }

    /// `max_i |p(t_i)|_∞`
    pub fn sup_norm(&self) -> f64 {
        self.p.iter().map(|v| v.amax()).fold(0.0, f64::max)
    }

    fn p_variation(&self) -> f64 {
        self.p.windows(2).map(|w| (&w[1] - &w[0]).norm()).sum()
    }

    /// Positive rescaling of `(λ, p, Δη)`; `ξ` is unchanged.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c > 0.0) {
            return Err(Error::invalid("scale factor must be positive"));
        }
        let mut out = self.clone();
        out.lambda *= c;
        out.p.iter_mut().for_each(|v| *v *= c);
        out.deta.iter_mut().for_each(|d| *d *= c);
        for incs in [&mut out.smooth_increments, &mut out.measure_increments].into_iter().flatten() {
            incs.iter_mut().for_each(|v| *v *= c);
        }
        let d = &mut out.diagnostics;
        d.normalization *= c;
        d.p_tv *= c;
        d.eta_tv *= c;
        d.measure_mass *= c;
        Ok(out)
    }

    /// Rescales so that `λ + |p(T)| = 1`.
    pub fn normalized(&self) -> Result<Self> {
        let s = self.lambda + self.terminal().norm();
        if !(s > 0.0) {
            return Err(Error::Normalization(s));
        }
        self.scaled(1.0 / s)
    }

    /// Writes `t,p1..pn,xi,deta`; the last row carries `deta = 0`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.p[0].len();
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("p{i}")));
        header.push("xi".into());
        header.push("deta".into());
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.len() {
            let mut row = vec![fmt17(self.grid[i])];
            row.extend(self.p[i].iter().map(|&v| fmt17(v)));
            row.push(fmt17(self.xi[i]));
            row.push(fmt17(self.deta.get(i).copied().unwrap_or(0.0)));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct AdjointOptions {
    /// Fixed Dormand–Prince substeps per forward interval, at least.
    pub min_substeps: usize,
    /// Substeps are raised until `h λ ≤ stiffness_factor` with `λ` the local decay rate.
    pub stiffness_factor: f64,
    pub max_substeps: usize,
    /// Tolerance on `λ + |p(T)| = 1`.
    pub normalization_tol: f64,
}

impl Default for AdjointOptions {
    fn default() -> Self {
        AdjointOptions {
            min_substeps: 2,
            stiffness_factor: 1.0,
            max_substeps: 100_000,
            normalization_tol: 1e-12,
        }
    }
}

fn state_on_interval(traj: &Trajectory, i: usize, t: f64) -> Vector {
    let (t0, t1) = (traj.grid[i], traj.grid[i + 1]);
    match &traj.velocities {
        Some(v) => hermite(t0, &traj.states[i], &v[i], t1, &traj.states[i + 1], &v[i + 1], t),
        None => {
            let s = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
            &traj.states[i] * (1.0 - s) + &traj.states[i + 1] * s
        }
    }
}

fn spectral(m: &crate::Matrix) -> f64 {
    m.clone().svd(false, false).singular_values.max()
}

/// Integrates the adjoint backwards from `p(T) = p_t` along a stored forward
/// trajectory of the given penalty level.
///
/// Each forward interval is covered by a fixed number of Dormand–Prince
/// substeps chosen from the trajectory alone, so the map `p_t ↦ p(·)` is
/// linear up to rounding. The state between nodes comes from the forward
/// dense output.
pub fn integrate_adjoint_backward(
    p: &ProblemSpec,
    traj: &Trajectory,
    p_t: &Vector,
    lambda: f64,
    level: &PenaltyLevel,
    opts: &AdjointOptions,
) -> Result<AdjointArc> {
    let n = p.state_dim();
    if p_t.len() != n || traj.state_dim() != n {
        return Err(Error::invalid("terminal costate dimension differs from the state dimension"));
    }
    if !(lambda >= 0.0) {
        return Err(Error::invalid(format!("lambda must be nonnegative, got {lambda}")));
    }
    let normalization = lambda + p_t.norm();
    if (normalization - 1.0).abs() > opts.normalization_tol {
        return Err(Error::Normalization(normalization));
    }

    let len = traj.len();
    let mut xi = Vec::with_capacity(len);
    let mut max_jac = 0.0f64;
    let mut max_xi_hess = 0.0f64;
    let mut rates = Vec::with_capacity(len);
    for i in 0..len {
        let (t, x) = (traj.grid[i], &traj.states[i]);
        let ev = p.constraint.eval(t, x);
        let x_i = level.multiplier(t, ev.value)?;
        let jn = spectral(&p.dynamics.eval(t, x, traj.control_at_node(i)).jac_x);
        let hn = spectral(&ev.hess);
        max_jac = max_jac.max(jn);
        max_xi_hess = max_xi_hess.max(x_i * hn);
        rates.push(x_i * (level.gamma * ev.grad.norm_squared() + hn) + jn);
        xi.push(x_i);
    }

    let mut costates = vec![Vector::zeros(n); len];
    let mut smooth_inc = vec![Vector::zeros(n); len - 1];
    let mut measure_inc = vec![Vector::zeros(n); len - 1];
    let mut deta = vec![0.0; len - 1];
    let mut measure_mass = 0.0;
    costates[len - 1] = p_t.clone();

    let dim = 3 * n + 2;
    for i in (0..len - 1).rev() {
        let (t0, t1) = (traj.grid[i], traj.grid[i + 1]);
        let h = t1 - t0;
        let u = &traj.controls[i];
        let rate = rates[i].max(rates[i + 1]);
        let m = ((h * rate / opts.stiffness_factor).ceil() as usize).max(opts.min_substeps);
        if m > opts.max_substeps {
            return Err(Error::StepBudget {
                t: t0,
                max_steps: opts.max_substeps,
            });
        }
        let mut rhs = |t: f64, z: &Vector| -> Result<Vector> {
            let x = state_on_interval(traj, i, t);
            let pv = z.rows(0, n).into_owned();
            let a = adjoint_parts(p, t, &x, u, &pv, level)?;
            let mut dz = Vector::zeros(dim);
            let meas = &a.grad * a.density;
            dz.rows_mut(0, n).copy_from(&(&a.smooth + &meas));
            dz.rows_mut(n, n).copy_from(&a.smooth);
            dz.rows_mut(2 * n, n).copy_from(&meas);
            dz[3 * n] = a.density;
            dz[3 * n + 1] = level.gamma * a.xi * a.grad.norm() * a.grad.dot(&pv).abs();
            Ok(dz)
        };
        let mut z = Vector::zeros(dim);
        z.rows_mut(0, n).copy_from(&costates[i + 1]);
        let step = -h / m as f64;
        for j in 0..m {
            let t = t1 + step * j as f64;
            z = ode::fixed_step(&mut rhs, t, &z, step)?;
        }
        costates[i] = z.rows(0, n).into_owned();
        // the auxiliary components ran backwards from zero
        smooth_inc[i] = -z.rows(n, n).into_owned();
        measure_inc[i] = -z.rows(2 * n, n).into_owned();
        deta[i] = -z[3 * n];
        measure_mass += -z[3 * n + 1];
    }

    let k0 = max_jac + max_xi_hess;
    let horizon = traj.horizon();
    let pt_norm = p_t.norm();
    let growth_ratio = traj
        .grid
        .iter()
        .zip(&costates)
        .map(|(t, pv)| {
            let bound = (k0 * (horizon - t)).exp() * pt_norm;
            let pn = pv.norm();
            if bound > 0.0 {
                pn / bound
            } else if pn == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        })
        .fold(0.0, f64::max);

    let mut arc = AdjointArc {
        grid: traj.grid.clone(),
        p: costates,
        xi,
        deta,
        lambda,
        level: Some(*level),
        smooth_increments: Some(smooth_inc),
        measure_increments: Some(measure_inc),
        diagnostics: AdjointDiagnostics::default(),
    };
    arc.diagnostics = AdjointDiagnostics {
        normalization,
        k0: Some(k0),
        growth_ratio: Some(growth_ratio),
        p_tv: arc.p_variation(),
        eta_tv: arc.deta.iter().map(|d| d.abs()).sum(),
        measure_mass,
        max_xi: arc.xi.iter().copied().fold(0.0, f64::max),
    };
    Ok(arc)
}

/// Integrates several terminal conditions `(p_t, λ)` independently.
pub fn integrate_adjoint_batch(
    p: &ProblemSpec,
    traj: &Trajectory,
    candidates: &[(Vector, f64)],
    level: &PenaltyLevel,
    opts: &AdjointOptions,
    exec: Execution,
) -> Vec<Result<AdjointArc>> {
    exec.map(candidates, |(pt, lambda)| integrate_adjoint_backward(p, traj, pt, *lambda, level, opts))
}

#[derive(Clone, Debug, Serialize)]
pub struct MultiplierProfile {
    pub xi_limit: Vec<f64>,
    /// `Σ |Δη_i|` over intervals not inside `I_b`.
    pub eta_tv: f64,
    /// `ψ(t_i, x_i) < −tol`
    pub ib_mask: Vec<bool>,
    pub max_xi_in_ib: f64,
    /// `γ e^{−γ tol/2}`, when the arc carries a penalty level.
    pub ib_bound: Option<f64>,
    pub ib_exponentially_small: bool,
}

/// Splits the multipliers into the interior part `I_b` and its complement.
pub fn multiplier_profile(arc: &AdjointArc, traj: &Trajectory, ib_tol: f64) -> Result<MultiplierProfile> {
    if arc.len() != traj.len() || arc.grid.iter().zip(&traj.grid).any(|(a, b)| (a - b).abs() > 1e-14 * (1.0 + b.abs())) {
        return Err(Error::GridMismatch("adjoint arc and trajectory use different grids".into()));
    }
    if !(ib_tol > 0.0) {
        return Err(Error::invalid("I_b tolerance must be positive"));
    }
    let ib_mask: Vec<bool> = traj.psi.iter().map(|&v| v < -ib_tol).collect();
    let eta_tv = arc
        .deta
        .iter()
        .enumerate()
        .filter(|(i, _)| !(ib_mask[*i] && ib_mask[*i + 1]))
        .map(|(_, d)| d.abs())
        .sum();
    let max_xi_in_ib = arc
        .xi
        .iter()
        .zip(&ib_mask)
        .filter(|(_, &m)| m)
        .map(|(x, _)| *x)
        .fold(0.0, f64::max);
    let ib_bound = arc.level.map(|l| l.gamma * (-l.gamma * ib_tol / 2.0).exp());
    Ok(MultiplierProfile {
        xi_limit: arc.xi.clone(),
        eta_tv,
        ib_exponentially_small: max_xi_in_ib <= ib_bound.unwrap_or(0.0),
        ib_mask,
        max_xi_in_ib,
        ib_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrate::{integrate_forward, IntegratorOptions};
    use crate::registry;
    use crate::trajectory::ControlSignal;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    #[test]
    fn interior_rhs_vanishes_without_drift() {
        let b = registry::example1(0.05).unwrap();
        let r = adjoint_rhs(&b.spec, 0.0, &b.x0, &v(&[1.0]), &v(&[0.3, -0.7]), 500.0, 0.01).unwrap();
        assert!(r.norm() < 1e-100);
    }

    #[test]
    fn drift_term_in_example2() {
        let b = registry::example2(0.05, 0.05).unwrap();
        let r = adjoint_rhs(&b.spec, 0.0, &b.x0, &v(&[1.0]), &v(&[0.0, 2.0]), 500.0, 0.01).unwrap();
        assert!((r[0] - 0.1).abs() < 1e-12);
        assert!(r[1].abs() < 1e-12);
    }

    #[test]
    fn orthogonal_costate_drops_rank_one_term() {
        let b = registry::example1(0.05).unwrap();
        let level = PenaltyLevel::unchecked(50.0, 0.0).unwrap();
        let x = v(&[0.25, 3f64.sqrt() / 4.0]);
        let pv = v(&[-x[1], x[0]]);
        let a = adjoint_parts(&b.spec, 0.25, &x, &v(&[1.0]), &pv, &level).unwrap();
        assert!(a.density.abs() < 1e-12);
        assert!((a.velocity() - &pv * (2.0 * a.xi)).norm() < 1e-12);
    }

    #[test]
    fn zero_terminal_costate_gives_zero_arc() {
        let b = registry::static_disc(&Default::default()).unwrap();
        let u = ControlSignal::constant(v(&[0.2]), b.spec.horizon, &b.spec.controls).unwrap();
        let level = PenaltyLevel::unchecked(20.0, 0.01).unwrap();
        let traj = integrate_forward(&b.spec, &u, &level, &b.x0, &IntegratorOptions::default()).unwrap();
        let arc = integrate_adjoint_backward(&b.spec, &traj, &v(&[0.0, 0.0]), 1.0, &level, &AdjointOptions::default()).unwrap();
        assert!(arc.p.iter().all(|p| p.norm() == 0.0));
        assert!(arc.deta.iter().all(|d| *d == 0.0));
        let prof = multiplier_profile(&arc, &traj, 0.05).unwrap();
        assert!(prof.eta_tv <= 1e-8);
    }

    #[test]
    fn normalization_is_enforced() {
        let b = registry::static_disc(&Default::default()).unwrap();
        let u = ControlSignal::constant(v(&[0.2]), b.spec.horizon, &b.spec.controls).unwrap();
        let level = PenaltyLevel::unchecked(20.0, 0.01).unwrap();
        let traj = integrate_forward(&b.spec, &u, &level, &b.x0, &IntegratorOptions::default()).unwrap();
        let r = integrate_adjoint_backward(&b.spec, &traj, &v(&[0.5, 0.0]), 0.4, &level, &AdjointOptions::default());
        assert!(matches!(r, Err(Error::Normalization(_))));
    }

    #[test]
    fn mismatched_grid_rejected() {
        let b = registry::example1(0.05).unwrap();
        let params = b.example1.clone().unwrap();
        let traj = params.optimal_trajectory(&b.spec, 100).unwrap();
        let other = params.optimal_trajectory(&b.spec, 50).unwrap();
        let arc = crate::examples::degenerate_certificate(&traj).unwrap();
        assert!(matches!(multiplier_profile(&arc, &other, 1e-3), Err(Error::GridMismatch(_))));
    }
}
