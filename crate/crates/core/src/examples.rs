//! Closed forms for the moving-disc examples.
//!
//! Both examples share the disc `C(t) = {|x| ≤ ρ(t)}` with
//! `ρ(t) = (1 − 2t)² + 1/4`, the initial point `(0, √3/4)`, the cost
//! `φ = −x₁` and the terminal ball of radius `r_T`. Example 1 has
//! `f = (u, 0)`; example 2 adds the drift `f = (u, −σ_d x₁)`.

use std::f64::consts::{FRAC_PI_4, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::adjoint::AdjointArc;
use crate::catchup::catchup_simulate;
use crate::problem::{boundary_multiplier, ProblemSpec};
use crate::sets::ControlSet;
use crate::trajectory::{ControlSignal, Trajectory};
use crate::{Error, Execution, Result, Vector};

/// First contact time with the boundary under `u = 1`.
pub const T1: f64 = 0.25;

pub fn rho(t: f64) -> f64 {
    let a = 1.0 - 2.0 * t;
    a * a + 0.25
}

pub fn rho_dot(t: f64) -> f64 {
    8.0 * t - 4.0
}

/// Polar form `ṙ = u cos φ − λ r`, `φ̇ = −u sin φ / r`.
pub fn polar_rhs(r: f64, phi: f64, u: f64, lambda: f64) -> Result<(f64, f64)> {
    if r <= 1e-12 {
        return Err(Error::invalid(format!("polar form needs r > 0, got {r}")));
    }
    Ok((u * phi.cos() - lambda * r, -u * phi.sin() / r))
}

/// `tan(φ(t)/2)` along the boundary arc.
fn tau(t: f64) -> f64 {
    ((2.0 * (1.0 - 2.0 * t)).atan() - FRAC_PI_4).exp() / 3f64.sqrt()
}

/// Polar angle of the trajectory that rides `∂C(t)` with `u = 1` from `t = 1/4`.
pub fn phi_boundary(t: f64) -> f64 {
    2.0 * tau(t).atan()
}

/// `(1 − τ²)/(1 + τ²) − ρ̇(t)`: zero when the boundary can no longer be followed.
pub fn tstar_residual(t: f64) -> f64 {
    let s = tau(t);
    (1.0 - s * s) / (1.0 + s * s) - rho_dot(t)
}

/// Solves the exit-time system by bisection on `(1/2, 5/8)`; returns `(t*, τ)`.
pub fn solve_tstar() -> Result<(f64, f64)> {
    let (mut a, mut b) = (0.5, 0.625);
    let (ga, gb) = (tstar_residual(a), tstar_residual(b));
    if !(ga > 0.0 && gb < 0.0) {
        return Err(Error::Bracket { a, b, ga, gb });
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        if tstar_residual(m) > 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    let t = if tstar_residual(a).abs() <= tstar_residual(b).abs() { a } else { b };
    debug_assert!(t > 0.5);
    Ok((t, tau(t)))
}

/// Parameters of the first example for a given lower control bound `μ̂`.
#[derive(Clone, Debug, Serialize)]
pub struct Example1Params {
    pub t1: f64,
    pub tstar: f64,
    pub tau: f64,
    pub theta: f64,
    pub t2: f64,
    pub horizon: f64,
    pub mu_ctrl: f64,
    pub r_t: f64,
    pub delta: f64,
    pub rho_t: f64,
    pub r_hat_t2: f64,
    pub phi_hat_t2: f64,
    pub x_hat_t2: f64,
    pub y_hat_t2: f64,
}

/// Builds the example parameters and checks
/// `ρ(T) > r̂(t₂) > r_T > r̂(t₂) sin φ̂(t₂)` and `Δ > 0`.
pub fn example1_params(mu_ctrl: f64) -> Result<Example1Params> {
    if !(mu_ctrl > 0.0 && mu_ctrl.is_finite()) {
        return Err(Error::ExampleParams(format!("mu_ctrl must be positive, got {mu_ctrl}")));
    }
    let (tstar, tau) = solve_tstar()?;
    let theta = 0.5 * (tstar - 0.5);
    let t2 = 0.5 + theta;
    let horizon = 0.5 * (1.0 + 3.0 * theta);
    let r2 = rho(t2);
    let phi2 = phi_boundary(t2);
    let (x2, y2) = (r2 * phi2.cos(), r2 * phi2.sin());
    let shifted = x2 - 0.5 * mu_ctrl * theta;
    let r_t = (y2 * y2 + shifted * shifted).sqrt();
    let xdot2 = rho_dot(t2) * phi2.cos() + phi2.sin().powi(2);
    let delta = 2.0 * r2 * rho_dot(t2) - mu_ctrl * theta * xdot2 + 2.0 * mu_ctrl * x2 - mu_ctrl * mu_ctrl * theta;
    let rho_t = rho(horizon);

    let chain = [
        ("rho(T) > r(t2)", rho_t > r2),
        ("r(t2) > r_T", r2 > r_t),
        ("r_T > r(t2) sin phi(t2)", r_t > y2),
        ("Delta > 0", delta > 0.0),
    ];
    if let Some((name, _)) = chain.iter().find(|(_, ok)| !ok) {
        return Err(Error::ExampleParams(format!(
            "mu_ctrl = {mu_ctrl} is too large: {name} fails"
        )));
    }
    Ok(Example1Params {
        t1: T1,
        tstar,
        tau,
        theta,
        t2,
        horizon,
        mu_ctrl,
        r_t,
        delta,
        rho_t,
        r_hat_t2: r2,
        phi_hat_t2: phi2,
        x_hat_t2: x2,
        y_hat_t2: y2,
    })
}

impl Example1Params {
    pub fn initial_state() -> Vector {
        Vector::from_column_slice(&[0.0, 3f64.sqrt() / 4.0])
    }

    /// `1` on `[0, t₂]`, `−μ̂` afterwards.
    pub fn optimal_control(&self, set: &ControlSet) -> Result<ControlSignal> {
        ControlSignal::bang_bang(
            self.t2,
            Vector::from_element(1, 1.0),
            Vector::from_element(1, -self.mu_ctrl),
            self.horizon,
            set,
        )
    }

    pub fn optimal_state(&self, t: f64) -> Vector {
        let y0 = 3f64.sqrt() / 4.0;
        if t <= self.t1 {
            Vector::from_column_slice(&[t, y0])
        } else if t <= self.t2 {
            let (r, phi) = (rho(t), phi_boundary(t));
            Vector::from_column_slice(&[r * phi.cos(), r * phi.sin()])
        } else {
            Vector::from_column_slice(&[self.x_hat_t2 - self.mu_ctrl * (t - self.t2), self.y_hat_t2])
        }
    }

    pub fn terminal_state(&self) -> Vector {
        self.optimal_state(self.horizon)
    }

    /// Closed-form optimal trajectory on a uniform grid of `steps` intervals
    /// with `t₁` and `t₂` inserted.
    pub fn optimal_trajectory(&self, p: &ProblemSpec, steps: usize) -> Result<Trajectory> {
        if steps < 2 {
            return Err(Error::invalid("closed-form trajectory needs at least two steps"));
        }
        let mut grid: Vec<f64> = (0..=steps)
            .map(|i| self.horizon * i as f64 / steps as f64)
            .collect();
        *grid.last_mut().unwrap() = self.horizon;
        grid.extend([self.t1, self.t2]);
        grid.sort_by(f64::total_cmp);
        grid.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);

        let control = self.optimal_control(&p.controls)?;
        let states: Vec<Vector> = grid.iter().map(|&t| self.optimal_state(t)).collect();
        let controls: Vec<Vector> = grid[..grid.len() - 1]
            .iter()
            .map(|&t| control.value_at(t).clone())
            .collect();
        let mut psi = Vec::with_capacity(grid.len());
        let mut xi = Vec::with_capacity(grid.len());
        for (i, (t, x)) in grid.iter().zip(&states).enumerate() {
            psi.push(p.constraint.value(*t, x));
            let u = &controls[i.min(controls.len() - 1)];
            xi.push(boundary_multiplier(p, *t, x, u)?);
        }
        Trajectory::new(grid, states, None, psi, xi, controls)
    }
}

/// The multiplier set `λ = 1`, `p ≡ 0`, `q ≡ −y(T)/x(T)`, `ξ ≡ 0`, `η ≡ 0`,
/// which satisfies the necessary conditions along any admissible trajectory
/// of the first example ending with `x(T) > 0`.
pub fn degenerate_certificate(traj: &Trajectory) -> Result<AdjointArc> {
    let xt = traj.final_state();
    if !(xt[0] > 0.0) {
        return Err(Error::invalid("the degenerate certificate needs x(T) > 0"));
    }
    let q = -xt[1] / xt[0];
    let n = traj.len();
    AdjointArc::from_samples(
        traj.grid.clone(),
        vec![Vector::from_column_slice(&[0.0, q]); n],
        vec![0.0; n],
        vec![0.0; n - 1],
        1.0,
    )
}

/// Candidate for the drift example whose first costate component vanishes on
/// `[from, T]`, with `q ≡ q_t` there and `ξ ≡ 0`, `η ≡ 0`. Before `from` the
/// arc solves `ṗ = σ_d q` so that only the terminal interval can be at fault.
pub fn vanishing_costate_candidate(traj: &Trajectory, sigma_drift: f64, from: f64, lambda: f64, q_t: f64) -> Result<AdjointArc> {
    if !(from > 0.0 && from < traj.horizon()) {
        return Err(Error::invalid("the vanishing interval must start inside (0, T)"));
    }
    let p = traj
        .grid
        .iter()
        .map(|&t| {
            let first = if t >= from { 0.0 } else { sigma_drift * q_t * (t - from) };
            Vector::from_column_slice(&[first, q_t])
        })
        .collect();
    let n = traj.len();
    AdjointArc::from_samples(traj.grid.clone(), p, vec![0.0; n], vec![0.0; n - 1], lambda)
}

#[derive(Clone, Debug)]
pub struct SearchOptions {
    pub switch_points: usize,
    pub catchup_steps: usize,
    pub adversaries: usize,
    pub seed: u64,
    /// Largest distance from `x(T)` to `C_T` still counted as admissible.
    pub admissibility_tol: f64,
    pub exec: Execution,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            switch_points: 200,
            catchup_steps: 20_000,
            adversaries: 20,
            seed: 42,
            admissibility_tol: 1e-12,
            exec: Execution::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SwitchCandidate {
    pub switch: f64,
    /// `φ(x(T))`, absent when `x(T) ∉ C_T`.
    pub cost: Option<f64>,
    pub terminal_distance: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Adversary {
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
    pub cost: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SwitchSearch {
    pub best_switch: f64,
    pub best_cost: f64,
    pub curve: Vec<SwitchCandidate>,
    pub adversaries: Vec<Adversary>,
    /// Random draws rejected because they missed `C_T`.
    pub rejected_draws: usize,
    pub beats_adversaries: bool,
    #[serde(skip)]
    pub best_control: ControlSignal,
    #[serde(skip)]
    pub best_trajectory: Trajectory,
}

fn extremes(set: &ControlSet) -> Result<(f64, f64)> {
    match set {
        ControlSet::Box { lo, hi } if lo.len() == 1 => Ok((lo[0], hi[0])),
        _ => Err(Error::invalid("switch search needs a scalar interval control set")),
    }
}

/// Searches the bang-bang family `u = max U` on `[0, s]`, `min U` afterwards.
///
/// Every switch time on a uniform grid is simulated with the catch-up scheme;
/// the best admissible one is refined by bisection toward the first
/// inadmissible neighbour. The result is then compared against seeded random
/// admissible piecewise-constant controls.
pub fn example2_search(p: &ProblemSpec, x0: &Vector, opts: &SearchOptions) -> Result<SwitchSearch> {
    if opts.switch_points < 100 {
        return Err(Error::invalid("switch grid needs at least 100 points"));
    }
    let (lo, hi) = extremes(&p.controls)?;
    let horizon = p.horizon;
    let simulate = |u: &ControlSignal| -> Result<(Trajectory, f64)> {
        let traj = catchup_simulate(p, u, x0, opts.catchup_steps)?;
        let d = p.terminal_set.distance(traj.final_state());
        Ok((traj, d))
    };
    let bang = |s: f64| {
        ControlSignal::bang_bang(
            s,
            Vector::from_element(1, hi),
            Vector::from_element(1, lo),
            horizon,
            &p.controls,
        )
    };
    let evaluate = |s: f64| -> Result<SwitchCandidate> {
        let (traj, d) = simulate(&bang(s)?)?;
        Ok(SwitchCandidate {
            switch: s,
            cost: (d <= opts.admissibility_tol).then(|| p.cost.value(traj.final_state())),
            terminal_distance: d,
        })
    };

    let switches: Vec<f64> = (0..opts.switch_points)
        .map(|i| horizon * i as f64 / (opts.switch_points - 1) as f64)
        .collect();
    let curve = opts
        .exec
        .map(&switches, |&s| evaluate(s))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let best_idx = curve
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.cost.map(|v| (i, v)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
        .ok_or(Error::NoAdmissibleSwitch)?;
    let mut best = curve[best_idx].clone();

    // the optimum sits where the terminal constraint becomes active
    for nb in [best_idx + 1, best_idx.wrapping_sub(1)] {
        let Some(other) = curve.get(nb) else { continue };
        if other.cost.is_some() {
            continue;
        }
        let (mut good, mut bad) = (best.switch, other.switch);
        for _ in 0..60 {
            if (bad - good).abs() <= 1e-12 {
                break;
            }
            let mid = 0.5 * (good + bad);
            let c = evaluate(mid)?;
            if c.cost.is_some() {
                good = mid;
                if c.cost < best.cost {
                    best = c;
                }
            } else {
                bad = mid;
            }
        }
    }

    let best_control = bang(best.switch)?;
    let (best_trajectory, _) = simulate(&best_control)?;
    let best_cost = best.cost.expect("admissible candidate");

    let (adversaries, rejected_draws) = random_adversaries(p, &simulate, best.switch, lo, hi, opts)?;
    let beats_adversaries = adversaries.iter().all(|a| best_cost < a.cost);
    Ok(SwitchSearch {
        best_switch: best.switch,
        best_cost,
        curve,
        adversaries,
        rejected_draws,
        beats_adversaries,
        best_control,
        best_trajectory,
    })
}

/// Piecewise-constant controls close to the bang-bang structure but with
/// interior values, kept only when they reach `C_T`.
fn random_adversaries(
    p: &ProblemSpec,
    simulate: &(dyn Fn(&ControlSignal) -> Result<(Trajectory, f64)> + Sync),
    switch: f64,
    lo: f64,
    hi: f64,
    opts: &SearchOptions,
) -> Result<(Vec<Adversary>, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let horizon = p.horizon;
    let mut kept = Vec::new();
    let mut rejected = 0usize;
    let batch = opts.adversaries.max(1) * 4;
    for _round in 0..50 {
        if kept.len() >= opts.adversaries {
            break;
        }
        let draws: Vec<(Vec<f64>, Vec<f64>)> = (0..batch)
            .map(|_| {
                let s = switch * rng.gen_range(0.6..1.0);
                let before = rng.gen_range(1..=4);
                let after = rng.gen_range(1..=4);
                let mut grid = vec![0.0];
                for j in 1..before {
                    grid.push(s * j as f64 / before as f64 + rng.gen_range(-0.01..0.01) * s);
                }
                grid.push(s);
                for j in 1..after {
                    grid.push(s + (horizon - s) * j as f64 / after as f64);
                }
                grid.push(horizon);
                let mut values: Vec<f64> = (0..before)
                    .map(|_| rng.gen_range(0.5 * (lo + hi)..hi))
                    .collect();
                values.extend((0..after).map(|_| rng.gen_range(lo..lo + 0.25 * (hi - lo))));
                (grid, values)
            })
            .collect();
        let runs = opts.exec.map(&draws, |(grid, values)| -> Result<Option<Adversary>> {
            let u = ControlSignal::new(
                grid.clone(),
                values.iter().map(|&v| Vector::from_element(1, v)).collect(),
                &p.controls,
            )?;
            let (traj, d) = simulate(&u)?;
            Ok((d <= opts.admissibility_tol).then(|| Adversary {
                breakpoints: grid.clone(),
                values: values.clone(),
                cost: p.cost.value(traj.final_state()),
            }))
        });
        for r in runs {
            match r? {
                Some(a) if kept.len() < opts.adversaries => kept.push(a),
                Some(_) => {}
                None => rejected += 1,
            }
        }
    }
    if kept.len() < opts.adversaries {
        return Err(Error::invalid(format!(
            "only {} admissible random controls found after {rejected} rejections",
            kept.len()
        )));
    }
    Ok((kept, rejected))
}

/// Angle of the state in the plane, in `(−π, π]`.
pub fn polar_angle(x: &Vector) -> f64 {
    let a = x[1].atan2(x[0]);
    if a <= -PI {
        a + 2.0 * PI
    } else {
        a
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_3;

    #[test]
    fn rho_values() {
        assert_eq!(rho(0.0), 1.25);
        assert_eq!(rho(0.25), 0.5);
        assert_eq!(rho_dot(0.5), 0.0);
        assert_eq!(rho(0.5), 0.25);
    }

    #[test]
    fn polar_rhs_values() {
        let (r, p) = polar_rhs(0.5, FRAC_PI_3, 1.0, 0.0).unwrap();
        assert!((r - 0.5).abs() < 1e-15);
        assert!((p + 3f64.sqrt()).abs() < 1e-14);
        assert_eq!(polar_rhs(0.3, 1.0, 0.0, 0.0).unwrap(), (0.0, 0.0));
        let (r, _) = polar_rhs(0.5, FRAC_PI_3, 1.0, 5.0).unwrap();
        assert!((r - rho_dot(0.25)).abs() < 1e-14);
        assert!(polar_rhs(0.0, 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn boundary_angle_values() {
        assert!((phi_boundary(0.25) - FRAC_PI_3).abs() < 1e-15);
        let expected = 2.0 * ((-FRAC_PI_4).exp() / 3f64.sqrt()).atan();
        assert!((phi_boundary(0.5) - expected).abs() < 1e-15);
    }

    #[test]
    fn tstar_in_bracket() {
        let (t, tau) = solve_tstar().unwrap();
        assert!(t > 0.5 && t < 0.625);
        assert!(tstar_residual(t).abs() < 1e-12);
        assert!((t - 0.618).abs() < 1e-3);
        assert!((tau - 0.169).abs() < 1e-3);
    }

    #[test]
    fn params_limit_and_rejection() {
        let p = example1_params(1e-9).unwrap();
        assert!((p.r_t - p.r_hat_t2).abs() < 1e-9);
        assert!((p.rho_t - (9.0 * p.theta * p.theta + 0.25)).abs() < 1e-15);
        assert!((p.r_hat_t2 - (4.0 * p.theta * p.theta + 0.25)).abs() < 1e-15);
        assert!(matches!(example1_params(20.0), Err(Error::ExampleParams(_))));
        assert!(example1_params(-1.0).is_err());
    }

    #[test]
    fn closed_form_is_continuous() {
        let p = example1_params(0.05).unwrap();
        for t in [p.t1, p.t2] {
            let a = p.optimal_state(t - 1e-10);
            let b = p.optimal_state(t + 1e-10);
            assert!((a - b).norm() < 1e-8);
        }
        let xt = p.terminal_state();
        assert!((xt.norm() - p.r_t).abs() < 1e-14);
    }
}
