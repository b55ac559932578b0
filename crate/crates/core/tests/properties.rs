use std::sync::OnceLock;

use proptest::prelude::*;
use sweeping_core::adjoint::{integrate_adjoint_backward, AdjointOptions};
use sweeping_core::catchup::{catchup_simulate, project_onto_sublevel, ProjectionOptions};
use sweeping_core::examples::{degenerate_certificate, rho};
use sweeping_core::integrate::{
    integrate_forward, max_gradient_norm, max_hessian_norm, measure_contraction, speed_ratio, IntegratorOptions,
};
use sweeping_core::mpcheck::{assemble_report, MpInputs};
use sweeping_core::penalty::{mu_gamma, PenaltyLevel, PenaltySchedule, ScheduleConfig};
use sweeping_core::problem::{boundary_multiplier, validate_assumptions, AssumptionReport, ProbeGrid};
use sweeping_core::registry::{self, Builtin};
use sweeping_core::trajectory::{ControlSignal, Trajectory};
use sweeping_core::Vector;

struct Setup {
    b: Builtin,
    report: AssumptionReport,
    schedule: PenaltySchedule,
}

fn setup() -> &'static Setup {
    static S: OnceLock<Setup> = OnceLock::new();
    S.get_or_init(|| {
        let b = registry::example1(0.05).unwrap();
        let report = validate_assumptions(&b.spec, &ProbeGrid::default()).unwrap();
        let schedule = PenaltySchedule::build(&ScheduleConfig::default(), report.mu, report.eta).unwrap();
        Setup { b, report, schedule }
    })
}

fn v(xs: &[f64]) -> Vector {
    Vector::from_column_slice(xs)
}

fn bang(b: &Builtin, switch: f64) -> ControlSignal {
    ControlSignal::bang_bang(switch, v(&[1.0]), v(&[-0.05]), b.spec.horizon, &b.spec.controls).unwrap()
}

/// Start with `ψ(0, x) = frac · (σ + μ_k)`, which lies in `C^k(0)` for `frac < 1`.
fn inflated_start(level: &PenaltyLevel, angle: f64, frac: f64) -> Vector {
    let excess = if frac >= 0.0 { frac * (level.sigma + level.mu_k) * (1.0 - 1e-9) } else { frac * 0.5 };
    let r = (rho(0.0).powi(2) + excess).sqrt();
    v(&[r * angle.cos(), r * angle.sin()])
}

fn penalty_run(level_idx: usize, angle: f64, frac: f64, switch: f64) -> (Trajectory, PenaltyLevel) {
    let s = setup();
    let level = s.schedule.level(level_idx);
    let x0 = inflated_start(&level, angle, frac);
    let traj = integrate_forward(&s.b.spec, &bang(&s.b, switch), &level, &x0, &IntegratorOptions::default()).unwrap();
    (traj, level)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn constraint_derivatives_match_finite_differences(
        t in 0.0f64..0.6, x in -2.0f64..2.0, y in -2.0f64..2.0,
    ) {
        let c = setup().b.spec.constraint.clone();
        let p = v(&[x, y]);
        let ev = c.eval(t, &p);
        let h = 1e-5;
        let rel = |a: f64, b: f64| (a - b).abs() / (1.0 + b.abs());
        for i in 0..2 {
            let mut e = Vector::zeros(2);
            e[i] = h;
            let fd = (c.value(t, &(&p + &e)) - c.value(t, &(&p - &e))) / (2.0 * h);
            prop_assert!(rel(fd, ev.grad[i]) <= 1e-4);
            let dg = (c.eval(t, &(&p + &e)).grad - c.eval(t, &(&p - &e)).grad) / (2.0 * h);
            for j in 0..2 {
                prop_assert!(rel(dg[j], ev.hess[(j, i)]) <= 1e-4);
            }
        }
        let fd_t = (c.value(t + h, &p) - c.value(t - h, &p)) / (2.0 * h);
        prop_assert!(rel(fd_t, ev.dt) <= 1e-4);
        let fd_tg = (c.eval(t + h, &p).grad - c.eval(t - h, &p).grad) / (2.0 * h);
        prop_assert!((fd_tg - &ev.dt_grad).norm() <= 1e-4);
    }

    #[test]
    fn boundary_multiplier_within_star_bound(
        t in 0.0f64..0.5885, angle in 0.0f64..std::f64::consts::TAU, shrink in 0.0f64..1.0, u in -0.05f64..1.0,
    ) {
        let s = setup();
        // on the boundary half the time, inside otherwise
        let scale = if shrink < 0.5 { 1.0 } else { shrink };
        let r = rho(t) * scale;
        let x = v(&[r * angle.cos(), r * angle.sin()]);
        let xi = boundary_multiplier(&s.b.spec, t, &x, &v(&[u])).unwrap();
        prop_assert!(xi >= 0.0);
        prop_assert!(xi <= s.report.xi_bound() + 1e-9);
        if scale < 1.0 - 1e-6 {
            prop_assert_eq!(xi, 0.0);
        }
    }

    #[test]
    fn mu_gamma_identity(g in 1e-3f64..1e7, mu in 1e-3f64..1e3, eta in 1e-2f64..10.0) {
        let m = mu_gamma(g, mu, eta);
        let lhs = g * (g * m).exp();
        prop_assert!((lhs / (mu / (eta * eta)) - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn multiplier_monotone_in_psi(g in 1.0f64..1e5, sigma in 0.0f64..0.5, a in -1.0f64..0.1, d in 0.0f64..0.1) {
        let level = PenaltyLevel::unchecked(g, sigma).unwrap();
        let (x, y) = (level.multiplier(0.0, a), level.multiplier(0.0, a + d));
        if let (Ok(x), Ok(y)) = (x, y) {
            prop_assert!(x <= y);
        }
    }

    #[test]
    fn schedule_invariants(mu in 1.0f64..100.0, eta in 0.1f64..3.0, levels in 1usize..10) {
        let cfg = ScheduleConfig { levels, ..Default::default() };
        let s = PenaltySchedule::build(&cfg, mu, eta).unwrap();
        for k in 0..s.len() {
            let l = s.level(k);
            prop_assert!(l.mu_k > -l.sigma);
            prop_assert!(mu_gamma(l.gamma, mu, eta) > -l.sigma / 2.0);
            prop_assert!((l.gamma * (l.gamma * l.mu_k).exp() / (mu / (eta * eta)) - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn projection_is_feasible_normal_and_idempotent(
        t in 0.0f64..0.6, x in -3.0f64..3.0, y in -3.0f64..3.0,
    ) {
        let c = setup().b.spec.constraint.clone();
        let p = v(&[x, y]);
        let opts = ProjectionOptions::default();
        let r = project_onto_sublevel(c.as_ref(), t, &p, &opts).unwrap();
        let ev = c.eval(t, &r.point);
        prop_assert!(ev.value <= 1e-10);
        if r.active {
            prop_assert!(ev.value.abs() <= 1e-10);
            prop_assert!((&p - &r.point - &ev.grad * r.multiplier).norm() <= 1e-8);
            prop_assert!(r.multiplier >= 0.0);
        }
        let again = project_onto_sublevel(c.as_ref(), t, &r.point, &opts).unwrap();
        prop_assert!((again.point - &r.point).norm() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn star_bound_and_forward_invariance(
        k in 0usize..8, angle in 0.0f64..std::f64::consts::TAU, frac in -1.0f64..1.0, switch in 0.0f64..0.6,
    ) {
        let s = setup();
        let (traj, level) = penalty_run(k, angle, frac, switch);
        let max_xi = traj.xi.iter().copied().fold(0.0, f64::max);
        prop_assert!(max_xi <= s.report.xi_bound() + 1e-6, "max xi {} bound {}", max_xi, s.report.xi_bound());
        for &psi in &traj.psi {
            prop_assert!(psi - level.sigma <= level.mu_k + 1e-6);
        }
    }

    #[test]
    fn speed_bound_holds_at_every_step(k in 0usize..8, angle in 0.0f64..std::f64::consts::TAU, switch in 0.0f64..0.6) {
        let s = setup();
        let (traj, _) = penalty_run(k, angle, 0.5, switch);
        let bound = s.report.m_bound + s.report.xi_bound() * max_gradient_norm(&s.b.spec, &traj);
        prop_assert!(speed_ratio(&traj, bound) <= 1.0);
    }

    #[test]
    fn integration_is_deterministic(k in 0usize..8, switch in 0.0f64..0.6) {
        let (a, _) = penalty_run(k, 1.0, 0.3, switch);
        let (b, _) = penalty_run(k, 1.0, 0.3, switch);
        prop_assert_eq!(a.grid, b.grid);
        prop_assert_eq!(a.states, b.states);
    }

    #[test]
    fn offsets_contract_within_bound(k in 0usize..8, angle in 0.0f64..std::f64::consts::TAU, switch in 0.0f64..0.6) {
        let s = setup();
        let level = s.schedule.level(k);
        let delta = v(&[angle.cos(), angle.sin()]) * 1e-6;
        let u = bang(&s.b, switch);
        let c = measure_contraction(&s.b.spec, &u, &level, &s.b.x0, &delta, &IntegratorOptions::default()).unwrap();
        let traj = integrate_forward(&s.b.spec, &u, &level, &s.b.x0, &IntegratorOptions::default()).unwrap();
        let bound = 2.0 * (s.report.m_bound + s.report.xi_bound() * max_hessian_norm(&s.b.spec, &traj));
        prop_assert!(c.rate <= bound);
        prop_assert!(c.max_ratio <= (c.rate * s.b.spec.horizon).exp() * (1.0 + 1e-9));
    }

    #[test]
    fn adjoint_growth_and_linearity(
        k in 0usize..8, lambda in 0.0f64..1.0, a in -1.0f64..1.0, b in -1.0f64..1.0, c in -1.0f64..1.0, d in -1.0f64..1.0,
    ) {
        let s = setup();
        let level = s.schedule.level(k);
        let traj = integrate_forward(&s.b.spec, &s.b.control, &level, &s.b.x0, &IntegratorOptions::default()).unwrap();
        let unit = |x: f64, y: f64| {
            let w = v(&[x, y]);
            if w.norm() < 1e-3 { v(&[1.0, 0.0]) } else { w.normalize() }
        };
        let p1 = unit(a, b) * (1.0 - lambda);
        let p2 = unit(c, d) * (1.0 - lambda);
        let arc1 = integrate_adjoint_backward(&s.b.spec, &traj, &p1, lambda, &level, &AdjointOptions::default()).unwrap();
        prop_assert!(arc1.diagnostics.growth_ratio.unwrap() <= 1.01);

        let free = AdjointOptions { normalization_tol: f64::INFINITY, ..AdjointOptions::default() };
        let arc2 = integrate_adjoint_backward(&s.b.spec, &traj, &p2, lambda, &level, &free).unwrap();
        let arc_sum = integrate_adjoint_backward(&s.b.spec, &traj, &(&p1 + &p2), lambda, &level, &free).unwrap();
        let arc_scaled = integrate_adjoint_backward(&s.b.spec, &traj, &(&p1 * -3.5), lambda, &level, &free).unwrap();
        for i in 0..traj.len() {
            let size = 1.0 + arc1.p[i].norm() + arc2.p[i].norm();
            prop_assert!((&arc_sum.p[i] - &arc1.p[i] - &arc2.p[i]).norm() <= 1e-10 * size);
            prop_assert!((&arc_scaled.p[i] + &arc1.p[i] * 3.5).norm() <= 1e-10 * size);
        }
    }

    #[test]
    fn catchup_viability(switch in 0.0f64..0.6, steps in 100usize..3000) {
        let s = setup();
        let traj = catchup_simulate(&s.b.spec, &bang(&s.b, switch), &s.b.x0, steps).unwrap();
        for &psi in &traj.psi {
            prop_assert!(psi <= 1e-10);
        }
    }

    #[test]
    fn verdicts_invariant_under_rescaling(exp in -3i32..=3, q in -2.0f64..2.0, lambda in 0.0f64..1.0) {
        let s = setup();
        let params = s.b.example1.as_ref().unwrap();
        let traj = params.optimal_trajectory(&s.b.spec, 300).unwrap();
        let cert = degenerate_certificate(&traj).unwrap();
        let mut other = cert.clone();
        other.lambda = lambda;
        other.p.iter_mut().for_each(|p| p[1] = q);
        for arc in [cert, other] {
            let base = assemble_report(&MpInputs::new(&s.b.spec, &traj, &arc)).unwrap();
            let rescaled = arc.scaled(10f64.powi(exp)).unwrap().normalized().unwrap();
            let again = assemble_report(&MpInputs::new(&s.b.spec, &traj, &rescaled)).unwrap();
            let renormed = assemble_report(&MpInputs::new(&s.b.spec, &traj, &arc.normalized().unwrap())).unwrap();
            prop_assert_eq!(again.passed(), renormed.passed());
            prop_assert_eq!(&again.verdict.failed, &renormed.verdict.failed);
            prop_assert_eq!(base.nontriviality.pass, again.nontriviality.pass);
        }
    }
}
