use std::collections::BTreeMap;
use std::sync::Arc;

use sweeping_core::adjoint::{integrate_adjoint_backward, multiplier_profile, AdjointOptions};
use sweeping_core::catchup::catchup_simulate;
use sweeping_core::examples::{example2_search, rho, SearchOptions};
use sweeping_core::integrate::{integrate_forward, run_family, FamilyOptions, IntegratorOptions};
use sweeping_core::penalty::{PenaltySchedule, ScheduleConfig};
use sweeping_core::problem::{
    validate_assumptions, ConstraintEval, ConstraintFn, LinearCost, LinearDynamics, ProbeGrid, ProblemSpec,
};
use sweeping_core::registry::{self, builtin};
use sweeping_core::sets::{ControlSet, SimpleSet};
use sweeping_core::trajectory::{ControlSignal, Trajectory};
use sweeping_core::{Error, Matrix, Vector};

fn v(xs: &[f64]) -> Vector {
    Vector::from_column_slice(xs)
}

fn full_throttle(horizon: f64) -> registry::Builtin {
    builtin("example1", &BTreeMap::from([("horizon".to_string(), horizon)])).unwrap()
}

fn terminal_error(a: &Trajectory, b: &Trajectory) -> f64 {
    (a.final_state() - b.final_state()).norm()
}

#[test]
fn catchup_is_exact_before_contact() {
    let b = full_throttle(0.6);
    let traj = catchup_simulate(&b.spec, &b.control, &b.x0, 20_000).unwrap();
    for (t, x) in traj.grid.iter().zip(&traj.states) {
        if *t <= 0.24 {
            assert!((x - (&b.x0 + v(&[*t, 0.0]))).norm() <= 1e-12, "t = {t}");
        }
    }
}

#[test]
fn catchup_rides_the_boundary() {
    let b = full_throttle(0.6);
    let traj = catchup_simulate(&b.spec, &b.control, &b.x0, 20_000).unwrap();
    let worst = traj
        .grid
        .iter()
        .zip(&traj.states)
        .filter(|(t, _)| (0.26..=0.6).contains(*t))
        .map(|(t, x)| (x.norm() - rho(*t)).abs())
        .fold(0.0, f64::max);
    assert!(worst <= 2e-3, "worst radial gap {worst}");
}

#[test]
fn catchup_converges_at_first_order() {
    let b = full_throttle(0.6);
    let reference = catchup_simulate(&b.spec, &b.control, &b.x0, 80_000).unwrap();
    let errs: Vec<f64> = [1000, 2000, 4000]
        .iter()
        .map(|&n| terminal_error(&catchup_simulate(&b.spec, &b.control, &b.x0, n).unwrap(), &reference))
        .collect();
    for w in errs.windows(2) {
        let factor = w[0] / w[1];
        assert!((1.5..=3.0).contains(&factor), "errors {errs:?}");
    }
}

#[test]
fn example1_constants_match_closed_forms() {
    let b = registry::example1(0.05).unwrap();
    let report = validate_assumptions(&b.spec, &ProbeGrid::default()).unwrap();
    // smallest |∇ψ| = 2|x| on the band |x|² ≥ ρ_min² − β
    let eta = 2.0 * (0.25f64.powi(2) - report.beta).sqrt();
    assert!((report.eta - eta).abs() <= 1e-3, "eta {} vs {eta}", report.eta);
    assert!((report.m_bound - 1.0).abs() <= 1e-12);
    assert!(report.passed());
}

struct Quartic;

impl ConstraintFn for Quartic {
    fn dim(&self) -> usize {
        1
    }

    fn eval(&self, _t: f64, x: &Vector) -> ConstraintEval {
        let s = x[0];
        ConstraintEval {
            value: s.powi(4) - s * s,
            grad: v(&[4.0 * s.powi(3) - 2.0 * s]),
            hess: Matrix::from_element(1, 1, 12.0 * s * s - 2.0),
            dt: 0.0,
            dt_grad: v(&[0.0]),
        }
    }
}

#[test]
fn vanishing_gradient_in_band_is_reported() {
    let spec = ProblemSpec {
        name: "quartic".into(),
        dynamics: Arc::new(LinearDynamics {
            a: Matrix::zeros(1, 1),
            b: Matrix::from_element(1, 1, 1.0),
        }),
        constraint: Arc::new(Quartic),
        controls: ControlSet::interval(-1.0, 1.0),
        initial_set: SimpleSet::point(&v(&[0.5])),
        terminal_set: SimpleSet::ball(&v(&[0.0]), 1.0).unwrap(),
        cost: Arc::new(LinearCost { c: v(&[1.0]) }),
        horizon: 1.0,
        probe_box: (v(&[-2.0]), v(&[2.0])),
    };
    let grid = ProbeGrid { beta: 0.3, ..ProbeGrid::default() };
    match validate_assumptions(&spec, &grid) {
        Err(Error::VanishingGradient { grad_norm, .. }) => assert!(grad_norm < 0.5),
        other => panic!("expected a vanishing gradient, got {other:?}"),
    }
}

fn static_family(u: f64) -> (registry::Builtin, sweeping_core::integrate::FamilyReport) {
    let b = builtin("static-disc", &BTreeMap::from([("u".to_string(), u)])).unwrap();
    let report = validate_assumptions(&b.spec, &ProbeGrid::default()).unwrap();
    let schedule = PenaltySchedule::build(&ScheduleConfig::default(), report.mu, report.eta).unwrap();
    let fam = run_family(&b.spec, &b.control, &schedule, &b.x0, &FamilyOptions::default()).unwrap();
    (b, fam)
}

#[test]
fn static_disc_agrees_before_contact() {
    let (_, fam) = static_family(1.0);
    let oracle = fam.oracle.as_ref().unwrap();
    for traj in fam.trajectories.iter().flatten().chain([oracle]) {
        for i in 0..100 {
            let t = i as f64 / 100.0;
            let gap = (traj.state_at(t) - v(&[t, 0.0])).norm();
            assert!(gap <= 1e-3, "gap {gap} at t = {t}");
        }
    }
    assert!(fam.members.iter().all(|m| m.error.is_none()));
}

#[test]
fn interior_trajectory_has_no_penalty_gap() {
    let (_, fam) = static_family(0.2);
    for m in &fam.members {
        assert!(m.sup_gap.unwrap() <= 10.0 * IntegratorOptions::default().tol, "{m:?}");
    }
}

#[test]
fn family_records_per_level_failures() {
    let b = registry::example1(0.05).unwrap();
    let report = validate_assumptions(&b.spec, &ProbeGrid::default()).unwrap();
    let schedule = PenaltySchedule::build(&ScheduleConfig::default(), report.mu, report.eta).unwrap();
    let opts = FamilyOptions {
        integrator: IntegratorOptions { max_steps: 2000, ..IntegratorOptions::default() },
        ..FamilyOptions::default()
    };
    let fam = run_family(&b.spec, &b.control, &schedule, &b.x0, &opts).unwrap();
    assert_eq!(fam.members.len(), schedule.len());
    assert!(fam.members[0].error.is_none());
    let last = fam.members.last().unwrap();
    assert!(last.error.as_deref().is_some_and(|e| e.contains("budget")), "{last:?}");
    assert!(last.sup_gap.is_none());
}

#[test]
fn interior_multipliers_are_exponentially_small() {
    let b = registry::example1(0.05).unwrap();
    let report = validate_assumptions(&b.spec, &ProbeGrid::default()).unwrap();
    let schedule = PenaltySchedule::build(&ScheduleConfig::default(), report.mu, report.eta).unwrap();
    let level = schedule.level(schedule.len() - 1);
    let traj = integrate_forward(&b.spec, &b.control, &level, &b.x0, &IntegratorOptions::default()).unwrap();
    let arc =
        integrate_adjoint_backward(&b.spec, &traj, &v(&[1.0, 0.0]), 0.0, &level, &AdjointOptions::default()).unwrap();
    let profile = multiplier_profile(&arc, &traj, 1e-2).unwrap();
    let t2 = b.example1.as_ref().unwrap().t2;
    for (t, inside) in traj.grid.iter().zip(&profile.ib_mask) {
        if *t <= 0.2 {
            assert!(*inside, "t = {t}");
        }
        if (0.3..t2).contains(t) {
            assert!(!*inside, "t = {t}");
        }
    }
    assert!(profile.ib_exponentially_small);
}

#[test]
fn vanishing_drift_recovers_example1_switch() {
    let b = registry::example2(0.05, 1e-4).unwrap();
    let t2 = b.example1.as_ref().unwrap().t2;
    let opts = SearchOptions { adversaries: 4, ..SearchOptions::default() };
    let search = example2_search(&b.spec, &b.x0, &opts).unwrap();
    let resolution = b.spec.horizon / opts.switch_points as f64;
    assert!((search.best_switch - t2).abs() <= 2.0 * resolution, "switch {} vs {t2}", search.best_switch);
}

#[test]
fn low_throttle_stays_off_the_boundary_early() {
    let b = registry::example2(0.05, 0.05).unwrap();
    let u = ControlSignal::constant(v(&[-0.05]), b.spec.horizon, &b.spec.controls).unwrap();
    let traj = catchup_simulate(&b.spec, &u, &b.x0, 20_000).unwrap();
    for (t, psi) in traj.grid.iter().zip(&traj.psi) {
        if *t <= 0.25 {
            assert!(*psi < -1e-3, "psi {psi} at t = {t}");
        }
    }
}
