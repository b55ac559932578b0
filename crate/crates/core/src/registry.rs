//! Built-in problems addressable by name: `example1`, `example2`, `static-disc`.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::examples::{example1_params, rho, rho_dot, Example1Params};
use crate::problem::{LinearCost, LinearDynamics, MovingDisc, ProblemSpec};
use crate::sets::{ControlSet, SimpleSet};
use crate::trajectory::ControlSignal;
use crate::{Error, Matrix, Result, Vector};

pub const NAMES: [&str; 3] = ["example1", "example2", "static-disc"];

/// A registered problem with its natural initial state and default control.
#[derive(Clone, Debug)]
pub struct Builtin {
    pub spec: ProblemSpec,
    pub x0: Vector,
    pub control: ControlSignal,
    pub example1: Option<Example1Params>,
    /// Effective parameter values after overrides.
    pub params: BTreeMap<String, f64>,
}

pub fn builtin(name: &str, overrides: &BTreeMap<String, f64>) -> Result<Builtin> {
    let allowed: &[&str] = match name {
        "example1" => &["mu_ctrl", "horizon"],
        "example2" => &["mu_ctrl", "sigma_drift", "horizon"],
        "static-disc" => &["radius", "horizon", "u"],
        _ => return Err(Error::UnknownProblem(name.to_string())),
    };
    if let Some(key) = overrides.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(Error::UnknownParameter {
            problem: name.to_string(),
            key: key.clone(),
        });
    }
    let get = |k: &str, default: f64| overrides.get(k).copied().unwrap_or(default);
    match name {
        "example1" => {
            let mut b = example1(get("mu_ctrl", 0.05))?;
            if let Some(&h) = overrides.get("horizon") {
                b = with_horizon(b, h)?;
            }
            Ok(b)
        }
        "example2" => {
            let mut b = example2(get("mu_ctrl", 0.05), get("sigma_drift", 0.05))?;
            if let Some(&h) = overrides.get("horizon") {
                b = with_horizon(b, h)?;
            }
            Ok(b)
        }
        _ => static_disc(overrides),
    }
}

/// Replaces the horizon and, for the disc examples, the default control with
/// `u ≡ max U`.
fn with_horizon(mut b: Builtin, horizon: f64) -> Result<Builtin> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::invalid(format!("horizon must be positive, got {horizon}")));
    }
    b.spec.horizon = horizon;
    b.control = ControlSignal::constant(Vector::from_element(1, 1.0), horizon, &b.spec.controls)?;
    b.params.insert("horizon".into(), horizon);
    Ok(b)
}

fn disc_problem(name: &str, a: Matrix, params: &Example1Params) -> Result<ProblemSpec> {
    let x0 = Example1Params::initial_state();
    let spec = ProblemSpec {
        name: name.to_string(),
        dynamics: Arc::new(LinearDynamics {
            a,
            b: Matrix::from_column_slice(2, 1, &[1.0, 0.0]),
        }),
        constraint: Arc::new(MovingDisc::new(Vector::zeros(2), |t| (rho(t), rho_dot(t)))),
        controls: ControlSet::interval(-params.mu_ctrl, 1.0),
        initial_set: SimpleSet::point(&x0),
        terminal_set: SimpleSet::ball(&Vector::zeros(2), params.r_t)?,
        cost: Arc::new(LinearCost {
            c: Vector::from_column_slice(&[-1.0, 0.0]),
        }),
        horizon: params.horizon,
        probe_box: (Vector::from_element(2, -2.25), Vector::from_element(2, 2.25)),
    };
    spec.check()?;
    Ok(spec)
}

/// `ẋ = (u, 0) − N_{C(t)}(x)` with `u ∈ [−μ̂, 1]`.
pub fn example1(mu_ctrl: f64) -> Result<Builtin> {
    let params = example1_params(mu_ctrl)?;
    let spec = disc_problem("example1", Matrix::zeros(2, 2), &params)?;
    let control = params.optimal_control(&spec.controls)?;
    Ok(Builtin {
        x0: Example1Params::initial_state(),
        control,
        params: BTreeMap::from([
            ("mu_ctrl".to_string(), mu_ctrl),
            ("horizon".to_string(), params.horizon),
        ]),
        example1: Some(params),
        spec,
    })
}

/// `ẋ = (u, −σ_d x₁) − N_{C(t)}(x)` on the same disc, endpoints and cost.
pub fn example2(mu_ctrl: f64, sigma_drift: f64) -> Result<Builtin> {
    if !(sigma_drift > 0.0 && sigma_drift.is_finite()) {
        return Err(Error::ExampleParams(format!(
            "sigma_drift must be positive, got {sigma_drift}"
        )));
    }
    let params = example1_params(mu_ctrl)?;
    let a = Matrix::from_row_slice(2, 2, &[0.0, 0.0, -sigma_drift, 0.0]);
    let spec = disc_problem("example2", a, &params)?;
    let control = params.optimal_control(&spec.controls)?;
    Ok(Builtin {
        x0: Example1Params::initial_state(),
        control,
        params: BTreeMap::from([
            ("mu_ctrl".to_string(), mu_ctrl),
            ("sigma_drift".to_string(), sigma_drift),
            ("horizon".to_string(), params.horizon),
        ]),
        example1: Some(params),
        spec,
    })
}

/// `ψ = |x|² − R²`, `f = (u, 0)`, `u ∈ [−1, 1]`, started at the origin.
pub fn static_disc(overrides: &BTreeMap<String, f64>) -> Result<Builtin> {
    let radius = overrides.get("radius").copied().unwrap_or(1.0);
    let horizon = overrides.get("horizon").copied().unwrap_or(2.0);
    let u = overrides.get("u").copied().unwrap_or(1.0);
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::invalid(format!("radius must be positive, got {radius}")));
    }
    let x0 = Vector::zeros(2);
    let spec = ProblemSpec {
        name: "static-disc".into(),
        dynamics: Arc::new(LinearDynamics {
            a: Matrix::zeros(2, 2),
            b: Matrix::from_column_slice(2, 1, &[1.0, 0.0]),
        }),
        constraint: Arc::new(MovingDisc::new(Vector::zeros(2), move |_| (radius, 0.0))),
        controls: ControlSet::interval(-1.0, 1.0),
        initial_set: SimpleSet::point(&x0),
        terminal_set: SimpleSet::ball(&Vector::zeros(2), radius)?,
        cost: Arc::new(LinearCost {
            c: Vector::from_column_slice(&[-1.0, 0.0]),
        }),
        horizon,
        probe_box: (
            Vector::from_element(2, -(radius + 1.25)),
            Vector::from_element(2, radius + 1.25),
        ),
    };
    spec.check()?;
    let control = ControlSignal::constant(Vector::from_element(1, u), horizon, &spec.controls)?;
    Ok(Builtin {
        spec,
        x0,
        control,
        example1: None,
        params: BTreeMap::from([
            ("radius".to_string(), radius),
            ("horizon".to_string(), horizon),
            ("u".to_string(), u),
        ]),
    })
}
