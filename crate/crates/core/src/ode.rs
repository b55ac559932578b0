//! Dormand–Prince 5(4) with a caller-supplied step cap.
//!
//! The penalty field is only stiff inside a thin layer around the moving
//! boundary. There the caller caps the step at `factor / λ` where `λ`
//! estimates the largest decay rate; elsewhere the embedded error estimate
//! drives the step size.

use crate::{Error, Result, Vector};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// fifth-order weights minus embedded fourth-order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

#[derive(Clone, Debug)]
pub(crate) struct OdeOptions {
    pub tol: f64,
    pub max_steps: usize,
    /// Initial step magnitude; defaults to a fraction of the span.
    pub h_init: Option<f64>,
}

/// Accepted node: time, state, and derivative at that state.
#[derive(Clone, Debug)]
pub(crate) struct Node {
    pub t: f64,
    pub y: Vector,
    pub dy: Vector,
}

#[derive(Debug, Default)]
pub(crate) struct SolveStats {
    pub accepted: usize,
    pub rejected: usize,
}

/// Integrates `y' = rhs(t, y)` from `t0` to `t1` (either direction).
///
/// `step_cap(t, y)` bounds `|h|` at the accepted state. When `record` is set,
/// every accepted node (including the initial one) is returned; otherwise only
/// the initial and the final node.
pub(crate) fn solve<F, C>(
    mut rhs: F,
    step_cap: C,
    t0: f64,
    y0: Vector,
    t1: f64,
    opts: &OdeOptions,
    record: bool,
) -> Result<(Vec<Node>, SolveStats)>
where
    F: FnMut(f64, &Vector) -> Result<Vector>,
    C: Fn(f64, &Vector) -> f64,
{
    let span = t1 - t0;
    let dir = if span >= 0.0 { 1.0 } else { -1.0 };
    let mut stats = SolveStats::default();

    let dy0 = rhs(t0, &y0)?;
    let mut nodes = vec![Node { t: t0, y: y0, dy: dy0 }];
    if span == 0.0 {
        return Ok((nodes, stats));
    }

    let mut t = t0;
    let mut y = nodes[0].y.clone();
    let mut k1 = nodes[0].dy.clone();
    let mut h = opts.h_init.unwrap_or(span.abs() * 0.01).min(span.abs());

    loop {
        let remaining = (t1 - t).abs();
        if remaining <= 1e-15 * t1.abs().max(1.0) {
            break;
        }
        if stats.accepted >= opts.max_steps {
            return Err(Error::StepBudget {
                t,
                max_steps: opts.max_steps,
            });
        }

        let cap = step_cap(t, &y);
        if cap.is_finite() && cap > 0.0 {
            h = h.min(cap);
        }
        let last = h >= remaining;
        if last {
            h = remaining;
        }
        if h < 1e-14 * t.abs().max(1.0) {
            return Err(Error::StepUnderflow { t, h });
        }

        let hs = dir * h;
        let trial = stages(&mut rhs, t, &y, &k1, hs);
        let (y_new, k7, err) = match trial {
            Ok(v) => v,
            Err(Error::PenaltyOverflow { .. }) => {
                // a stage left the penalty range: the step was far too long
                stats.rejected += 1;
                h *= 0.25;
                continue;
            }
            Err(e) => return Err(e),
        };

        let mut acc = 0.0;
        for i in 0..y.len() {
            let sc = opts.tol + opts.tol * y[i].abs().max(y_new[i].abs());
            acc += (err[i] / sc).powi(2);
        }
        let err_norm = (acc / y.len().max(1) as f64).sqrt();

        if err_norm <= 1.0 && err_norm.is_finite() {
            t = if last { t1 } else { t + hs };
            y = y_new;
            k1 = k7;
            stats.accepted += 1;
            if record || last {
                nodes.push(Node {
                    t,
                    y: y.clone(),
                    dy: k1.clone(),
                });
            }
            let fac = if err_norm == 0.0 {
                5.0
            } else {
                (0.9 * err_norm.powf(-0.2)).clamp(0.2, 5.0)
            };
            h *= fac;
            if last {
                break;
            }
        } else {
            stats.rejected += 1;
            let fac = if err_norm.is_finite() {
                (0.9 * err_norm.powf(-0.2)).clamp(0.1, 0.9)
            } else {
                0.1
            };
            h *= fac;
        }
    }
    Ok((nodes, stats))
}

#[allow(clippy::type_complexity)]
fn stages<F>(rhs: &mut F, t: f64, y: &Vector, k1: &Vector, h: f64) -> Result<(Vector, Vector, Vector)>
where
    F: FnMut(f64, &Vector) -> Result<Vector>,
{
    let k2 = rhs(t + C2 * h, &(y + k1 * (h * A21)))?;
    let k3 = rhs(t + C3 * h, &(y + (k1 * A31 + &k2 * A32) * h))?;
    let k4 = rhs(t + C4 * h, &(y + (k1 * A41 + &k2 * A42 + &k3 * A43) * h))?;
    let k5 = rhs(
        t + C5 * h,
        &(y + (k1 * A51 + &k2 * A52 + &k3 * A53 + &k4 * A54) * h),
    )?;
    let k6 = rhs(
        t + h,
        &(y + (k1 * A61 + &k2 * A62 + &k3 * A63 + &k4 * A64 + &k5 * A65) * h),
    )?;
    let y_new = y + (k1 * A71 + &k3 * A73 + &k4 * A74 + &k5 * A75 + &k6 * A76) * h;
    let k7 = rhs(t + h, &y_new)?;
    let err = (k1 * E1 + &k3 * E3 + &k4 * E4 + &k5 * E5 + &k6 * E6 + &k7 * E7) * h;
    Ok((y_new, k7, err))
}

/// One fixed Dormand–Prince step (fifth-order solution only).
pub(crate) fn fixed_step<F>(rhs: &mut F, t: f64, y: &Vector, h: f64) -> Result<Vector>
where
    F: FnMut(f64, &Vector) -> Result<Vector>,
{
    let k1 = rhs(t, y)?;
    stages(rhs, t, y, &k1, h).map(|(y_new, _, _)| y_new)
}

/// Cubic Hermite interpolation between two nodes.
pub(crate) fn hermite(t0: f64, y0: &Vector, d0: &Vector, t1: f64, y1: &Vector, d1: &Vector, t: f64) -> Vector {
    let h = t1 - t0;
    if h == 0.0 {
        return y0.clone();
    }
    let s = (t - t0) / h;
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    y0 * h00 + d0 * (h10 * h) + y1 * h01 + d1 * (h11 * h)
}
