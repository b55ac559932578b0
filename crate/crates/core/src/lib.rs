//! Exponential-penalty approximation of controlled sweeping processes.
//!
//! A sweeping process drives a state `x(t)` with `ẋ ∈ f(t, x, u) − N_{C(t)}(x)`,
//! where `C(t) = {x : ψ(t, x) ≤ 0}` is a moving set. This crate replaces the
//! normal cone with the smooth field `γ e^{γ(ψ − σ)} ∇ψ`, integrates the
//! resulting ODE family, cross-checks it against a Moreau catch-up oracle,
//! integrates the penalized adjoint equation backwards and scores candidate
//! multipliers against the Maximum Principle conditions.
//!
//! Module map:
//!
//! * [`problem`]: problem descriptions, assumption probing, boundary multiplier.
//! * [`penalty`]: `μ(γ)`, the `(γ_k, σ_k)` schedule and the penalized vector field.
//! * [`integrate`]: adaptive forward integration and penalty-family convergence runs.
//! * [`catchup`]: projection onto sublevel sets and the catch-up scheme.
//! * [`adjoint`]: backward adjoint arcs and multiplier extraction.
//! * [`mpcheck`]: Maximum Principle residuals and reports.
//! * [`examples`]: closed forms for the two moving-disc examples.
//! * [`registry`]: built-in problems addressable by name.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adjoint;
pub mod catchup;
pub mod error;
pub mod examples;
pub mod exec;
pub mod integrate;
pub mod mpcheck;
mod ode;
pub mod penalty;
pub mod problem;
pub mod registry;
pub mod sets;
pub mod trajectory;

pub use error::{Error, Result};
pub use exec::Execution;

/// Column vector type used for states, controls and costates.
pub type Vector = nalgebra::DVector<f64>;
/// Dense matrix type used for Jacobians and Hessians.
pub type Matrix = nalgebra::DMatrix<f64>;
