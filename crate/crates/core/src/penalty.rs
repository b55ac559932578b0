//! The exponential penalty field and the `(γ_k, σ_k)` schedule.
//!
//! The normal cone `N_{C(t)}(x)` is replaced by `γ e^{γ(ψ − σ)} ∇_x ψ`. With
//! `μ(γ) = (1/γ) log(μ/(η²γ))`, trajectories started in the inflated set
//! `C^k(t) = {ψ − σ_k ≤ μ(γ_k)}` stay there, and the multiplier
//! `γ_k e^{γ_k(ψ − σ_k)}` never exceeds `μ/η²`.

use serde::Serialize;

use crate::problem::ProblemSpec;
use crate::{Error, Result, Vector};

/// Exponents above this are treated as an integration failure.
pub const MAX_EXPONENT: f64 = 700.0;

/// `μ(γ) = (1/γ) log(μ / (η² γ))`; all arguments must be positive.
pub fn mu_gamma(gamma: f64, mu: f64, eta: f64) -> f64 {
    debug_assert!(gamma > 0.0 && mu > 0.0 && eta > 0.0);
    (mu / (eta * eta * gamma)).ln() / gamma
}

/// Smallest power-of-two multiple `γ` of `max(1, μ/η²)` such that
/// `μ(γ') > −σ/2` for every `γ' ≥ γ`.
pub fn choose_gamma(sigma: f64, mu: f64, eta: f64) -> Result<f64> {
    choose_gamma_with_margin(sigma, 0.5, mu, eta)
}

/// [`choose_gamma`] with the inclusion margin `μ(γ) > −margin·σ`.
///
/// `μ(γ)` is nonnegative up to `c = μ/η²`, decreases to `−1/(c e)` at `γ = c e`
/// and then increases back towards zero, so the condition on `[γ, ∞)` reduces
/// to a single evaluation.
pub fn choose_gamma_with_margin(sigma: f64, margin: f64, mu: f64, eta: f64) -> Result<f64> {
    if !(sigma > 0.0 && margin > 0.0 && mu > 0.0 && eta > 0.0) {
        return Err(Error::invalid(format!(
            "choose_gamma needs positive arguments (sigma={sigma}, margin={margin}, mu={mu}, eta={eta})"
        )));
    }
    let c = mu / (eta * eta);
    let start = c.max(1.0);
    let floor = -margin * sigma;
    let trough = c * std::f64::consts::E;
    let global_min = -1.0 / trough;
    for m in 0..=64 {
        let gamma = start * 2f64.powi(m);
        let ok = if gamma >= trough {
            mu_gamma(gamma, mu, eta) > floor
        } else {
            global_min > floor
        };
        if ok {
            return Ok(gamma);
        }
    }
    Err(Error::IllPosedSchedule { sigma, mu, eta })
}

/// Schedule parameters. `σ_k = sigma_ratio^k` for `k = 1..=levels`.
#[derive(Clone, Debug, Serialize)]
pub struct ScheduleConfig {
    pub levels: usize,
    pub sigma_ratio: f64,
    /// Inclusion margin: `μ(γ_k) > −margin · σ_k`.
    pub margin: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            levels: 8,
            sigma_ratio: 1.0 / 3.0,
            margin: 0.5,
        }
    }
}

/// One member of the penalty family.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PenaltyLevel {
    pub gamma: f64,
    pub sigma: f64,
    /// `μ(γ)`; `+∞` when the constants are unknown and the inflated-set check is skipped.
    pub mu_k: f64,
}

impl PenaltyLevel {
    pub fn new(gamma: f64, sigma: f64, mu: f64, eta: f64) -> Result<Self> {
        Self::check(gamma, sigma)?;
        Ok(PenaltyLevel {
            gamma,
            sigma,
            mu_k: mu_gamma(gamma, mu, eta),
        })
    }

    /// Level without the `μ`, `η` constants; skips the inflated-set precondition.
    pub fn unchecked(gamma: f64, sigma: f64) -> Result<Self> {
        Self::check(gamma, sigma)?;
        Ok(PenaltyLevel {
            gamma,
            sigma,
            mu_k: f64::INFINITY,
        })
    }

    fn check(gamma: f64, sigma: f64) -> Result<()> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::invalid(format!("gamma must be positive, got {gamma}")));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(format!("sigma must be nonnegative, got {sigma}")));
        }
        Ok(())
    }

    /// `ψ − σ ≤ μ(γ)`, i.e. `x ∈ C^k(t)`.
    pub fn in_inflated_set(&self, psi: f64) -> bool {
        psi - self.sigma <= self.mu_k
    }

    /// `γ e^{γ(ψ − σ)}` with the overflow guard.
    pub fn multiplier(&self, t: f64, psi: f64) -> Result<f64> {
        let exponent = self.gamma * (psi - self.sigma);
        if exponent > MAX_EXPONENT {
            return Err(Error::PenaltyOverflow { t, exponent });
        }
        Ok(self.gamma * exponent.exp())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PenaltySchedule {
    pub sigmas: Vec<f64>,
    pub gammas: Vec<f64>,
    pub mu: f64,
    pub eta: f64,
    /// `μ_k = μ(γ_k)`
    pub mus: Vec<f64>,
}

impl PenaltySchedule {
    /// Builds `σ_k` from the ratio and `γ_k = max(choose_gamma(σ_k), 2 γ_{k−1})`.
    pub fn build(cfg: &ScheduleConfig, mu: f64, eta: f64) -> Result<Self> {
        if cfg.levels == 0 {
            return Err(Error::invalid("schedule needs at least one level"));
        }
        if !(cfg.sigma_ratio > 0.0 && cfg.sigma_ratio < 1.0) {
            return Err(Error::invalid(format!(
                "sigma_ratio must lie in (0, 1), got {}",
                cfg.sigma_ratio
            )));
        }
        let mut sigmas = Vec::with_capacity(cfg.levels);
        let mut gammas: Vec<f64> = Vec::with_capacity(cfg.levels);
        for k in 1..=cfg.levels {
            let sigma = cfg.sigma_ratio.powi(k as i32);
            let mut gamma = choose_gamma_with_margin(sigma, cfg.margin, mu, eta)?;
            if let Some(&prev) = gammas.last() {
                gamma = gamma.max(2.0 * prev);
            }
            sigmas.push(sigma);
            gammas.push(gamma);
        }
        let mus = gammas.iter().map(|&g| mu_gamma(g, mu, eta)).collect();
        let s = PenaltySchedule {
            sigmas,
            gammas,
            mu,
            eta,
            mus,
        };
        s.check()?;
        Ok(s)
    }

    /// Checks monotonicity and `μ_k > −σ_k` at every level.
    pub fn check(&self) -> Result<()> {
        if self.sigmas.windows(2).any(|w| !(w[1] < w[0])) || self.sigmas.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::invalid("sigmas must be positive and strictly decreasing"));
        }
        if self.gammas.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("gammas must be strictly increasing"));
        }
        for (k, (&m, &s)) in self.mus.iter().zip(&self.sigmas).enumerate() {
            if !(m > -s) {
                return Err(Error::invalid(format!(
                    "level {}: mu_k = {m} does not exceed -sigma_k = {}",
                    k + 1,
                    -s
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.gammas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gammas.is_empty()
    }

    /// `μ/η²`, the bound on every penalty multiplier.
    pub fn xi_bound(&self) -> f64 {
        self.mu / (self.eta * self.eta)
    }

    /// Level `k` (zero-based).
    pub fn level(&self, k: usize) -> PenaltyLevel {
        PenaltyLevel {
            gamma: self.gammas[k],
            sigma: self.sigmas[k],
            mu_k: self.mus[k],
        }
    }

    pub fn levels(&self) -> Vec<PenaltyLevel> {
        (0..self.len()).map(|k| self.level(k)).collect()
    }

    /// The first `n` levels.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.len() {
            return Err(Error::invalid(format!("cannot keep {n} of {} levels", self.len())));
        }
        Ok(PenaltySchedule {
            sigmas: self.sigmas[..n].to_vec(),
            gammas: self.gammas[..n].to_vec(),
            mu: self.mu,
            eta: self.eta,
            mus: self.mus[..n].to_vec(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct PenaltyEval {
    pub velocity: Vector,
    /// `ξ_k = γ e^{γ(ψ − σ)}`
    pub xi: f64,
    pub psi: f64,
}

/// `ẋ = f(t, x, u) − γ e^{γ(ψ − σ)} ∇_x ψ(t, x)`.
pub fn penalty_rhs(p: &ProblemSpec, t: f64, x: &Vector, u: &Vector, gamma: f64, sigma: f64) -> Result<PenaltyEval> {
    let level = PenaltyLevel::unchecked(gamma, sigma)?;
    penalty_eval(p, t, x, u, &level)
}

pub(crate) fn penalty_eval(p: &ProblemSpec, t: f64, x: &Vector, u: &Vector, level: &PenaltyLevel) -> Result<PenaltyEval> {
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid(format!("non-finite state at t={t}")));
    }
    let ev = p.constraint.eval(t, x);
    let xi = level.multiplier(t, ev.value)?;
    let f = p.dynamics.velocity(t, x, u);
    Ok(PenaltyEval {
        velocity: f - ev.grad * xi,
        xi,
        psi: ev.value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry;
    use std::f64::consts::E;

    #[test]
    fn mu_gamma_values() {
        assert_eq!(mu_gamma(1.0, 1.0, 1.0), 0.0);
        assert!((mu_gamma(1.0, E, 1.0) - 1.0).abs() < 1e-15);
        assert!((mu_gamma(2.0, 4.0, 1.0) - 0.5 * 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn mu_gamma_identity() {
        for &(g, mu, eta) in &[(3.7, 15.5, 0.458), (2048.0, 1.0, 1.0), (1e5, 73.8, 0.4583)] {
            let m = mu_gamma(g, mu, eta);
            let lhs = g * (g * m).exp();
            assert!((lhs / (mu / (eta * eta)) - 1.0).abs() < 1e-12);
        }
    }

    /// Scan oracle: power-of-two multiples, checking the inequality on a dense
    /// log grid above each candidate.
    fn scan_oracle(sigma: f64, mu: f64, eta: f64) -> f64 {
        let start = (mu / (eta * eta)).max(1.0);
        (0..40)
            .map(|m| start * 2f64.powi(m))
            .find(|&g| (0..4000).all(|j| mu_gamma(g * 2f64.powf(j as f64 / 100.0), mu, eta) > -sigma / 2.0))
            .unwrap()
    }

    #[test]
    fn choose_gamma_examples() {
        assert_eq!(choose_gamma(1.0, 1.0, 1.0).unwrap(), 1.0);
        assert_eq!(choose_gamma(0.01, 1.0, 1.0).unwrap(), 2048.0);
        let g = choose_gamma(0.1, E, 1.0).unwrap();
        assert!((g - 32.0 * E).abs() < 1e-12);
        for &(s, mu, eta) in &[(1.0, 1.0, 1.0), (0.01, 1.0, 1.0), (0.1, E, 1.0), (0.003, 15.5, 0.4583)] {
            assert_eq!(choose_gamma(s, mu, eta).unwrap(), scan_oracle(s, mu, eta));
        }
    }

    #[test]
    fn choose_gamma_ill_posed() {
        assert!(matches!(
            choose_gamma(1e-300, 1.0, 1.0),
            Err(Error::IllPosedSchedule { .. })
        ));
        assert!(choose_gamma(-1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn schedule_invariants() {
        let s = PenaltySchedule::build(&ScheduleConfig::default(), 15.5, 0.4583).unwrap();
        assert_eq!(s.len(), 8);
        for k in 0..s.len() {
            let l = s.level(k);
            assert!(l.mu_k > -l.sigma);
            let lhs = l.gamma * (l.gamma * l.mu_k).exp();
            assert!((lhs / s.xi_bound() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rhs_deep_interior_is_free_motion() {
        let p = registry::example1(0.05).unwrap().spec;
        let x = Vector::from_column_slice(&[0.0, 3f64.sqrt() / 4.0]);
        let e = penalty_rhs(&p, 0.0, &x, &Vector::from_element(1, 1.0), 100.0, 0.01).unwrap();
        assert!((e.psi + 1.375).abs() < 1e-15);
        assert!(e.xi < 1e-55);
        assert!((e.velocity - Vector::from_column_slice(&[1.0, 0.0])).norm() < 1e-50);
    }

    #[test]
    fn rhs_at_sigma_level_returns_gamma() {
        let p = registry::example1(0.05).unwrap().spec;
        // choose x with ψ(0, x) = σ exactly: |x|² = ρ(0)² + σ = 1.5625 + 0.0625
        let x = Vector::from_column_slice(&[1.625f64.sqrt(), 0.0]);
        let e = penalty_rhs(&p, 0.0, &x, &Vector::from_element(1, 1.0), 50.0, 0.0625).unwrap();
        assert!((e.xi - 50.0).abs() < 1e-9);
    }

    #[test]
    fn rhs_on_inflated_boundary_hits_bound() {
        let p = registry::example1(0.05).unwrap().spec;
        let (mu, eta, gamma, sigma) = (15.5, 0.4583, 400.0, 0.01);
        let mk = mu_gamma(gamma, mu, eta);
        let rho0 = crate::examples::rho(0.0);
        let x = Vector::from_column_slice(&[(rho0 * rho0 + sigma + mk).sqrt(), 0.0]);
        let e = penalty_rhs(&p, 0.0, &x, &Vector::from_element(1, 1.0), gamma, sigma).unwrap();
        assert!((e.xi / (mu / (eta * eta)) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn rhs_overflow_guard() {
        let p = registry::example1(0.05).unwrap().spec;
        let x = Vector::from_column_slice(&[3.0, 0.0]);
        let r = penalty_rhs(&p, 0.0, &x, &Vector::from_element(1, 1.0), 1000.0, 0.0);
        assert!(matches!(r, Err(Error::PenaltyOverflow { .. })));
    }
}
