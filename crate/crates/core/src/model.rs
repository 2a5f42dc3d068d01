//! Continuous-time and discrete-time parameterizations of the model.
//!
//! Continuous time (unit: milliseconds):
//!
//! ```text
//! d log S_t     = μ̂ dt + σ̂_t √dt ε₁
//! d log σ̂_t     = −θ̂ (log σ̂_t − α̂) dt + τ̂ √dt ε₂,     corr(ε₁, ε₂) = ρ
//! ```
//!
//! At a sampling period `Δ` the exact OU solution gives the discrete
//! recursion with `μ(Δ) = μ̂Δ`, `θ(Δ) = e^(−θ̂Δ)`, `α(Δ) = α̂ + ½ log Δ`
//! and `τ(Δ)² = τ̂² (1 − e^(−2θ̂Δ)) / (2θ̂)`. The discrete volatility
//! `σ_j` multiplies the return from `j − 1` to `j` and equals `σ̂ √Δ`.

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuousParams {
    /// Drift per millisecond.
    pub mu_hat: f64,
    /// Mean-reversion rate per millisecond.
    pub theta_hat: f64,
    /// Stationary mean of log-volatility (time unit ms).
    pub alpha_hat: f64,
    /// Vol-of-vol variance rate per millisecond.
    pub tau_sq_hat: f64,
    pub rho: f64,
    /// Microstructure noise variance on the log-price scale.
    pub xi_sq: f64,
}

impl ContinuousParams {
    pub fn new(mu_hat: f64, theta_hat: f64, alpha_hat: f64, tau_sq_hat: f64, rho: f64, xi_sq: f64) -> Result<Self> {
        let p = Self { mu_hat, theta_hat, alpha_hat, tau_sq_hat, rho, xi_sq };
        p.validate()?;
        Ok(p)
    }

    /// Simulation truth used throughout the studies: roughly S&P 500 levels,
    /// a 30 minute log-volatility inertia and a $0.10 spread on a $100 price.
    pub fn reference_day() -> Self {
        Self {
            mu_hat: 1.7e-12,
            theta_hat: 5.6e-7,
            alpha_hat: -13.0,
            tau_sq_hat: 1.3e-7,
            rho: 0.0,
            xi_sq: 2.5e-7,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mu_hat.is_finite() {
            return Err(Error::domain("mu_hat", "must be finite"));
        }
        if !(self.theta_hat > 0.0 && self.theta_hat.is_finite()) {
            return Err(Error::domain("theta_hat", alloc::format!("must be positive, got {}", self.theta_hat)));
        }
        if !self.alpha_hat.is_finite() {
            return Err(Error::domain("alpha_hat", "must be finite"));
        }
        if !(self.tau_sq_hat > 0.0 && self.tau_sq_hat.is_finite()) {
            return Err(Error::domain("tau_sq_hat", alloc::format!("must be positive, got {}", self.tau_sq_hat)));
        }
        if !(-1.0..=1.0).contains(&self.rho) {
            return Err(Error::domain("rho", alloc::format!("must lie in [-1, 1], got {}", self.rho)));
        }
        if !(self.xi_sq >= 0.0 && self.xi_sq.is_finite()) {
            return Err(Error::domain("xi_sq", alloc::format!("must be non-negative, got {}", self.xi_sq)));
        }
        Ok(())
    }
}

/// Parameters of the discrete recursion at sampling period `delta_ms`.
///
/// The autocorrelation is stored through its logarithm `ln θ(Δ) = −θ̂Δ`
/// so that the map back to continuous time stays exact when `θ(Δ)` is
/// within a few ulps of 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscreteParams {
    pub delta_ms: f64,
    pub mu: f64,
    pub ln_theta: f64,
    pub alpha: f64,
    pub tau_sq: f64,
    pub rho: f64,
    pub xi_sq: f64,
}

impl DiscreteParams {
    pub fn new(delta_ms: f64, mu: f64, theta: f64, alpha: f64, tau_sq: f64, rho: f64, xi_sq: f64) -> Result<Self> {
        let p = Self { delta_ms, mu, ln_theta: theta.ln(), alpha, tau_sq, rho, xi_sq };
        p.validate()?;
        Ok(p)
    }

    pub fn theta(&self) -> f64 {
        self.ln_theta.exp()
    }

    pub fn set_theta(&mut self, theta: f64) {
        self.ln_theta = theta.ln();
    }

    pub fn tau(&self) -> f64 {
        self.tau_sq.sqrt()
    }

    /// `1 − θ(Δ)²`, accurate when `θ(Δ)` is close to 1.
    pub fn one_minus_theta_sq(&self) -> f64 {
        -(2.0 * self.ln_theta).exp_m1()
    }

    /// `τ(Δ)² / (1 − θ(Δ)²)`, the stationary variance of `log σ_j`.
    pub fn stationary_variance(&self) -> f64 {
        self.tau_sq / self.one_minus_theta_sq()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta_ms > 0.0 && self.delta_ms.is_finite()) {
            return Err(Error::domain("delta_ms", "must be positive and finite"));
        }
        if !self.mu.is_finite() {
            return Err(Error::domain("mu", "must be finite"));
        }
        if !(self.ln_theta < 0.0 && self.ln_theta.is_finite()) {
            return Err(Error::domain(
                "theta",
                alloc::format!("must lie in the open interval (0, 1), got {}", self.theta()),
            ));
        }
        if !self.alpha.is_finite() {
            return Err(Error::domain("alpha", "must be finite"));
        }
        if !(self.tau_sq > 0.0 && self.tau_sq.is_finite()) {
            return Err(Error::domain("tau_sq", alloc::format!("must be positive, got {}", self.tau_sq)));
        }
        if !(-1.0..=1.0).contains(&self.rho) {
            return Err(Error::domain("rho", alloc::format!("must lie in [-1, 1], got {}", self.rho)));
        }
        if !(self.xi_sq >= 0.0 && self.xi_sq.is_finite()) {
            return Err(Error::domain("xi_sq", "must be non-negative"));
        }
        if !self.stationary_variance().is_finite() {
            return Err(Error::domain("tau_sq", "stationary variance is not finite"));
        }
        Ok(())
    }
}

/// Prior on the initial true log price, `log S₀ ~ N(eta, kappa_sq)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialConditions {
    pub eta: f64,
    pub kappa_sq: f64,
}

impl InitialConditions {
    pub fn new(eta: f64, kappa_sq: f64) -> Result<Self> {
        if !eta.is_finite() {
            return Err(Error::domain("eta", "must be finite"));
        }
        if !(kappa_sq > 0.0 && kappa_sq.is_finite()) {
            return Err(Error::domain("kappa_sq", "must be positive"));
        }
        Ok(Self { eta, kappa_sq })
    }
}

/// `(1 − e^(−x)) / x`, continuous at 0.
pub(crate) fn one_minus_exp_over(x: f64) -> f64 {
    if x.abs() < 1e-300 {
        1.0
    } else {
        -(-x).exp_m1() / x
    }
}

pub fn discretize(p: &ContinuousParams, delta_ms: f64) -> Result<DiscreteParams> {
    p.validate()?;
    if !(delta_ms > 0.0 && delta_ms.is_finite()) {
        return Err(Error::domain("delta_ms", alloc::format!("must be positive, got {delta_ms}")));
    }
    let x = p.theta_hat * delta_ms;
    let d = DiscreteParams {
        delta_ms,
        mu: p.mu_hat * delta_ms,
        ln_theta: -x,
        alpha: p.alpha_hat + 0.5 * delta_ms.ln(),
        // τ̂² (1 − e^(−2θ̂Δ)) / (2θ̂) = τ̂² Δ · (1 − e^(−2x)) / (2x)
        tau_sq: p.tau_sq_hat * delta_ms * one_minus_exp_over(2.0 * x),
        rho: p.rho,
        xi_sq: p.xi_sq,
    };
    for (field, v) in [("mu", d.mu), ("theta", d.theta()), ("alpha", d.alpha), ("tau_sq", d.tau_sq)] {
        if !v.is_finite() {
            return Err(Error::domain(field, "non-finite after discretization"));
        }
    }
    if d.theta() <= 0.0 {
        return Err(Error::domain("theta", "θ̂Δ overflows: θ(Δ) underflows to 0"));
    }
    if d.tau_sq <= 0.0 {
        return Err(Error::domain("tau_sq", "underflows to 0"));
    }
    Ok(d)
}

pub fn continuize(d: &DiscreteParams) -> Result<ContinuousParams> {
    d.validate()?;
    let delta = d.delta_ms;
    let theta_hat = -d.ln_theta / delta;
    let p = ContinuousParams {
        mu_hat: d.mu / delta,
        theta_hat,
        alpha_hat: d.alpha - 0.5 * delta.ln(),
        tau_sq_hat: d.tau_sq * 2.0 * theta_hat / d.one_minus_theta_sq(),
        rho: d.rho,
        xi_sq: d.xi_sq,
    };
    p.validate()?;
    Ok(p)
}

/// Mean and variance of the stationary law of `log σ̂_t`.
pub fn stationary_logvol(p: &ContinuousParams) -> (f64, f64) {
    (p.alpha_hat, p.tau_sq_hat / (2.0 * p.theta_hat))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn worked_discretization() {
        let p = ContinuousParams { xi_sq: 0.0, ..ContinuousParams::reference_day() };
        let d = discretize(&p, 3e5).unwrap();
        assert!(rel(d.mu, 5.1e-7) < 1e-12);
        // independent high-precision evaluation of the transforms
        assert!(rel(d.theta(), 0.845_353_834_684_658_7) < 1e-13);
        assert!(rel(d.alpha, -6.694_231_123_180_831) < 1e-13);
        assert!(rel(d.tau_sq, 0.033_124_103_789_207_64) < 1e-12);
    }

    #[test]
    fn unit_step_leaves_drift_and_level() {
        let p = ContinuousParams::reference_day();
        let d = discretize(&p, 1.0).unwrap();
        assert_eq!(d.mu, p.mu_hat);
        assert_eq!(d.alpha, p.alpha_hat);
    }

    #[test]
    fn small_step_limit() {
        let p = ContinuousParams::reference_day();
        let d = discretize(&p, 1e-3).unwrap();
        assert!(rel(d.tau_sq / 1e-3, p.tau_sq_hat) < 1e-6);
    }

    #[test]
    fn inverse_of_worked_example() {
        let d = DiscreteParams::new(3e5, 0.0, 0.8454, -6.7, 0.03, 0.0, 0.0).unwrap();
        let p = continuize(&d).unwrap();
        assert!(rel(p.theta_hat, 5.6e-7) < 1e-3);
    }

    #[test]
    fn unit_theta_is_rejected() {
        let d = DiscreteParams { delta_ms: 3e5, mu: 0.0, ln_theta: 0.0, alpha: 0.0, tau_sq: 0.1, rho: 0.0, xi_sq: 0.0 };
        assert!(matches!(continuize(&d), Err(Error::Domain { field: "theta", .. })));
        assert!(DiscreteParams::new(1.0, 0.0, 1.0, 0.0, 0.1, 0.0, 0.0).is_err());
    }

    #[test]
    fn overflow_names_the_field() {
        let p = ContinuousParams { theta_hat: 1.0, ..ContinuousParams::reference_day() };
        match discretize(&p, 1e300) {
            Err(Error::Domain { field, .. }) => assert!(field == "theta" || field == "tau_sq" || field == "mu"),
            other => panic!("expected domain error, got {other:?}"),
        }
    }

    #[test]
    fn stationary_law() {
        let (m, v) = stationary_logvol(&ContinuousParams::reference_day());
        assert_eq!(m, -13.0);
        assert!(rel(v, 1.3e-7 / 1.12e-6) < 1e-15);
        let q = ContinuousParams { theta_hat: 1.0, tau_sq_hat: 2.0, ..ContinuousParams::reference_day() };
        assert_eq!(stationary_logvol(&q).1, 1.0);
    }

    fn params() -> impl Strategy<Value = ContinuousParams> {
        (-1e-10..1e-10f64, 1e-9..1e-4f64, -20.0..0.0f64, 1e-10..1e-5f64, -1.0..=1.0f64, 0.0..1e-5f64)
            .prop_map(|(mu_hat, theta_hat, alpha_hat, tau_sq_hat, rho, xi_sq)| ContinuousParams {
                mu_hat,
                theta_hat,
                alpha_hat,
                tau_sq_hat,
                rho,
                xi_sq,
            })
    }

    proptest! {
        #[test]
        fn round_trip(p in params(), delta in prop::sample::select(&[1.0, 1e3, 1.5e4, 3e5][..])) {
            let q = continuize(&discretize(&p, delta).unwrap()).unwrap();
            prop_assert!((q.mu_hat - p.mu_hat).abs() <= 1e-12 * p.mu_hat.abs());
            prop_assert!(rel(q.theta_hat, p.theta_hat) < 1e-12);
            prop_assert!(rel(q.alpha_hat, p.alpha_hat) < 1e-12);
            prop_assert!(rel(q.tau_sq_hat, p.tau_sq_hat) < 1e-12);
            prop_assert_eq!(q.rho, p.rho);
            prop_assert_eq!(q.xi_sq, p.xi_sq);
        }

        #[test]
        fn semigroup_and_stationarity(p in params(), delta in 1.0..1e5f64) {
            let one = discretize(&p, delta).unwrap();
            let two = discretize(&p, 2.0 * delta).unwrap();
            prop_assert!(rel(two.theta(), one.theta() * one.theta()) < 1e-12);
            prop_assert!(rel(two.tau_sq, one.tau_sq * (1.0 + one.theta() * one.theta())) < 1e-12);
            prop_assert!((two.mu - 2.0 * one.mu).abs() <= 1e-12 * two.mu.abs());
            let (_, v) = stationary_logvol(&p);
            prop_assert!(rel(one.stationary_variance(), v) < 1e-12);
            prop_assert!(two.theta() < one.theta());
            prop_assert!(two.tau_sq > one.tau_sq);
        }
    }
}
