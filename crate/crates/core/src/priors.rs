//! Moment-matched priors at a sampling period `Δ`.
//!
//! Prior information is supplied as means and standard deviations of the
//! continuous-time parameters. Each discrete parameter gets a conjugate
//! family whose first two moments follow those of the transformed
//! continuous parameter:
//!
//! - `μ(Δ) ~ N(Δ a_μ̂, Δ² b_μ̂²)` and `α(Δ) ~ N(a_α̂ + ½ log Δ, b_α̂²)`, exact.
//! - `θ(Δ)` truncated normal on `[0, 1]`, matched to the moments of `e^(−θ̂Δ)`.
//! - `τ²(Δ)` inverse gamma, matched to delta-method moments of `τ̂² g(θ̂)`.
//! - `ξ²` inverse gamma, `(ρ + 1)/2 ~ Beta(c/2, c/2)`.

use alloc::format;
use alloc::string::String;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;

use crate::dist::{self, norm_interval_mass, norm_pdf};
use crate::error::{Error, Result};
use crate::model::{one_minus_exp_over, DiscreteParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub sd: f64,
}

impl Moments {
    pub const fn new(mean: f64, sd: f64) -> Self {
        Self { mean, sd }
    }

    pub fn var(&self) -> f64 {
        self.sd * self.sd
    }
}

/// Prior means and standard deviations of the continuous-time parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuousPriorMoments {
    pub mu_hat: Moments,
    pub theta_hat: Moments,
    pub alpha_hat: Moments,
    pub tau_sq_hat: Moments,
    pub xi_sq: Moments,
    /// Precision `c` of the symmetric beta prior on `(ρ + 1)/2`.
    pub rho_precision: f64,
}

impl ContinuousPriorMoments {
    /// Means at the simulation truth, standard deviations about an order
    /// of magnitude larger, near-uniform prior on `ρ`.
    pub fn reference_day() -> Self {
        Self {
            mu_hat: Moments::new(1.7e-12, 1e-11),
            theta_hat: Moments::new(5.6e-7, 1e-6),
            alpha_hat: Moments::new(-13.0, 10.0),
            tau_sq_hat: Moments::new(1.3e-7, 1e-6),
            xi_sq: Moments::new(2.5e-7, 1e-6),
            rho_precision: 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            ("mu_hat", self.mu_hat),
            ("theta_hat", self.theta_hat),
            ("alpha_hat", self.alpha_hat),
            ("tau_sq_hat", self.tau_sq_hat),
            ("xi_sq", self.xi_sq),
        ];
        for (field, m) in all {
            if !m.mean.is_finite() {
                return Err(Error::domain(field, "prior mean must be finite"));
            }
            if !(m.sd > 0.0 && m.sd.is_finite()) {
                return Err(Error::domain(field, format!("prior sd must be positive, got {}", m.sd)));
            }
        }
        for (field, m) in [("theta_hat", self.theta_hat), ("tau_sq_hat", self.tau_sq_hat), ("xi_sq", self.xi_sq)] {
            if m.mean <= 0.0 {
                return Err(Error::domain(field, format!("prior mean must be positive, got {}", m.mean)));
            }
        }
        if !(self.rho_precision > 0.0 && self.rho_precision.is_finite()) {
            return Err(Error::domain("rho_precision", "must be positive"));
        }
        Ok(())
    }
}

/// Beta precision giving `ρ` the requested prior standard deviation,
/// `sd(ρ) = 1/√(c + 1)`. Requests at or above the uniform's `1/√3` map to
/// the uniform (`c = 2`); the flag reports that the request was capped.
pub fn rho_precision_for_sd(sd: f64) -> Result<(f64, bool)> {
    if !(sd > 0.0) {
        return Err(Error::domain("rho_sd", "must be positive"));
    }
    let uniform_sd = 1.0 / 3f64.sqrt();
    if sd >= uniform_sd {
        Ok((2.0, sd > uniform_sd))
    } else {
        Ok((1.0 / (sd * sd) - 1.0, false))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalPrior {
    pub mean: f64,
    pub var: f64,
}

impl NormalPrior {
    pub fn ln_pdf(&self, x: f64) -> f64 {
        dist::ln_norm_pdf(x, self.mean, self.var)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        dist::normal(rng, self.mean, self.var.sqrt())
    }
}

/// `N(a, b²)` restricted to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncNormalPrior {
    pub a: f64,
    pub b: f64,
}

impl TruncNormalPrior {
    pub fn moments(&self) -> Result<(f64, f64)> {
        truncnorm_moments(self.a, self.b, 0.0, 1.0)
    }

    /// Log density up to the normalizing constant.
    pub fn ln_kernel(&self, x: f64) -> f64 {
        if !(0.0..=1.0).contains(&x) {
            return f64::NEG_INFINITY;
        }
        let z = (x - self.a) / self.b;
        -0.5 * z * z
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        let z0 = norm_interval_mass(-self.a / self.b, (1.0 - self.a) / self.b);
        self.ln_kernel(x) - (self.b * z0 * (2.0 * core::f64::consts::PI).sqrt()).ln()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        dist::truncated_normal(rng, self.a, self.b, 0.0, 1.0)
    }
}

/// Density `∝ x^(−shape−1) exp(−rate/x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvGammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl InvGammaPrior {
    pub fn mean(&self) -> f64 {
        self.rate / (self.shape - 1.0)
    }

    pub fn var(&self) -> f64 {
        let m = self.mean();
        m * m / (self.shape - 2.0)
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        dist::ln_inv_gamma_pdf(x, self.shape, self.rate)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        dist::inv_gamma(rng, self.shape, self.rate)
    }
}

/// `(ρ + 1)/2 ~ Beta(c/2, c/2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhoPrior {
    pub c: f64,
}

impl RhoPrior {
    pub fn sd(&self) -> f64 {
        1.0 / (self.c + 1.0).sqrt()
    }

    pub fn ln_pdf(&self, rho: f64) -> f64 {
        if !(-1.0 < rho && rho < 1.0) {
            return f64::NEG_INFINITY;
        }
        let h = 0.5 * self.c;
        let u = 0.5 * (rho + 1.0);
        dist::ln_gamma(self.c) - 2.0 * dist::ln_gamma(h) + (h - 1.0) * (u.ln() + (1.0 - u).ln()) - 2f64.ln()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        Ok(2.0 * dist::beta(rng, 0.5 * self.c, 0.5 * self.c)? - 1.0)
    }
}

/// Which moment targets the `θ(Δ)` prior was matched to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThetaRule {
    /// Second-order Taylor moments of `e^(−θ̂Δ)` around the prior mean.
    DeltaMethod,
    /// Exact moments of `e^(−θ̂Δ)` for `θ̂` normal truncated to `θ̂ > 0`.
    /// Used when no truncated normal on `[0, 1]` has the Taylor moments.
    ExactMoments,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePriorSpec {
    pub delta_ms: f64,
    pub mu: NormalPrior,
    pub theta: TruncNormalPrior,
    pub theta_rule: ThetaRule,
    pub alpha: NormalPrior,
    pub tau_sq: InvGammaPrior,
    pub xi_sq: InvGammaPrior,
    pub rho: RhoPrior,
}

impl DiscretePriorSpec {
    /// Draws a full parameter set from the prior (`ξ²` included).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DiscreteParams> {
        let theta = loop {
            let t = self.theta.sample(rng)?;
            // The closed interval has zero-probability endpoints the model excludes.
            if t > 0.0 && t < 1.0 {
                break t;
            }
        };
        DiscreteParams::new(
            self.delta_ms,
            self.mu.sample(rng),
            theta,
            self.alpha.sample(rng),
            self.tau_sq.sample(rng)?,
            self.rho.sample(rng)?,
            self.xi_sq.sample(rng)?,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu.var > 0.0 && self.alpha.var > 0.0) {
            return Err(Error::domain("prior", "normal prior variances must be positive"));
        }
        if !(self.theta.b > 0.0) {
            return Err(Error::domain("theta_b", "truncated normal scale must be positive"));
        }
        for (field, ig) in [("tau_sq", self.tau_sq), ("xi_sq", self.xi_sq)] {
            if !(ig.shape > 0.0 && ig.rate > 0.0) {
                return Err(Error::domain(field, "inverse gamma parameters must be positive"));
            }
        }
        if !(self.rho.c > 0.0) {
            return Err(Error::domain("rho_precision", "must be positive"));
        }
        Ok(())
    }
}

/// Mean and variance of `N(a, b²)` truncated to `[lower, upper]`.
pub fn truncnorm_moments(a: f64, b: f64, lower: f64, upper: f64) -> Result<(f64, f64)> {
    let t = TruncStats::new(a, b, lower, upper)?;
    Ok((a + b * t.lambda, b * b * (1.0 + t.kappa - t.lambda * t.lambda)))
}

// Standardized truncation quantities and their partial derivatives with
// respect to the standardized bounds.
struct TruncStats {
    lo: f64,
    hi: f64,
    lambda: f64,
    kappa: f64,
    d_lambda: (f64, f64),
    d_kappa: (f64, f64),
}

impl TruncStats {
    fn new(a: f64, b: f64, lower: f64, upper: f64) -> Result<Self> {
        if !(b > 0.0) || !(lower < upper) || !a.is_finite() {
            return Err(Error::Numeric(format!(
                "truncated normal moments need b > 0 and lower < upper, got a={a}, b={b}"
            )));
        }
        let lo = (lower - a) / b;
        let hi = (upper - a) / b;
        let z = norm_interval_mass(lo, hi);
        if !(z >= 1e-300) {
            return Err(Error::Numeric(format!(
                "truncated normal N({a}, {b}²) has no mass on [{lower}, {upper}]"
            )));
        }
        let (p_lo, p_hi) = (norm_pdf(lo), norm_pdf(hi));
        let (x_lo, x_hi) = (times_pdf(lo, p_lo), times_pdf(hi, p_hi));
        let lambda = (p_lo - p_hi) / z;
        let kappa = (x_lo - x_hi) / z;
        let sq = |x: f64| if x.is_finite() { x * x } else { 0.0 };
        Ok(Self {
            lo,
            hi,
            lambda,
            kappa,
            d_lambda: (p_lo * (lambda - lo.max(-f64::MAX)) / z, p_hi * (hi.min(f64::MAX) - lambda) / z),
            d_kappa: (
                p_lo * (1.0 - sq(lo) + kappa) / z,
                -p_hi * (1.0 - sq(hi) + kappa) / z,
            ),
        })
    }
}

fn times_pdf(x: f64, pdf: f64) -> f64 {
    if x.is_finite() {
        x * pdf
    } else {
        0.0
    }
}

/// Solves for `(a, b)` such that `N(a, b²)` truncated to `[0, 1]` has the
/// given mean and variance. Damped Newton with an analytic Jacobian.
pub fn solve_truncnorm(target_mean: f64, target_var: f64) -> Result<(f64, f64)> {
    let fail = |why: &str| {
        Error::Elicitation(format!(
            "no truncated normal on [0, 1] has mean {target_mean} and variance {target_var}: {why}"
        ))
    };
    if !(target_mean > 0.0 && target_mean < 1.0) {
        return Err(fail("mean outside (0, 1)"));
    }
    if !(target_var > 0.0 && target_var < target_mean * (1.0 - target_mean)) {
        return Err(fail("variance outside (0, m(1 − m))"));
    }
    let sd_t = target_var.sqrt();
    let residual = |a: f64, b: f64| -> Option<(f64, f64)> {
        let (m, v) = truncnorm_moments(a, b, 0.0, 1.0).ok()?;
        Some(((m - target_mean) / sd_t, (v - target_var) / target_var))
    };
    let norm = |r: (f64, f64)| r.0.abs().max(r.1.abs());

    let (mut a, mut b) = (target_mean, sd_t);
    let mut r = residual(a, b).ok_or_else(|| fail("initial guess has no mass"))?;
    for _ in 0..200 {
        if norm(r) < 1e-12 {
            return Ok((a, b));
        }
        let t = TruncStats::new(a, b, 0.0, 1.0)?;
        let (l, k) = (t.lambda, t.kappa);
        let (la, lb) = t.d_lambda;
        let (ka, kb) = t.d_kappa;
        let w = 1.0 + k - l * l;
        let wa = ka - 2.0 * l * la;
        let wb = kb - 2.0 * l * lb;
        let (lo, hi) = (t.lo, t.hi);
        let dm_da = 1.0 - (la + lb);
        let dm_db = l - (lo * la + hi * lb);
        let dv_da = -b * (wa + wb);
        let dv_db = 2.0 * b * w - b * (lo * wa + hi * wb);
        // Jacobian of the scaled residuals.
        let j = [[dm_da / sd_t, dm_db / sd_t], [dv_da / target_var, dv_db / target_var]];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if !(det.abs() > 0.0) || !det.is_finite() {
            return Err(fail("singular Jacobian"));
        }
        let step_a = (j[1][1] * r.0 - j[0][1] * r.1) / det;
        let step_b = (-j[1][0] * r.0 + j[0][0] * r.1) / det;
        let mut damp = 1.0;
        loop {
            let (na, nb) = (a - damp * step_a, b - damp * step_b);
            if nb > 0.0 && na.is_finite() {
                if let Some(nr) = residual(na, nb) {
                    if norm(nr) < norm(r) {
                        a = na;
                        b = nb;
                        r = nr;
                        break;
                    }
                }
            }
            damp *= 0.5;
            if damp < 1e-12 {
                return Err(fail("Newton iteration stalled"));
            }
        }
    }
    if norm(r) < 1e-12 {
        Ok((a, b))
    } else {
        Err(fail("Newton iteration did not converge in 200 steps"))
    }
}

/// Moment targets for `θ(Δ) = e^(−θ̂Δ)`.
pub fn theta_targets(mom: &ContinuousPriorMoments, delta_ms: f64, rule: ThetaRule) -> (f64, f64) {
    let (a, b) = (mom.theta_hat.mean, mom.theta_hat.sd);
    let x = b * delta_ms;
    match rule {
        ThetaRule::DeltaMethod => {
            let e = (-a * delta_ms).exp();
            // E e^(−2θ̂Δ) − (E e^(−θ̂Δ))² with both Taylor expansions,
            // simplified to avoid cancellation.
            (e * (1.0 + 0.5 * x * x), e * e * (x * x - 0.25 * x * x * x * x))
        }
        ThetaRule::ExactMoments => {
            let m1 = positive_normal_mgf(delta_ms, a, b);
            let m2 = positive_normal_mgf(2.0 * delta_ms, a, b);
            (m1, m2 - m1 * m1)
        }
    }
}

// E e^(−tX) for X ~ N(a, b²) truncated to X > 0.
fn positive_normal_mgf(t: f64, a: f64, b: f64) -> f64 {
    let ln = -t * a + 0.5 * t * t * b * b + dist::norm_cdf((a - t * b * b) / b).ln() - dist::norm_cdf(a / b).ln();
    ln.exp()
}

/// Truncated-normal hyperparameters of `θ(Δ)` from the Taylor moment targets.
pub fn elicit_theta(mom: &ContinuousPriorMoments, delta_ms: f64) -> Result<(f64, f64)> {
    elicit_theta_with(mom, delta_ms, ThetaRule::DeltaMethod)
}

pub fn elicit_theta_with(mom: &ContinuousPriorMoments, delta_ms: f64, rule: ThetaRule) -> Result<(f64, f64)> {
    mom.validate()?;
    check_delta(delta_ms)?;
    let (m, v) = theta_targets(mom, delta_ms, rule);
    solve_truncnorm(m, v).map_err(|e| match e {
        Error::Elicitation(msg) => Error::Elicitation(format!("theta at Δ = {delta_ms} ms ({rule:?} targets): {msg}")),
        other => other,
    })
}

// (1 − e^(−x))/x and its first two derivatives.
fn g0(x: f64) -> f64 {
    one_minus_exp_over(x)
}

fn g1(x: f64) -> f64 {
    if x < 0.5 {
        // Σ (−1)^k k x^(k−1) / (k+1)!
        series(x, |k| k as f64, 1)
    } else {
        ((x + 1.0) * (-x).exp() - 1.0) / (x * x)
    }
}

fn g2(x: f64) -> f64 {
    if x < 0.5 {
        series(x, |k| (k * (k - 1)) as f64, 2)
    } else {
        (2.0 - (-x).exp() * (x * x + 2.0 * x + 2.0)) / (x * x * x)
    }
}

// Σ_{k ≥ skip} (−1)^k c(k) x^(k − skip) / (k+1)!
fn series(x: f64, c: impl Fn(u32) -> f64, skip: u32) -> f64 {
    let mut fact = 1.0;
    for i in 2..=skip + 1 {
        fact *= i as f64;
    }
    let mut pow = 1.0;
    let mut sum = 0.0;
    for k in skip..skip + 24 {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign * c(k) * pow / fact;
        pow *= x;
        fact *= (k + 2) as f64;
    }
    sum
}

/// Delta-method first and second moments of `τ²(Δ) = τ̂² g(θ̂)` with
/// `g(θ) = (1 − e^(−2θΔ))/(2θ)`, expanded around the prior means.
pub fn tau_sq_targets(mom: &ContinuousPriorMoments, delta_ms: f64) -> (f64, f64) {
    let (at, bt2) = (mom.tau_sq_hat.mean, mom.tau_sq_hat.var());
    let bth2 = mom.theta_hat.var();
    let d = delta_ms;
    let x = 2.0 * mom.theta_hat.mean * d;
    let g = d * g0(x);
    let dg = 2.0 * d * d * g1(x);
    let ddg = 4.0 * d * d * d * g2(x);
    let m1 = at * g + 0.5 * bth2 * at * ddg;
    let m2 = (at * at + bt2) * g * g + bth2 * at * at * (dg * dg + g * ddg);
    (m1, m2)
}

/// Inverse gamma with the given mean and variance.
pub fn inv_gamma_from_moments(mean: f64, var: f64) -> Result<InvGammaPrior> {
    if !(mean > 0.0 && var > 0.0 && mean.is_finite() && var.is_finite()) {
        return Err(Error::Elicitation(format!(
            "inverse gamma needs positive finite mean and variance, got mean {mean}, variance {var}"
        )));
    }
    let shape = mean * mean / var + 2.0;
    if !(shape > 2.0) {
        return Err(Error::Elicitation(format!("implied shape {shape} leaves the prior variance infinite")));
    }
    Ok(InvGammaPrior { shape, rate: mean * (shape - 1.0) })
}

pub fn elicit_tau_sq(mom: &ContinuousPriorMoments, delta_ms: f64) -> Result<InvGammaPrior> {
    mom.validate()?;
    check_delta(delta_ms)?;
    let (m1, m2) = tau_sq_targets(mom, delta_ms);
    let v = m2 - m1 * m1;
    if !(v > 0.0) {
        return Err(Error::Elicitation(format!(
            "tau_sq at Δ = {delta_ms} ms: delta-method variance target {v} is not positive (mean target {m1})"
        )));
    }
    inv_gamma_from_moments(m1, v).map_err(|e| Error::Elicitation(format!("tau_sq at Δ = {delta_ms} ms: {e}")))
}

pub fn elicit_location_priors(mom: &ContinuousPriorMoments, delta_ms: f64) -> (NormalPrior, NormalPrior) {
    let mu = NormalPrior { mean: delta_ms * mom.mu_hat.mean, var: delta_ms * delta_ms * mom.mu_hat.var() };
    let alpha = NormalPrior { mean: mom.alpha_hat.mean + 0.5 * delta_ms.ln(), var: mom.alpha_hat.var() };
    (mu, alpha)
}

pub fn elicit_xi_and_rho(mom: &ContinuousPriorMoments) -> Result<(InvGammaPrior, RhoPrior)> {
    mom.validate()?;
    let xi = inv_gamma_from_moments(mom.xi_sq.mean, mom.xi_sq.var())
        .map_err(|e| Error::Elicitation(format!("xi_sq: {e}")))?;
    Ok((xi, RhoPrior { c: mom.rho_precision }))
}

/// Full prior at `Δ`. The `θ(Δ)` prior uses the Taylor targets when a
/// truncated normal can match them and the exact moments otherwise.
pub fn elicit(mom: &ContinuousPriorMoments, delta_ms: f64) -> Result<DiscretePriorSpec> {
    mom.validate()?;
    check_delta(delta_ms)?;
    let (theta_ab, theta_rule) = match elicit_theta(mom, delta_ms) {
        Ok(ab) => (ab, ThetaRule::DeltaMethod),
        Err(Error::Elicitation(first)) => match elicit_theta_with(mom, delta_ms, ThetaRule::ExactMoments) {
            Ok(ab) => (ab, ThetaRule::ExactMoments),
            Err(e) => return Err(Error::Elicitation(format!("{first}; exact-moment fallback: {e}"))),
        },
        Err(e) => return Err(e),
    };
    let (mu, alpha) = elicit_location_priors(mom, delta_ms);
    let (xi_sq, rho) = elicit_xi_and_rho(mom)?;
    Ok(DiscretePriorSpec {
        delta_ms,
        mu,
        theta: TruncNormalPrior { a: theta_ab.0, b: theta_ab.1 },
        theta_rule,
        alpha,
        tau_sq: elicit_tau_sq(mom, delta_ms)?,
        xi_sq,
        rho,
    })
}

fn check_delta(delta_ms: f64) -> Result<()> {
    if delta_ms > 0.0 && delta_ms.is_finite() {
        Ok(())
    } else {
        Err(Error::domain("delta_ms", "must be positive"))
    }
}

/// Human-readable one-liner for logs.
pub fn describe(spec: &DiscretePriorSpec) -> String {
    format!(
        "Δ={} ms: mu~N({:.4e}, {:.4e}), theta~TN({:.6}, {:.6}²) [{:?}], alpha~N({:.4}, {:.4}), \
         tau_sq~IG({:.4}, {:.4e}), xi_sq~IG({:.4}, {:.4e}), rho precision {}",
        spec.delta_ms,
        spec.mu.mean,
        spec.mu.var,
        spec.theta.a,
        spec.theta.b,
        spec.theta_rule,
        spec.alpha.mean,
        spec.alpha.var,
        spec.tau_sq.shape,
        spec.tau_sq.rate,
        spec.xi_sq.shape,
        spec.xi_sq.rate,
        spec.rho.c
    )
}
