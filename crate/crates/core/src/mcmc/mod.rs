//! Gibbs sampler for the noisy-price stochastic volatility model.
//!
//! A sweep updates, in order: the latent log prices (FFBS), the mixture
//! indicators, the latent log volatilities (FFBS on the mixture system),
//! then τ², θ, α, ξ², μ and ρ.
//!
//! The mixture system only approximates the Gaussian return density (and,
//! with leverage, linearizes the return/volatility coupling). By default the
//! volatility path it produces is treated as a Metropolis-Hastings proposal
//! and corrected to the exact model, so the chain targets the exact
//! posterior. Setting `mixture_correction = false` accepts every draw.

mod diagnostics;
pub mod geweke;

pub use diagnostics::{effective_sample_size, quantile, summarize, Summary};

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, StudentT};

use crate::dist::{categorical_from_log_weights, inv_gamma, ln_norm_pdf, normal, std_normal, truncated_normal, uniform};
use crate::error::{Error, Result};
use crate::model::{continuize, ContinuousParams, DiscreteParams, InitialConditions};
use crate::priors::DiscretePriorSpec;
use crate::rng::{stream_rng, SvRng};
use crate::simulate::ObservedSeries;
use crate::ssm::{
    backward_sample_into, build_volatility_ssm, forward_filter_into, log_sum_exp, transform_returns_into,
    FilterOutput, LinearGaussianSsm, MixtureTable, TransformedObs, MIXTURE_SIZE,
};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const LN_HALF: f64 = -core::f64::consts::LN_2;
/// Target acceptance rate of the ρ random walk during burn-in.
const RHO_TARGET_ACCEPT: f64 = 0.3;
/// Degrees of freedom of the τ independence proposal under leverage.
const TAU_PROPOSAL_DF: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum XiMode {
    /// Observed prices are the true prices.
    FixedZero,
    Fixed(f64),
    Estimated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RhoMode {
    Fixed(f64),
    Estimated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub xi_mode: XiMode,
    pub rho_mode: RhoMode,
    /// Initial random-walk scale for `atanh ρ`.
    pub rho_step: f64,
    /// Adapt `rho_step` during burn-in.
    pub adapt_rho: bool,
    pub mixture_correction: bool,
    /// Keep every k-th retained path (0 keeps none).
    pub path_every: usize,
    /// Prior on `log S_0`; defaults to `N(Y_0, E ξ²)`.
    pub initial: Option<InitialConditions>,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            iterations: 8000,
            burn_in: 3000,
            thin: 1,
            seed: 0,
            xi_mode: XiMode::Estimated,
            rho_mode: RhoMode::Fixed(0.0),
            rho_step: 0.1,
            adapt_rho: true,
            mixture_correction: true,
            path_every: 0,
            initial: None,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 {
            return Err(Error::Usage("thin must be at least 1".into()));
        }
        if self.iterations <= self.burn_in && !(self.iterations == 0 && self.burn_in == 0) {
            return Err(Error::Usage("iterations must exceed burn_in".into()));
        }
        match self.xi_mode {
            XiMode::Fixed(v) if !(v > 0.0) => {
                return Err(Error::domain("xi_sq", "a fixed noise variance must be positive; use fixed_zero"))
            }
            _ => {}
        }
        if let RhoMode::Fixed(r) = self.rho_mode {
            if !(r.abs() < 1.0) {
                return Err(Error::domain("rho", "must lie in (−1, 1)"));
            }
        }
        if !(self.rho_step >= 0.0) {
            return Err(Error::domain("rho_step", "must be non-negative"));
        }
        Ok(())
    }

    pub fn retained(&self) -> usize {
        self.iterations.saturating_sub(self.burn_in) / self.thin
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GibbsState {
    /// `h_1 .. h_{n+1}`; `h[j]` scales the return from `log_s[j]` to `log_s[j+1]`.
    pub h: Vec<f64>,
    /// `log S_0 .. log S_n`.
    pub log_s: Vec<f64>,
    pub gamma: Vec<u8>,
    pub params: DiscreteParams,
    pub iteration: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Counter {
    pub proposed: u64,
    pub accepted: u64,
}

impl Counter {
    fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.accepted += accepted as u64;
    }

    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepStats {
    pub volatility: Counter,
    pub tau_sq: Counter,
    pub theta: Counter,
    pub alpha: Counter,
    pub rho: Counter,
    /// θ proposals drawn from the prior because the kernel had no mass on [0, 1].
    pub theta_fallbacks: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    pub delta_ms: f64,
    pub initial: ContinuousParams,
    pub discrete: Vec<DiscreteParams>,
    pub draws: Vec<ContinuousParams>,
    /// `Σ_j σ_j²` per retained draw.
    pub iv: Vec<f64>,
    /// Log density of the observations given the volatility path and parameters.
    pub loglik: Vec<f64>,
    pub h_paths: Vec<Vec<f64>>,
    pub log_s_paths: Vec<Vec<f64>>,
    /// Posterior mean of `h_1 .. h_{n+1}` over all retained draws.
    pub h_mean: Vec<f64>,
    /// Iteration-level acceptance counts over the whole run, burn-in included.
    pub stats: StepStats,
    /// Same counts restricted to retained iterations.
    pub stats_post_burn: StepStats,
    pub rho_step: f64,
}

#[derive(Debug, Default)]
struct Workspace {
    obs: TransformedObs,
    ssm: LinearGaussianSsm,
    filt: FilterOutput,
    h_prop: Vec<f64>,
    ln_approx_current: f64,
    /// `e^(h_j)` for the current path.
    sigma: Vec<f64>,
}

/// One chain's sampler state plus the data and settings it runs on.
pub struct Gibbs<'a> {
    y: &'a [f64],
    prior: &'a DiscretePriorSpec,
    cfg: &'a McmcConfig,
    init: InitialConditions,
    mix: MixtureTable,
    pub state: GibbsState,
    pub stats: StepStats,
    pub rho_step: f64,
    pub loglik: f64,
    ws: Workspace,
}

/// Per-return innovation summaries shared by the parameter steps.
#[derive(Debug, Clone, Copy, Default)]
struct Sums {
    /// Σ u_j², with `u_j = h_{j+1} − α − θ(h_j − α)`.
    uu: f64,
    /// Σ ε_j u_j, with `ε_j` the standardized price innovation.
    eu: f64,
    ee: f64,
}

impl<'a> Gibbs<'a> {
    /// Default initial conditions for `log S_0`.
    pub fn default_initial(y: &[f64], prior: &DiscretePriorSpec, cfg: &McmcConfig) -> Result<InitialConditions> {
        if let Some(init) = cfg.initial {
            return Ok(init);
        }
        let kappa_sq = match cfg.xi_mode {
            XiMode::Fixed(v) => v,
            _ => prior.xi_sq.mean(),
        };
        if !kappa_sq.is_finite() || !(kappa_sq > 0.0) {
            return Err(Error::domain("kappa_sq", "ξ² prior needs a finite mean (shape > 1)"));
        }
        InitialConditions::new(y[0], kappa_sq)
    }

    /// The neutral starting point: `h ≡ E α`, `log S = Y`, parameters at
    /// their prior means, ρ at 0 unless fixed.
    pub fn initial_state<R: Rng + ?Sized>(y: &[f64], prior: &DiscretePriorSpec, cfg: &McmcConfig, rng: &mut R) -> Result<GibbsState> {
        let n = y.len() - 1;
        let (theta, _) = prior.theta.moments()?;
        let theta = theta.clamp(1e-12, 1.0 - 1e-12);
        let xi_sq = match cfg.xi_mode {
            XiMode::FixedZero => 0.0,
            XiMode::Fixed(v) => v,
            XiMode::Estimated => prior.xi_sq.mean(),
        };
        let rho = match cfg.rho_mode {
            RhoMode::Fixed(r) => r,
            RhoMode::Estimated => 0.0,
        };
        let params = DiscreteParams::new(prior.delta_ms, prior.mu.mean, theta, prior.alpha.mean, prior.tau_sq.mean(), rho, xi_sq)?;
        let mix = MixtureTable::omori();
        let mut gamma = vec![0u8; n];
        for g in gamma.iter_mut() {
            let mut lw = mix.ln_p;
            *g = categorical_from_log_weights(rng, &mut lw)? as u8;
        }
        Ok(GibbsState { h: vec![prior.alpha.mean; n + 1], log_s: y.to_vec(), gamma, params, iteration: 0 })
    }

    pub fn new(
        y: &'a [f64],
        prior: &'a DiscretePriorSpec,
        cfg: &'a McmcConfig,
        init: InitialConditions,
        state: GibbsState,
    ) -> Result<Self> {
        cfg.validate()?;
        prior.validate()?;
        let n = y.len().checked_sub(1).filter(|&n| n >= 1).ok_or_else(|| Error::Usage("need at least two observations".into()))?;
        if state.h.len() != n + 1 || state.log_s.len() != n + 1 || state.gamma.len() != n {
            return Err(Error::Usage("state arrays do not match the data length".into()));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("y", "observations must be finite"));
        }
        Ok(Self {
            y,
            prior,
            cfg,
            init,
            mix: MixtureTable::omori(),
            rho_step: cfg.rho_step,
            state,
            stats: StepStats::default(),
            loglik: f64::NAN,
            ws: Workspace { h_prop: vec![0.0; n + 1], ..Workspace::default() },
        })
        .map(|mut g| {
            g.refresh_sigma();
            g
        })
    }

    fn refresh_sigma(&mut self) {
        self.ws.sigma.clear();
        self.ws.sigma.extend(self.state.h.iter().map(|h| h.exp()));
    }

    pub fn n(&self) -> usize {
        self.y.len() - 1
    }

    /// Standardized price innovation and volatility residual of return `j`.
    #[inline]
    fn innovations(&self, j: usize, theta: f64) -> (f64, f64) {
        let s = &self.state;
        let p = &s.params;
        let r = s.log_s[j + 1] - s.log_s[j];
        let eps = (r - p.mu) / self.ws.sigma[j];
        let u = s.h[j + 1] - p.alpha - theta * (s.h[j] - p.alpha);
        (eps, u)
    }

    fn sums(&self) -> Sums {
        let mut out = Sums::default();
        let theta = self.state.params.theta();
        for j in 0..self.n() {
            let (e, u) = self.innovations(j, theta);
            out.uu += u * u;
            out.eu += e * u;
            out.ee += e * e;
        }
        out
    }

    /// One full sweep; errors carry the iteration and a parameter snapshot.
    pub fn sweep<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        self.state.iteration += 1;
        self.sweep_inner(rng).map_err(|e| Error::Chain {
            iteration: self.state.iteration,
            source: alloc::boxed::Box::new(e),
            snapshot: alloc::boxed::Box::new(self.state.params),
        })
    }

    fn sweep_inner<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        self.step_log_prices(rng)?;
        self.step_indicators(rng)?;
        self.step_volatilities(rng)?;
        self.step_tau_sq(rng)?;
        self.step_theta(rng)?;
        self.step_alpha(rng);
        self.step_xi_sq(rng)?;
        self.step_mu(rng);
        self.step_rho(rng);
        Ok(())
    }

    /// FFBS for `log S_0 .. log S_n`. Given the volatility path the returns
    /// are Gaussian with mean `μ + σ_j ρ e_j` and variance `σ_j²(1 − ρ²)`,
    /// `e_j` being the standardized volatility innovation.
    pub fn step_log_prices<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let n = self.n();
        let p = self.state.params;
        let (rho, tau, theta) = (p.rho, p.tau(), p.theta());
        let one_m_r2 = 1.0 - rho * rho;
        let sig = &self.ws.sigma;
        let drift = |s: &GibbsState, j: usize| {
            let u = s.h[j + 1] - p.alpha - theta * (s.h[j] - p.alpha);
            let sigma = sig[j];
            (p.mu + sigma * rho * u / tau, sigma * sigma * one_m_r2)
        };
        let xi_sq = match self.cfg.xi_mode {
            XiMode::FixedZero => {
                self.state.log_s.copy_from_slice(self.y);
                let mut ll = 0.0;
                for j in 0..n {
                    let (m, v) = drift(&self.state, j);
                    ll += ln_norm_pdf(self.y[j + 1] - self.y[j], m, v);
                }
                self.loglik = ll;
                return Ok(());
            }
            XiMode::Fixed(v) => v,
            XiMode::Estimated => p.xi_sq,
        };
        let ssm = &mut self.ws.ssm;
        ssm.resize(n + 1);
        ssm.m0 = self.init.eta;
        ssm.p0 = self.init.kappa_sq;
        for j in 0..n {
            let (m, v) = drift(&self.state, j);
            ssm.f[j] = 1.0;
            ssm.c[j] = m;
            ssm.q[j] = v;
        }
        for t in 0..=n {
            ssm.h[t] = 1.0;
            ssm.g[t] = 0.0;
            ssm.r[t] = xi_sq;
            ssm.y[t] = if t == 0 { None } else { Some(self.y[t]) };
        }
        forward_filter_into(ssm, &mut self.ws.filt)?;
        backward_sample_into(ssm, &self.ws.filt, rng, &mut self.state.log_s)?;
        self.loglik = self.ws.filt.loglik;
        Ok(())
    }

    /// Log weights `log p_l + log N(ε*; m_l/2, v_l²/4)` plus, under leverage,
    /// the linearized transition density of `h_{j+1}`.
    fn component_log_weights(&self, h: &[f64], j: usize, out: &mut [f64; MIXTURE_SIZE]) {
        let p = &self.state.params;
        let mix = &self.mix;
        let e = self.ws.obs.y_star[j] - h[j];
        mix.ln_joint_star(e, out);
        if p.rho != 0.0 {
            let q = p.tau_sq * (1.0 - p.rho * p.rho);
            let base = p.alpha + p.theta() * (h[j] - p.alpha);
            let k = p.rho * p.tau() * self.ws.obs.d[j];
            for l in 0..MIXTURE_SIZE {
                let mean = base + k * mix.exp_half_m[l] * (mix.a[l] + 2.0 * mix.b[l] * (e - 0.5 * mix.m[l]));
                out[l] += ln_norm_pdf(h[j + 1], mean, q);
            }
        }
    }

    /// Log density of the transformed returns (and, under leverage, of the
    /// volatility transitions) under the mixture system with indicators
    /// summed out.
    fn ln_approx(&self, h: &[f64]) -> f64 {
        let mut lw = [0.0; MIXTURE_SIZE];
        let mut total = 0.0;
        for j in 0..self.n() {
            self.component_log_weights(h, j, &mut lw);
            total += LN_HALF + log_sum_exp(&lw);
        }
        total
    }

    /// The same density under the exact model: `ε* = log|ε|`, `ε ~ N(0, 1)`.
    fn ln_exact(&self, h: &[f64]) -> f64 {
        let p = &self.state.params;
        let leverage = p.rho != 0.0;
        let q = p.tau_sq * (1.0 - p.rho * p.rho);
        let (theta, rho_tau) = (p.theta(), p.rho * p.tau());
        let mut total = 0.0;
        for j in 0..self.n() {
            let e = self.ws.obs.y_star[j] - h[j];
            let x = e.exp();
            total += -0.5 * LN_2PI - 0.5 * x * x + e;
            if leverage {
                let mean = p.alpha + theta * (h[j] - p.alpha) + rho_tau * self.ws.obs.d[j] * x;
                total += ln_norm_pdf(h[j + 1], mean, q);
            }
        }
        total
    }

    pub fn step_indicators<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        transform_returns_into(&self.state.log_s, self.state.params.mu, &mut self.ws.obs);
        let mut lw = [0.0; MIXTURE_SIZE];
        let mut total = 0.0;
        for j in 0..self.n() {
            self.component_log_weights(&self.state.h, j, &mut lw);
            let (l, lse) = sample_component(rng, &mut lw)?;
            total += LN_HALF + lse;
            self.state.gamma[j] = l as u8;
        }
        self.ws.ln_approx_current = total;
        Ok(())
    }

    pub fn step_volatilities<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        build_volatility_ssm(&self.ws.obs, &self.state.gamma, &self.state.params, &self.mix, &mut self.ws.ssm)?;
        forward_filter_into(&self.ws.ssm, &mut self.ws.filt)?;
        let mut prop = core::mem::take(&mut self.ws.h_prop);
        backward_sample_into(&self.ws.ssm, &self.ws.filt, rng, &mut prop)?;
        let accept = if self.cfg.mixture_correction {
            let new = self.ln_exact(&prop) - self.ln_approx(&prop);
            let old = self.ln_exact(&self.state.h) - self.ws.ln_approx_current;
            let ln_ratio = new - old;
            ln_ratio >= 0.0 || uniform(rng).ln() < ln_ratio
        } else {
            true
        };
        if accept {
            core::mem::swap(&mut self.state.h, &mut prop);
        }
        self.ws.h_prop = prop;
        if accept {
            self.refresh_sigma();
        }
        self.stats.volatility.record(accept);
        Ok(())
    }

    /// Inverse-gamma update. Under leverage the conditional of `s = 1/τ` is
    /// `∝ s^(2A−1) exp(−B s² + C s)`; it is sampled by independence MH with
    /// a Student-t proposal at its mode.
    pub fn step_tau_sq<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let n = self.n() as f64;
        let sums = self.sums();
        let p = self.state.params;
        let one_m_r2 = 1.0 - p.rho * p.rho;
        let h1 = self.state.h[0] - p.alpha;
        let shape = self.prior.tau_sq.shape + 0.5 * (n + 1.0);
        let rate = self.prior.tau_sq.rate + sums.uu / (2.0 * one_m_r2) + 0.5 * p.one_minus_theta_sq() * h1 * h1;
        if !(rate > 0.0) || !rate.is_finite() {
            return Err(Error::Numeric(alloc::format!("τ² posterior rate {rate}")));
        }
        if p.rho == 0.0 {
            self.state.params.tau_sq = inv_gamma(rng, shape, rate)?;
            self.stats.tau_sq.record(true);
            return Ok(());
        }
        let c = p.rho * sums.eu / one_m_r2;
        let k = 2.0 * shape - 1.0;
        let ln_target = |s: f64| if s > 0.0 { k * s.ln() - rate * s * s + c * s } else { f64::NEG_INFINITY };
        let mode = (c + (c * c + 8.0 * rate * k).sqrt()) / (4.0 * rate);
        let scale = 1.0 / (k / (mode * mode) + 2.0 * rate).sqrt();
        let ln_prop = |s: f64| {
            let z = (s - mode) / scale;
            -0.5 * (TAU_PROPOSAL_DF + 1.0) * (1.0 + z * z / TAU_PROPOSAL_DF).ln()
        };
        let t = StudentT::new(TAU_PROPOSAL_DF).map_err(|_| Error::Numeric("Student-t proposal".into()))?;
        let s_new = mode + scale * t.sample(rng);
        let s_old = 1.0 / p.tau();
        let ln_ratio = ln_target(s_new) - ln_target(s_old) + ln_prop(s_old) - ln_prop(s_new);
        let accept = ln_ratio >= 0.0 || uniform(rng).ln() < ln_ratio;
        if accept {
            self.state.params.tau_sq = 1.0 / (s_new * s_new);
        }
        self.stats.tau_sq.record(accept);
        Ok(())
    }

    /// Independence MH: the transitions give a normal kernel in θ, combined
    /// with the truncated normal prior; the stationary density of `h_1` is
    /// the acceptance factor.
    pub fn step_theta<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let p = self.state.params;
        let s = &self.state;
        let v = p.tau_sq * (1.0 - p.rho * p.rho);
        let (mut sxx, mut sxz) = (0.0, 0.0);
        let rho_tau = p.rho * p.tau();
        for j in 0..self.n() {
            let (eps, _) = self.innovations(j, 0.0);
            let x = s.h[j] - p.alpha;
            let z = s.h[j + 1] - p.alpha - rho_tau * eps;
            sxx += x * x;
            sxz += x * z;
        }
        let prior = self.prior.theta;
        let b2 = prior.b * prior.b;
        let prec = sxx / v + 1.0 / b2;
        let mean = (sxz / v + prior.a / b2) / prec;
        let h1 = s.h[0] - p.alpha;
        let ln_g = |th: f64| {
            let one_m = 1.0 - th * th;
            0.5 * one_m.ln() - one_m * h1 * h1 / (2.0 * p.tau_sq)
        };
        let ln_lik = |th: f64| -(th * th * sxx - 2.0 * th * sxz) / (2.0 * v);
        let current = p.theta();
        let (proposal, mut ln_ratio) = match truncated_normal(rng, mean, prec.sqrt().recip(), 0.0, 1.0) {
            Ok(t) => (t, 0.0),
            Err(_) => {
                self.stats.theta_fallbacks += 1;
                let t = prior.sample(rng)?;
                (t, ln_lik(t) - ln_lik(current))
            }
        };
        if !(proposal > 0.0 && proposal < 1.0) {
            self.stats.theta.record(false);
            return Ok(());
        }
        ln_ratio += ln_g(proposal) - ln_g(current);
        let accept = ln_ratio >= 0.0 || uniform(rng).ln() < ln_ratio;
        if accept {
            self.state.params.set_theta(proposal);
        }
        self.stats.theta.record(accept);
        Ok(())
    }

    /// The `h_1` factor is Gaussian in α as well, so the normal kernel is
    /// the exact conditional and every draw is accepted.
    pub fn step_alpha<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let p = self.state.params;
        let theta = p.theta();
        let v = p.tau_sq * (1.0 - p.rho * p.rho);
        let stat_prec = p.one_minus_theta_sq() / p.tau_sq;
        let mut sw = 0.0;
        let rho_tau = p.rho * p.tau();
        for j in 0..self.n() {
            let (eps, _) = self.innovations(j, theta);
            sw += self.state.h[j + 1] - theta * self.state.h[j] - rho_tau * eps;
        }
        let k = 1.0 - theta;
        let prior = self.prior.alpha;
        let prec = 1.0 / prior.var + stat_prec + self.n() as f64 * k * k / v;
        let num = prior.mean / prior.var + stat_prec * self.state.h[0] + k * sw / v;
        self.state.params.alpha = normal(rng, num / prec, prec.sqrt().recip());
        self.stats.alpha.record(true);
    }

    pub fn step_xi_sq<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        match self.cfg.xi_mode {
            XiMode::FixedZero => self.state.params.xi_sq = 0.0,
            XiMode::Fixed(v) => self.state.params.xi_sq = v,
            XiMode::Estimated => {
                let ss: f64 = (1..=self.n()).map(|j| (self.y[j] - self.state.log_s[j]).powi(2)).sum();
                let prior = self.prior.xi_sq;
                self.state.params.xi_sq = inv_gamma(rng, prior.shape + 0.5 * self.n() as f64, prior.rate + 0.5 * ss)?;
            }
        }
        Ok(())
    }

    /// Normal conjugate update with precision `Σ 1/(σ_j²(1 − ρ²))`.
    /// The transformed returns are rebuilt from the new μ at the start of
    /// the next indicator step, before anything reads them.
    pub fn step_mu<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let p = self.state.params;
        let s = &self.state;
        let one_m_r2 = 1.0 - p.rho * p.rho;
        let (mut prec, mut num) = (1.0 / self.prior.mu.var, self.prior.mu.mean / self.prior.mu.var);
        let (theta, rho_over_tau) = (p.theta(), p.rho / p.tau());
        for j in 0..self.n() {
            let sigma = self.ws.sigma[j];
            let u = s.h[j + 1] - p.alpha - theta * (s.h[j] - p.alpha);
            let w = s.log_s[j + 1] - s.log_s[j] - sigma * rho_over_tau * u;
            let inv_var = 1.0 / (sigma * sigma * one_m_r2);
            prec += inv_var;
            num += w * inv_var;
        }
        self.state.params.mu = normal(rng, num / prec, prec.sqrt().recip());
    }

    /// Random-walk Metropolis on `atanh ρ`.
    pub fn step_rho<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        if let RhoMode::Fixed(r) = self.cfg.rho_mode {
            self.state.params.rho = r;
            return;
        }
        if self.rho_step == 0.0 {
            return;
        }
        let n = self.n() as f64;
        let sums = self.sums();
        let p = self.state.params;
        let tau = p.tau();
        let prior = self.prior.rho;
        let ln_target = |rho: f64| {
            if !(rho.abs() < 1.0) {
                return f64::NEG_INFINITY;
            }
            let one_m = 1.0 - rho * rho;
            let ss = sums.uu - 2.0 * rho * tau * sums.eu + rho * rho * p.tau_sq * sums.ee;
            prior.ln_pdf(rho) - 0.5 * n * one_m.ln() - ss / (2.0 * p.tau_sq * one_m) + one_m.ln()
        };
        let proposal = (p.rho.atanh() + self.rho_step * std_normal(rng)).tanh();
        let ln_ratio = ln_target(proposal) - ln_target(p.rho);
        let accept = ln_ratio >= 0.0 || uniform(rng).ln() < ln_ratio;
        if accept {
            self.state.params.rho = proposal;
        }
        self.stats.rho.record(accept);
        if self.cfg.adapt_rho && self.state.iteration <= self.cfg.burn_in && self.rho_step > 0.0 {
            let gain = (self.state.iteration as f64).powf(-0.6);
            self.rho_step *= (gain * (accept as u8 as f64 - RHO_TARGET_ACCEPT)).exp();
        }
    }

    pub fn iv(&self) -> f64 {
        self.ws.sigma[..self.n()].iter().map(|s| s * s).sum()
    }
}

/// Draws a component from unnormalized log weights and returns it with
/// their log-sum-exp.
fn sample_component<R: Rng + ?Sized>(rng: &mut R, lw: &mut [f64; MIXTURE_SIZE]) -> Result<(usize, f64)> {
    let max = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Numeric("all mixture components underflowed".into()));
    }
    let mut total = 0.0;
    for w in lw.iter_mut() {
        *w = (*w - max).exp();
        total += *w;
    }
    let u = uniform(rng) * total;
    let mut acc = 0.0;
    let mut pick = MIXTURE_SIZE - 1;
    for (l, w) in lw.iter().enumerate() {
        acc += w;
        if u < acc {
            pick = l;
            break;
        }
    }
    Ok((pick, max + total.ln()))
}

fn stats_diff(a: &StepStats, b: &StepStats) -> StepStats {
    let d = |x: Counter, y: Counter| Counter { proposed: x.proposed - y.proposed, accepted: x.accepted - y.accepted };
    StepStats {
        volatility: d(a.volatility, b.volatility),
        tau_sq: d(a.tau_sq, b.tau_sq),
        theta: d(a.theta, b.theta),
        alpha: d(a.alpha, b.alpha),
        rho: d(a.rho, b.rho),
        theta_fallbacks: a.theta_fallbacks - b.theta_fallbacks,
    }
}

/// Runs one chain on an observed series. The RNG stream is derived from
/// `cfg.seed`, so equal seeds and inputs give identical output.
pub fn run_chain(series: &ObservedSeries, prior: &DiscretePriorSpec, cfg: &McmcConfig) -> Result<ChainOutput> {
    if (series.delta_obs_ms as f64 - prior.delta_ms).abs() > 1e-9 * prior.delta_ms {
        return Err(Error::Usage(alloc::format!(
            "prior is for Δ = {} ms but the series is sampled every {} ms",
            prior.delta_ms, series.delta_obs_ms
        )));
    }
    cfg.validate()?;
    if series.y.len() < 2 {
        return Err(Error::Usage("need at least two observations".into()));
    }
    let mut rng: SvRng = stream_rng(cfg.seed, 0);
    let init = Gibbs::default_initial(&series.y, prior, cfg)?;
    let state = Gibbs::initial_state(&series.y, prior, cfg, &mut rng)?;
    run_from(&series.y, prior, cfg, init, state, &mut rng)
}

/// Runs a chain from an explicit starting state.
pub fn run_from<R: Rng + ?Sized>(
    y: &[f64],
    prior: &DiscretePriorSpec,
    cfg: &McmcConfig,
    init: InitialConditions,
    state: GibbsState,
    rng: &mut R,
) -> Result<ChainOutput> {
    let mut g = Gibbs::new(y, prior, cfg, init, state)?;
    let n = g.n();
    let retained = cfg.retained();
    let mut out = ChainOutput {
        delta_ms: prior.delta_ms,
        initial: continuize(&g.state.params)?,
        discrete: Vec::with_capacity(retained),
        draws: Vec::with_capacity(retained),
        iv: Vec::with_capacity(retained),
        loglik: Vec::with_capacity(retained),
        h_paths: Vec::new(),
        log_s_paths: Vec::new(),
        h_mean: vec![0.0; n + 1],
        stats: StepStats::default(),
        stats_post_burn: StepStats::default(),
        rho_step: cfg.rho_step,
    };
    let mut at_burn = StepStats::default();
    for it in 0..cfg.iterations {
        g.sweep(rng)?;
        if it + 1 == cfg.burn_in {
            at_burn = g.stats;
        }
        if it < cfg.burn_in || (it - cfg.burn_in + 1) % cfg.thin != 0 {
            continue;
        }
        let params = g.state.params;
        out.draws.push(continuize(&params)?);
        out.discrete.push(params);
        out.iv.push(g.iv());
        out.loglik.push(g.loglik);
        for (m, h) in out.h_mean.iter_mut().zip(&g.state.h) {
            *m += h;
        }
        let k = out.draws.len();
        if cfg.path_every > 0 && (k - 1) % cfg.path_every == 0 {
            out.h_paths.push(g.state.h.clone());
            out.log_s_paths.push(g.state.log_s.clone());
        }
    }
    let kept = out.draws.len().max(1) as f64;
    for m in out.h_mean.iter_mut() {
        *m /= kept;
    }
    if out.draws.is_empty() {
        out.h_mean.copy_from_slice(&g.state.h);
    }
    out.stats = g.stats;
    out.stats_post_burn = stats_diff(&g.stats, &at_burn);
    out.rho_step = g.rho_step;
    Ok(out)
}

#[cfg(test)]
mod tests;
