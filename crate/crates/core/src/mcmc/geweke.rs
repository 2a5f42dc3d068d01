//! Joint-distribution ("getting it right") check of the sampler.
//!
//! Each replicate draws parameters from the prior, simulates latent paths and
//! observations from the model, then applies a few sweeps of the sampler
//! started at the true state. If every step leaves the posterior invariant,
//! the parameters after the sweeps are again distributed as the prior.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;

use super::{Gibbs, GibbsState, McmcConfig, RhoMode, XiMode};
use crate::dist::{normal, std_normal};
use crate::error::Result;
use crate::model::{continuize, ContinuousParams, DiscreteParams, InitialConditions};
use crate::priors::{DiscretePriorSpec, InvGammaPrior, NormalPrior, RhoPrior, ThetaRule, TruncNormalPrior};
use crate::rng::stream_rng;

#[derive(Debug, Clone, PartialEq)]
pub struct GewekeDesign {
    pub replications: usize,
    pub n: usize,
    pub sweeps: usize,
    pub seed: u64,
    pub mixture_correction: bool,
}

impl Default for GewekeDesign {
    fn default() -> Self {
        Self { replications: 20_000, n: 20, sweeps: 5, seed: 2024, mixture_correction: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GewekeStat {
    pub name: String,
    pub sampler_mean: f64,
    pub sampler_se: f64,
    pub prior_mean: f64,
    pub prior_se: f64,
}

impl GewekeStat {
    pub fn z(&self) -> f64 {
        (self.sampler_mean - self.prior_mean) / (self.sampler_se.powi(2) + self.prior_se.powi(2)).sqrt()
    }
}

/// Priors that put the noise, volatility and drift on comparable scales so
/// that twenty observations carry information about every parameter.
pub fn test_prior() -> DiscretePriorSpec {
    DiscretePriorSpec {
        delta_ms: 6e4,
        mu: NormalPrior { mean: 0.0, var: 1e-6 },
        theta: TruncNormalPrior { a: 0.85, b: 0.1 },
        theta_rule: ThetaRule::DeltaMethod,
        alpha: NormalPrior { mean: -7.0, var: 0.25 },
        tau_sq: InvGammaPrior { shape: 8.0, rate: 7.0 * 0.05 },
        xi_sq: InvGammaPrior { shape: 8.0, rate: 7.0 * 5e-7 },
        rho: RhoPrior { c: 4.0 },
    }
}

pub const TEST_INITIAL: InitialConditions = InitialConditions { eta: 0.0, kappa_sq: 1e-6 };

/// Draws `(h, log S, Y)` from the discrete-time model.
pub fn simulate_discrete<R: Rng + ?Sized>(
    p: &DiscreteParams,
    n: usize,
    init: InitialConditions,
    rng: &mut R,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut h = vec![0.0; n + 1];
    let mut log_s = vec![0.0; n + 1];
    let mut y = vec![0.0; n + 1];
    let theta = p.theta();
    let tau = p.tau();
    let xi = p.xi_sq.sqrt();
    let q = (1.0 - p.rho * p.rho).sqrt();
    h[0] = normal(rng, p.alpha, p.stationary_variance().sqrt());
    log_s[0] = normal(rng, init.eta, init.kappa_sq.sqrt());
    y[0] = normal(rng, log_s[0], xi);
    for j in 0..n {
        let e1 = std_normal(rng);
        let e2 = p.rho * e1 + q * std_normal(rng);
        log_s[j + 1] = log_s[j] + p.mu + h[j].exp() * e1;
        h[j + 1] = p.alpha + theta * (h[j] - p.alpha) + tau * e2;
        y[j + 1] = normal(rng, log_s[j + 1], xi);
    }
    (h, log_s, y)
}

const NAMES: [&str; 6] = ["mu_hat", "theta_hat", "alpha_hat", "tau_sq_hat", "xi_sq", "rho"];

fn fields(c: &ContinuousParams) -> [f64; 6] {
    [c.mu_hat, c.theta_hat, c.alpha_hat, c.tau_sq_hat, c.xi_sq, c.rho]
}

#[derive(Debug, Clone, Default)]
struct Moments {
    n: f64,
    sum: [f64; 12],
    sum_sq: [f64; 12],
}

impl Moments {
    fn push(&mut self, c: &ContinuousParams) {
        let f = fields(c);
        self.n += 1.0;
        for i in 0..6 {
            for (k, v) in [(i, f[i]), (i + 6, f[i] * f[i])] {
                self.sum[k] += v;
                self.sum_sq[k] += v * v;
            }
        }
    }

    fn mean_se(&self, k: usize) -> (f64, f64) {
        let m = self.sum[k] / self.n;
        let var = (self.sum_sq[k] / self.n - m * m).max(0.0) * self.n / (self.n - 1.0);
        (m, (var / self.n).sqrt())
    }
}

/// Runs the check, returning means of the six
/// parameters and of their squares under both simulators.
pub fn run_geweke(prior: &DiscretePriorSpec, design: &GewekeDesign) -> Result<Vec<GewekeStat>> {
    let cfg = McmcConfig {
        iterations: design.sweeps,
        burn_in: 0,
        thin: 1,
        seed: design.seed,
        xi_mode: XiMode::Estimated,
        rho_mode: RhoMode::Estimated,
        rho_step: 0.5,
        adapt_rho: false,
        mixture_correction: design.mixture_correction,
        path_every: 0,
        initial: Some(TEST_INITIAL),
    };
    let mut forward = Moments::default();
    let mut marginal = Moments::default();
    for rep in 0..design.replications {
        let mut rng = stream_rng(design.seed, 2 * rep as u64);
        let params = prior.sample(&mut rng)?;
        let (h, log_s, y) = simulate_discrete(&params, design.n, TEST_INITIAL, &mut rng);
        let state = GibbsState { h, log_s, gamma: vec![0; design.n], params, iteration: 0 };
        let mut g = Gibbs::new(&y, prior, &cfg, TEST_INITIAL, state)?;
        for _ in 0..design.sweeps {
            g.sweep(&mut rng)?;
        }
        forward.push(&continuize(&g.state.params)?);
        let mut rng = stream_rng(design.seed, 2 * rep as u64 + 1);
        marginal.push(&continuize(&prior.sample(&mut rng)?)?);
    }
    let mut out = Vec::with_capacity(12);
    for k in 0..12 {
        let (sampler_mean, sampler_se) = forward.mean_se(k);
        let (prior_mean, prior_se) = marginal.mean_se(k);
        let name = if k < 6 { String::from(NAMES[k]) } else { alloc::format!("{}^2", NAMES[k - 6]) };
        out.push(GewekeStat { name, sampler_mean, sampler_se, prior_mean, prior_se });
    }
    Ok(out)
}
