//! Exact-discretization sample paths, microstructure noise and subsampling.
//!
//! Index convention: `log_sigma[k]` (for `k ≥ 1`) multiplies the return from
//! `k − 1` to `k`, and the price innovation of that return is paired with
//! the volatility innovation that produces `log_sigma[k + 1]`.
//! `log_sigma[0]` is the stationary draw the recursion starts from.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::dist::{normal, std_normal, uniform};
use crate::error::{Error, Result};
use crate::model::{discretize, ContinuousParams, InitialConditions};
use crate::rng::stream_rng;

/// Largest number of grid points a path may hold.
pub const MAX_POINTS: u64 = 1 << 31;

/// Additive contamination of the true log price.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MicrostructureSpec {
    None,
    /// `Y = log S + N(0, xi_sq)`.
    Gaussian { xi_sq: f64 },
    /// Uniform bid-ask bounce of total width `spread` on the price level,
    /// then rounding to a multiple of `tick`. `ref_price` is the typical
    /// price used to translate currency units to the log scale.
    BidAsk { spread: f64, tick: f64, ref_price: f64 },
}

impl MicrostructureSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            MicrostructureSpec::None => Ok(()),
            MicrostructureSpec::Gaussian { xi_sq } => {
                if xi_sq >= 0.0 && xi_sq.is_finite() {
                    Ok(())
                } else {
                    Err(Error::domain("xi_sq", "must be non-negative"))
                }
            }
            MicrostructureSpec::BidAsk { spread, tick, ref_price } => {
                if !(spread >= 0.0 && spread.is_finite()) {
                    return Err(Error::domain("spread", "must be non-negative"));
                }
                if !(tick > 0.0 && tick.is_finite()) {
                    return Err(Error::domain("tick", "must be positive"));
                }
                if !(ref_price > 0.0 && ref_price.is_finite()) {
                    return Err(Error::domain("ref_price", "must be positive"));
                }
                Ok(())
            }
        }
    }

    /// Rule-of-thumb noise variance `(D / 2Q)²` with `D = max(spread, tick)`:
    /// the noise standard deviation is taken as half the spread in log
    /// units. Meant for seeding priors; the generator is not affected.
    pub fn rule_of_thumb_xi_sq(&self) -> f64 {
        match *self {
            MicrostructureSpec::None => 0.0,
            MicrostructureSpec::Gaussian { xi_sq } => xi_sq,
            MicrostructureSpec::BidAsk { spread, tick, ref_price } => {
                let d = spread.max(tick) / (2.0 * ref_price);
                d * d
            }
        }
    }

    /// Variance of `Y − log S` the generator actually produces near
    /// `ref_price` (uniform bounce plus rounding error, both uniform).
    pub fn generated_variance(&self) -> f64 {
        match *self {
            MicrostructureSpec::None => 0.0,
            MicrostructureSpec::Gaussian { xi_sq } => xi_sq,
            MicrostructureSpec::BidAsk { spread, tick, ref_price } => {
                (spread * spread + tick * tick) / (12.0 * ref_price * ref_price)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    pub delta_sim_ms: u64,
    /// True log prices.
    pub log_s: Vec<f64>,
    /// Log volatilities on the discrete scale at `delta_sim_ms`.
    pub log_sigma: Vec<f64>,
    /// Observed log prices.
    pub y: Vec<f64>,
    pub seed: u64,
    /// Noise draws rejected because they produced a non-positive price.
    pub redraws: u64,
}

impl PathSample {
    pub fn n_points(&self) -> usize {
        self.log_s.len()
    }

    pub fn horizon_ms(&self) -> u64 {
        (self.n_points() as u64 - 1) * self.delta_sim_ms
    }
}

/// Observations on a uniform grid, optionally carrying the simulated truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedSeries {
    pub delta_obs_ms: u64,
    /// Milliseconds since session open.
    pub timestamps: Vec<u64>,
    pub y: Vec<f64>,
    pub truth: Option<LatentTruth>,
}

/// True latent values at the observation times.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTruth {
    pub log_s: Vec<f64>,
    /// `log σ̂` on the continuous scale.
    pub log_sigma_hat: Vec<f64>,
}

impl ObservedSeries {
    /// Builds a series from evenly spaced observations starting at time 0.
    pub fn from_grid(delta_obs_ms: u64, y: Vec<f64>) -> Result<Self> {
        if delta_obs_ms == 0 {
            return Err(Error::Grid("sampling period must be positive".into()));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Usage("observations must be finite".into()));
        }
        let timestamps = (0..y.len() as u64).map(|i| i * delta_obs_ms).collect();
        Ok(Self { delta_obs_ms, timestamps, y, truth: None })
    }

    /// Number of returns, `n(Δ)`.
    pub fn n(&self) -> usize {
        self.y.len().saturating_sub(1)
    }

    pub fn returns(&self) -> Vec<f64> {
        self.y.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

pub fn simulate_path(
    p: &ContinuousParams,
    delta_sim_ms: u64,
    horizon_ms: u64,
    init: &InitialConditions,
    seed: u64,
) -> Result<PathSample> {
    if delta_sim_ms == 0 {
        return Err(Error::Grid("simulation step must be positive".into()));
    }
    if horizon_ms < delta_sim_ms {
        return Err(Error::Usage(alloc::format!(
            "horizon {horizon_ms} ms is shorter than the simulation step {delta_sim_ms} ms"
        )));
    }
    let steps = horizon_ms / delta_sim_ms;
    if steps >= MAX_POINTS {
        return Err(Error::Size(alloc::format!("{steps} simulation steps exceed the limit of {MAX_POINTS}")));
    }
    let n = steps as usize;
    let d = discretize(p, delta_sim_ms as f64)?;
    let theta = d.theta();
    let tau = d.tau();
    let rho_c = (1.0 - d.rho * d.rho).max(0.0).sqrt();

    let mut rng = stream_rng(seed, 0);
    let mut log_s = Vec::with_capacity(n + 1);
    let mut log_sigma = Vec::with_capacity(n + 1);
    log_s.push(normal(&mut rng, init.eta, init.kappa_sq.sqrt()));
    log_sigma.push(normal(&mut rng, d.alpha, d.stationary_variance().sqrt()));
    // The first return has no preceding price innovation to pair with.
    let mut e2 = std_normal(&mut rng);
    for k in 1..=n {
        let h = d.alpha + theta * (log_sigma[k - 1] - d.alpha) + tau * e2;
        let e1 = std_normal(&mut rng);
        e2 = d.rho * e1 + rho_c * std_normal(&mut rng);
        log_s.push(log_s[k - 1] + d.mu + h.exp() * e1);
        log_sigma.push(h);
    }
    if log_s.iter().chain(&log_sigma).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("simulated path is not finite".into()));
    }
    let y = log_s.clone();
    Ok(PathSample { delta_sim_ms, log_s, log_sigma, y, seed, redraws: 0 })
}

const MAX_REDRAWS_PER_POINT: u32 = 10_000;

pub fn apply_microstructure(path: &PathSample, spec: &MicrostructureSpec, seed: u64) -> Result<PathSample> {
    spec.validate()?;
    if path.y != path.log_s {
        return Err(Error::Usage("microstructure noise has already been applied to this path".into()));
    }
    let mut out = path.clone();
    let mut rng = stream_rng(seed, 1);
    match *spec {
        MicrostructureSpec::None => {}
        MicrostructureSpec::Gaussian { xi_sq } => {
            let sd = xi_sq.sqrt();
            for y in out.y.iter_mut() {
                *y += sd * std_normal(&mut rng);
            }
        }
        MicrostructureSpec::BidAsk { spread, tick, .. } => {
            for (y, &ls) in out.y.iter_mut().zip(&path.log_s) {
                let level = ls.exp();
                let mut tries = 0;
                let price = loop {
                    let candidate = round_to_tick(level + spread * (uniform(&mut rng) - 0.5), tick);
                    if candidate > 0.0 {
                        break candidate;
                    }
                    tries += 1;
                    out.redraws += 1;
                    if tries >= MAX_REDRAWS_PER_POINT {
                        return Err(Error::Numeric(alloc::format!(
                            "price level {level} cannot be kept positive under spread {spread} and tick {tick}"
                        )));
                    }
                };
                *y = price.ln();
            }
        }
    }
    Ok(out)
}

pub fn round_to_tick(price: f64, tick: f64) -> f64 {
    (price / tick).round() * tick
}

fn grid_ratio(path: &PathSample, delta_obs_ms: u64) -> Result<usize> {
    if delta_obs_ms == 0 || delta_obs_ms % path.delta_sim_ms != 0 {
        return Err(Error::Grid(alloc::format!(
            "observation period {delta_obs_ms} ms is not a multiple of the simulation step {} ms",
            path.delta_sim_ms
        )));
    }
    Ok((delta_obs_ms / path.delta_sim_ms) as usize)
}

pub fn subsample(path: &PathSample, delta_obs_ms: u64) -> Result<ObservedSeries> {
    let m = grid_ratio(path, delta_obs_ms)?;
    let half_log_delta = 0.5 * (path.delta_sim_ms as f64).ln();
    let idx: Vec<usize> = (0..path.n_points()).step_by(m).collect();
    Ok(ObservedSeries {
        delta_obs_ms,
        timestamps: idx.iter().map(|&i| i as u64 * path.delta_sim_ms).collect(),
        y: idx.iter().map(|&i| path.y[i]).collect(),
        truth: Some(LatentTruth {
            log_s: idx.iter().map(|&i| path.log_s[i]).collect(),
            log_sigma_hat: idx.iter().map(|&i| path.log_sigma[i] - half_log_delta).collect(),
        }),
    })
}

/// `Σ σ_k²` over the simulation steps covered by the subsampled series.
pub fn true_integrated_variance(path: &PathSample, delta_obs_ms: u64) -> Result<f64> {
    let m = grid_ratio(path, delta_obs_ms)?;
    let covered = (path.n_points() - 1) / m * m;
    Ok(path.log_sigma[1..=covered].iter().map(|h| (2.0 * h).exp()).sum())
}
