//! Integrated-variance estimators: the posterior sum of squared volatilities
//! and the frequentist baselines (realized variance, kernel realized
//! variance with stationary-bootstrap intervals).

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;

use crate::dist::uniform;
use crate::error::{Error, Result};
use crate::mcmc::{quantile, ChainOutput};
use crate::rng::stream_rng;
use crate::simulate::ObservedSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntervalMethod {
    Posterior,
    Bootstrap,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalEstimate {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    /// Tail mass `a` of the `1 − a` interval.
    pub level: f64,
    pub method: IntervalMethod,
}

impl IntervalEstimate {
    pub fn covers(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

fn check_level(level: f64) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::domain("level", "tail mass must lie in (0, 1)"));
    }
    Ok(())
}

/// Equal-tailed interval of `samples` around `point`. The interval is
/// widened to contain the point if a skewed sample puts it outside.
pub fn percentile_interval(samples: &[f64], point: f64, level: f64, method: IntervalMethod) -> Result<IntervalEstimate> {
    check_level(level)?;
    if samples.is_empty() {
        return Err(Error::Usage("no samples to form an interval".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let lower = quantile(&sorted, 0.5 * level).min(point);
    let upper = quantile(&sorted, 1.0 - 0.5 * level).max(point);
    Ok(IntervalEstimate { point, lower, upper, level, method })
}

/// Posterior draws of `Σ_j σ_j²` with their mean and equal-tailed interval.
pub fn posterior_iv(chain: &ChainOutput, level: f64) -> Result<(Vec<f64>, IntervalEstimate)> {
    if chain.iv.is_empty() {
        return Err(Error::Usage("chain retained no volatility draws".into()));
    }
    let mean = chain.iv.iter().sum::<f64>() / chain.iv.len() as f64;
    let est = percentile_interval(&chain.iv, mean, level, IntervalMethod::Posterior)?;
    Ok((chain.iv.clone(), est))
}

pub fn realized_variance(series: &ObservedSeries) -> Result<f64> {
    if series.y.len() < 2 {
        return Err(Error::Usage("realized variance needs at least two observations".into()));
    }
    Ok(rv_of_returns(&series.returns()))
}

pub fn rv_of_returns(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelWeights {
    /// `w_h = 1 − h/(H + 1)`.
    Bartlett,
    /// `w_h = 1` for every lag, the construction with `H = 1` being Zhou's.
    Flat,
}

impl KernelWeights {
    pub fn weight(self, h: usize, bandwidth: usize) -> f64 {
        match self {
            KernelWeights::Bartlett => 1.0 - h as f64 / (bandwidth as f64 + 1.0),
            KernelWeights::Flat => 1.0,
        }
    }
}

/// `⌈n^(1/3)⌉` for `n` returns.
pub fn default_bandwidth(n: usize) -> usize {
    let h = (n as f64).cbrt().ceil() as usize;
    // Guard against cbrt rounding just above an integer.
    if h > 1 && (h - 1).pow(3) >= n {
        h - 1
    } else {
        h
    }
}

/// Realized autocovariance `Σ_j r_j r_{j−h}`.
pub fn realized_autocovariance(r: &[f64], h: usize) -> f64 {
    r.iter().skip(h).zip(r).map(|(a, b)| a * b).sum()
}

/// `γ_0 + Σ_{h=1..H} w_h (γ_h + γ_{−h})` on the returns.
pub fn kernel_rv_of_returns(r: &[f64], bandwidth: usize, weights: KernelWeights) -> Result<f64> {
    if 2 * bandwidth >= r.len() {
        return Err(Error::Usage(alloc::format!(
            "bandwidth {bandwidth} must be below half the number of returns ({})",
            r.len()
        )));
    }
    let mut total = realized_autocovariance(r, 0);
    for h in 1..=bandwidth {
        total += 2.0 * weights.weight(h, bandwidth) * realized_autocovariance(r, h);
    }
    Ok(total)
}

pub fn kernel_realized_variance(series: &ObservedSeries, bandwidth: usize, weights: KernelWeights) -> Result<f64> {
    kernel_rv_of_returns(&series.returns(), bandwidth, weights)
}

/// An integrated-variance estimator applied to a vector of returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IvEstimator {
    Realized,
    Kernel { bandwidth: usize, weights: KernelWeights },
}

impl IvEstimator {
    pub fn apply(&self, r: &[f64]) -> Result<f64> {
        match *self {
            IvEstimator::Realized => Ok(rv_of_returns(r)),
            IvEstimator::Kernel { bandwidth, weights } => kernel_rv_of_returns(r, bandwidth, weights),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapDesign {
    pub mean_block_len: f64,
    pub replicates: usize,
    /// Tail mass of the interval.
    pub level: f64,
    pub seed: u64,
}

impl BootstrapDesign {
    /// Block length `n^(1/3)`, 1000 resamples, 95% interval.
    pub fn default_for(n: usize, seed: u64) -> Self {
        Self { mean_block_len: (n as f64).cbrt().max(1.0), replicates: 1000, level: 0.05, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mean_block_len >= 1.0) {
            return Err(Error::domain("mean_block_len", "must be at least 1"));
        }
        if self.replicates < 100 {
            return Err(Error::domain("replicates", "at least 100 bootstrap resamples are required"));
        }
        check_level(self.level)
    }
}

/// Fills `out` with a stationary-bootstrap resample of `r`: blocks start at
/// uniform positions of the periodically extended series and have
/// geometric lengths with mean `mean_block_len`. A mean at least the series
/// length makes the whole resample one block, i.e. a rotation.
pub fn stationary_resample<R: Rng + ?Sized>(r: &[f64], mean_block_len: f64, rng: &mut R, out: &mut Vec<f64>) {
    let n = r.len();
    out.clear();
    let p = if mean_block_len >= n as f64 { 0.0 } else { 1.0 / mean_block_len };
    let mut pos = (uniform(rng) * n as f64) as usize % n;
    while out.len() < n {
        out.push(r[pos]);
        pos = if uniform(rng) < p { (uniform(rng) * n as f64) as usize % n } else { (pos + 1) % n };
    }
}

/// The estimator on resample `b`. Each resample has its own RNG stream, so
/// resamples can be computed in any order or in parallel.
pub fn bootstrap_statistic(r: &[f64], est: IvEstimator, design: &BootstrapDesign, b: usize, buf: &mut Vec<f64>) -> Result<f64> {
    let mut rng = stream_rng(design.seed, b as u64);
    stationary_resample(r, design.mean_block_len, &mut rng, buf);
    est.apply(buf)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapInterval {
    pub interval: IntervalEstimate,
    /// The returns had zero variance; the interval is a point.
    pub degenerate: bool,
}

/// Percentile interval from already computed resample statistics.
pub fn bootstrap_interval_from(r: &[f64], est: IvEstimator, design: &BootstrapDesign, stats: &[f64]) -> Result<BootstrapInterval> {
    let point = est.apply(r)?;
    if r.iter().all(|x| *x == r[0]) {
        let interval = IntervalEstimate { point, lower: point, upper: point, level: design.level, method: IntervalMethod::Bootstrap };
        return Ok(BootstrapInterval { interval, degenerate: true });
    }
    let interval = percentile_interval(stats, point, design.level, IntervalMethod::Bootstrap)?;
    Ok(BootstrapInterval { interval, degenerate: false })
}

pub fn stationary_bootstrap_ci(series: &ObservedSeries, est: IvEstimator, design: &BootstrapDesign) -> Result<BootstrapInterval> {
    stationary_bootstrap_ci_returns(&series.returns(), est, design)
}

pub fn stationary_bootstrap_ci_returns(r: &[f64], est: IvEstimator, design: &BootstrapDesign) -> Result<BootstrapInterval> {
    design.validate()?;
    if r.is_empty() {
        return Err(Error::Usage("no returns to resample".into()));
    }
    est.apply(r)?;
    let mut buf = Vec::with_capacity(r.len());
    let stats = (0..design.replicates)
        .map(|b| bootstrap_statistic(r, est, design, b, &mut buf))
        .collect::<Result<Vec<f64>>>()?;
    bootstrap_interval_from(r, est, design, &stats)
}
