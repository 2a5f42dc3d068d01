//! Scalar densities and samplers used throughout the sampler.

use core::f64::consts::{PI, SQRT_2};

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand_distr::{Beta, Distribution, Exp1, Gamma, StandardNormal};

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn ln_norm_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -LN_SQRT_2PI - 0.5 * var.ln() - 0.5 * d * d / var
}

/// Standard normal CDF, accurate in both tails.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// Standard normal survival function `1 − Φ(x)`.
pub fn norm_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x / SQRT_2)
}

/// `Φ(hi) − Φ(lo)` computed on whichever side of zero keeps precision.
pub fn norm_interval_mass(lo: f64, hi: f64) -> f64 {
    if lo > 0.0 {
        norm_sf(lo) - norm_sf(hi)
    } else {
        norm_cdf(hi) - norm_cdf(lo)
    }
}

pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// Inverse-gamma log density with density `∝ x^(−shape−1) exp(−rate/x)`.
pub fn ln_inv_gamma_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - rate / x
}

pub fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub fn normal<R: Rng + ?Sized>(rng: &mut R, mean: f64, sd: f64) -> f64 {
    mean + sd * std_normal(rng)
}

pub fn uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random::<f64>()
}

/// Draw from `Inv-Gamma(shape, rate)`.
pub fn inv_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, rate: f64) -> Result<f64> {
    if !(shape > 0.0 && rate > 0.0 && shape.is_finite() && rate.is_finite()) {
        return Err(Error::Numeric(alloc::format!(
            "inverse-gamma needs positive finite parameters, got shape={shape}, rate={rate}"
        )));
    }
    let g = Gamma::new(shape, 1.0).map_err(|e| Error::Numeric(alloc::format!("{e}")))?;
    let draw: f64 = g.sample(rng);
    Ok(rate / draw)
}

pub fn beta<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> Result<f64> {
    let d = Beta::new(a, b).map_err(|e| Error::Numeric(alloc::format!("{e}")))?;
    Ok(d.sample(rng))
}

/// Draw from `N(mean, sd²)` restricted to `[lo, hi]`.
///
/// Rejection schemes after Robert (1995): normal or uniform proposals when
/// the interval straddles the mode, uniform or translated exponential
/// proposals in a tail. Works for intervals many standard deviations out.
pub fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, mean: f64, sd: f64, lo: f64, hi: f64) -> Result<f64> {
    if !(sd > 0.0) || !(lo < hi) || mean.is_nan() {
        return Err(Error::Numeric(alloc::format!(
            "truncated normal needs sd > 0 and lo < hi, got mean={mean}, sd={sd}, [{lo}, {hi}]"
        )));
    }
    let a = (lo - mean) / sd;
    let b = (hi - mean) / sd;
    let z = std_truncated_normal(rng, a, b);
    Ok((mean + sd * z).clamp(lo, hi))
}

fn std_truncated_normal<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        upper_tail(rng, a, b)
    } else if b <= 0.0 {
        -upper_tail(rng, -b, -a)
    } else if b - a >= (2.0 * PI).sqrt() {
        loop {
            let z = std_normal(rng);
            if z >= a && z <= b {
                return z;
            }
        }
    } else {
        loop {
            let z = a + (b - a) * uniform(rng);
            if uniform(rng) <= (-0.5 * z * z).exp() {
                return z;
            }
        }
    }
}

// Standard normal on [a, b] with 0 <= a < b (b may be infinite).
fn upper_tail<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> f64 {
    let uniform_floor = if b.is_finite() { (0.5 * (a * a - b * b)).exp() } else { 0.0 };
    if uniform_floor >= 0.3 {
        loop {
            let z = a + (b - a) * uniform(rng);
            if uniform(rng) <= (0.5 * (a * a - z * z)).exp() {
                return z;
            }
        }
    }
    let rate = 0.5 * (a + (a * a + 4.0).sqrt());
    loop {
        let e: f64 = Exp1.sample(rng);
        let z = a + e / rate;
        if z > b {
            continue;
        }
        let d = z - rate;
        if uniform(rng) <= (-0.5 * d * d).exp() {
            return z;
        }
    }
}

/// Draw an index with probability proportional to `exp(log_weights[i])`.
/// Overwrites `log_weights` with normalized probabilities.
pub fn categorical_from_log_weights<R: Rng + ?Sized>(rng: &mut R, log_weights: &mut [f64]) -> Result<usize> {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Numeric("all categorical weights underflowed".into()));
    }
    let mut total = 0.0;
    for w in log_weights.iter_mut() {
        *w = (*w - max).exp();
        total += *w;
    }
    for w in log_weights.iter_mut() {
        *w /= total;
    }
    let u = uniform(rng);
    let mut acc = 0.0;
    for (i, w) in log_weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return Ok(i);
        }
    }
    Ok(log_weights.len() - 1)
}
