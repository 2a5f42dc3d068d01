//! Scalar linear-Gaussian state-space engine and the log-χ² mixture that
//! turns the volatility equation into one.
//!
//! The engine handles
//!
//! ```text
//! x_{t+1} = F_t x_t + c_t + N(0, Q_t)        t = 0 .. N−2
//! y_t     = H_t x_t + g_t + N(0, R_t)        t = 0 .. N−1, y_t optional
//! x_0     ~ N(m0, P0)
//! ```

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;

use crate::dist::normal;
use crate::error::{Error, Result};
use crate::model::DiscreteParams;

/// Lower clamp on predictive variances.
pub const MIN_PRED_VAR: f64 = 1e-18;

/// Floor on `|r_j − μ(Δ)|` before taking logs.
pub const RETURN_FLOOR: f64 = 1e-12;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinearGaussianSsm {
    pub f: Vec<f64>,
    pub c: Vec<f64>,
    pub q: Vec<f64>,
    pub h: Vec<f64>,
    pub g: Vec<f64>,
    pub r: Vec<f64>,
    pub y: Vec<Option<f64>>,
    pub m0: f64,
    pub p0: f64,
}

impl LinearGaussianSsm {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Resizes every array for `n` states, keeping allocations.
    pub fn resize(&mut self, n: usize) {
        let t = n.saturating_sub(1);
        self.f.resize(t, 0.0);
        self.c.resize(t, 0.0);
        self.q.resize(t, 0.0);
        self.h.resize(n, 0.0);
        self.g.resize(n, 0.0);
        self.r.resize(n, 0.0);
        self.y.resize(n, None);
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.y.len();
        if n == 0 {
            return Err(Error::Usage("state-space model has no states".into()));
        }
        if [self.f.len(), self.c.len(), self.q.len()].iter().any(|&l| l != n - 1)
            || [self.h.len(), self.g.len(), self.r.len()].iter().any(|&l| l != n)
        {
            return Err(Error::Usage("state-space arrays have inconsistent lengths".into()));
        }
        if !(self.p0 > 0.0) || !self.m0.is_finite() {
            return Err(Error::domain("p0", "initial variance must be positive"));
        }
        if self.q.iter().any(|&q| !(q >= 0.0)) {
            return Err(Error::domain("q", "state noise variances must be non-negative"));
        }
        for (t, y) in self.y.iter().enumerate() {
            if y.is_some() && !(self.r[t] > 0.0) {
                return Err(Error::domain("r", "observation noise variances must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FilterOutput {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub loglik: f64,
}

pub fn forward_filter(m: &LinearGaussianSsm) -> Result<FilterOutput> {
    let mut out = FilterOutput::default();
    forward_filter_into(m, &mut out)?;
    Ok(out)
}

/// Kalman filter writing into `out` so chains can reuse the buffers.
pub fn forward_filter_into(m: &LinearGaussianSsm, out: &mut FilterOutput) -> Result<()> {
    m.validate()?;
    let n = m.len();
    out.mean.resize(n, 0.0);
    out.var.resize(n, 0.0);
    out.loglik = 0.0;
    let (mut mp, mut pp) = (m.m0, m.p0);
    for t in 0..n {
        if t > 0 {
            let (mf, pf) = (out.mean[t - 1], out.var[t - 1]);
            mp = m.f[t - 1] * mf + m.c[t - 1];
            pp = (m.f[t - 1] * m.f[t - 1] * pf + m.q[t - 1]).max(MIN_PRED_VAR);
        }
        if let Some(y) = m.y[t] {
            let e = y - m.h[t] * mp - m.g[t];
            let s = m.h[t] * m.h[t] * pp + m.r[t];
            if !(s > 0.0) || !s.is_finite() || !e.is_finite() {
                return Err(Error::Filter { step: t, reason: alloc::format!("innovation variance {s}") });
            }
            let k = pp * m.h[t] / s;
            out.mean[t] = mp + k * e;
            out.var[t] = (pp - k * m.h[t] * pp).max(0.0);
            out.loglik += -0.5 * (LN_2PI + s.ln() + e * e / s);
        } else {
            out.mean[t] = mp;
            out.var[t] = pp;
        }
        if !out.mean[t].is_finite() || !out.var[t].is_finite() {
            return Err(Error::Filter { step: t, reason: "filtered moments are not finite".into() });
        }
    }
    Ok(())
}

pub fn backward_sample<R: Rng + ?Sized>(m: &LinearGaussianSsm, filt: &FilterOutput, rng: &mut R) -> Result<Vec<f64>> {
    let mut x = vec![0.0; m.len()];
    backward_sample_into(m, filt, rng, &mut x)?;
    Ok(x)
}

/// Draws the whole state path from its joint smoothing distribution.
pub fn backward_sample_into<R: Rng + ?Sized>(
    m: &LinearGaussianSsm,
    filt: &FilterOutput,
    rng: &mut R,
    x: &mut [f64],
) -> Result<()> {
    let n = m.len();
    if filt.mean.len() != n || x.len() != n {
        return Err(Error::Usage("filter output does not match the model".into()));
    }
    x[n - 1] = normal(rng, filt.mean[n - 1], filt.var[n - 1].sqrt());
    for t in (0..n - 1).rev() {
        let (mt, pt) = (filt.mean[t], filt.var[t]);
        let (f, q) = (m.f[t], m.q[t]);
        let pp = (f * f * pt + q).max(MIN_PRED_VAR);
        let j = pt * f / pp;
        let mean = mt + j * (x[t + 1] - f * mt - m.c[t]);
        let var = (pt * q / pp).max(0.0);
        x[t] = normal(rng, mean, var.sqrt());
        if !x[t].is_finite() {
            return Err(Error::Filter { step: t, reason: "backward draw is not finite".into() });
        }
    }
    Ok(())
}

/// Rauch-Tung-Striebel smoothed means and variances.
pub fn smooth(m: &LinearGaussianSsm, filt: &FilterOutput) -> (Vec<f64>, Vec<f64>) {
    let n = m.len();
    let mut ms = filt.mean.clone();
    let mut ps = filt.var.clone();
    for t in (0..n - 1).rev() {
        let (mt, pt) = (filt.mean[t], filt.var[t]);
        let f = m.f[t];
        let pp = (f * f * pt + m.q[t]).max(MIN_PRED_VAR);
        let j = pt * f / pp;
        ms[t] = mt + j * (ms[t + 1] - f * mt - m.c[t]);
        ps[t] = pt + j * j * (ps[t + 1] - pp);
    }
    (ms, ps)
}

pub const MIXTURE_SIZE: usize = 10;

/// Ten-component normal mixture for `log ε²`, `ε ~ N(0, 1)`, with the
/// constants of the L2-optimal linearization of `exp(ε*)` per component.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureTable {
    pub p: [f64; MIXTURE_SIZE],
    pub m: [f64; MIXTURE_SIZE],
    pub v_sq: [f64; MIXTURE_SIZE],
    pub a: [f64; MIXTURE_SIZE],
    pub b: [f64; MIXTURE_SIZE],
    pub ln_p: [f64; MIXTURE_SIZE],
    /// `e^(m/2)`.
    pub exp_half_m: [f64; MIXTURE_SIZE],
    /// Variance of `ε* = ½ log ε²` given the component, `v²/4`.
    pub var_star: [f64; MIXTURE_SIZE],
    /// `log p_l − ½ log(2π v²/4)`.
    pub ln_weight_const: [f64; MIXTURE_SIZE],
    /// `1 / (2 v²/4)`.
    pub half_precision: [f64; MIXTURE_SIZE],
}

impl MixtureTable {
    pub fn omori() -> Self {
        let p = [0.00609, 0.04775, 0.13057, 0.20674, 0.22715, 0.18842, 0.12047, 0.05591, 0.01575, 0.00115];
        let m = [1.92677, 1.34744, 0.73504, 0.02266, -0.85173, -1.97278, -3.46788, -5.55246, -8.68384, -14.65];
        let v_sq = [0.11265, 0.17788, 0.26768, 0.40611, 0.62699, 0.98583, 1.57469, 2.54498, 4.16591, 7.33342];
        let mut t = Self {
            p,
            m,
            v_sq,
            a: [0.0; MIXTURE_SIZE],
            b: [0.0; MIXTURE_SIZE],
            ln_p: [0.0; MIXTURE_SIZE],
            exp_half_m: [0.0; MIXTURE_SIZE],
            var_star: [0.0; MIXTURE_SIZE],
            ln_weight_const: [0.0; MIXTURE_SIZE],
            half_precision: [0.0; MIXTURE_SIZE],
        };
        for l in 0..MIXTURE_SIZE {
            let (a, b) = linearization_constants(v_sq[l]);
            t.a[l] = a;
            t.b[l] = b;
            t.ln_p[l] = p[l].ln();
            t.exp_half_m[l] = (0.5 * m[l]).exp();
            t.var_star[l] = 0.25 * v_sq[l];
            t.ln_weight_const[l] = t.ln_p[l] - 0.5 * (LN_2PI + t.var_star[l].ln());
            t.half_precision[l] = 0.5 / t.var_star[l];
        }
        t
    }

    /// Mean of `ε*` under the mixture.
    pub fn mean_star(&self) -> f64 {
        (0..MIXTURE_SIZE).map(|l| self.p[l] * 0.5 * self.m[l]).sum()
    }

    /// Variance of `ε*` under the mixture.
    pub fn var_star_total(&self) -> f64 {
        let mean = self.mean_star();
        (0..MIXTURE_SIZE)
            .map(|l| self.p[l] * (self.var_star[l] + (0.5 * self.m[l] - mean).powi(2)))
            .sum()
    }

    /// `log Σ_l p_l N(e; m_l/2, v_l²/4)`.
    pub fn ln_density_star(&self, e: f64) -> f64 {
        let mut terms = [0.0; MIXTURE_SIZE];
        self.ln_joint_star(e, &mut terms);
        log_sum_exp(&terms)
    }

    /// `log p_l + log N(e; m_l/2, v_l²/4)` for every component.
    #[inline]
    pub fn ln_joint_star(&self, e: f64, out: &mut [f64; MIXTURE_SIZE]) {
        for l in 0..MIXTURE_SIZE {
            let d = e - 0.5 * self.m[l];
            out[l] = self.ln_weight_const[l] - d * d * self.half_precision[l];
        }
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Constants `(a, b)` minimizing `E[(e^(ε*) − e^(m/2)(a + b(2ε* − m)))²]`
/// for `ε* ~ N(m/2, v²/4)`: `a = e^(v²/8)`, `b = ½ e^(v²/8)`.
pub fn linearization_constants(v_sq: f64) -> (f64, f64) {
    let a = (v_sq / 8.0).exp();
    (a, 0.5 * a)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TransformedObs {
    /// `log |r_j − μ(Δ)|`, floored.
    pub y_star: Vec<f64>,
    /// Sign of `r_j − μ(Δ)` as ±1.
    pub d: Vec<f64>,
    pub degenerate: Vec<bool>,
}

impl TransformedObs {
    pub fn len(&self) -> usize {
        self.y_star.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_star.is_empty()
    }
}

pub fn transform_returns(log_s: &[f64], mu: f64) -> TransformedObs {
    let mut out = TransformedObs::default();
    transform_returns_into(log_s, mu, &mut out);
    out
}

pub fn transform_returns_into(log_s: &[f64], mu: f64, out: &mut TransformedObs) {
    let n = log_s.len().saturating_sub(1);
    out.y_star.resize(n, 0.0);
    out.d.resize(n, 1.0);
    out.degenerate.resize(n, false);
    for j in 0..n {
        let e = log_s[j + 1] - log_s[j] - mu;
        let abs = e.abs();
        out.d[j] = if e < 0.0 { -1.0 } else { 1.0 };
        out.degenerate[j] = !(abs >= RETURN_FLOOR);
        out.y_star[j] = abs.max(RETURN_FLOOR).ln();
    }
}

/// Conditionally linear-Gaussian system for `h_1 .. h_{n+1}` given the
/// mixture indicators (`gamma[j]` indexes the component of return `j+1`).
///
/// The price innovation of return `j` is approximated given its component
/// by `ε_j = d_j e^(m/2)(a + 2b(ε*_j − m/2))`, which makes
/// `h_{j+1} = θ_j h_j + α_j + τ √(1−ρ²) z_j` with
/// `θ_j = θ − 2 b ρ τ d_j e^(m/2)` and
/// `α_j = α(1 − θ) + ρ τ d_j e^(m/2) (a + 2b(y*_j − m/2))`.
pub fn build_volatility_ssm(
    obs: &TransformedObs,
    gamma: &[u8],
    p: &DiscreteParams,
    mix: &MixtureTable,
    out: &mut LinearGaussianSsm,
) -> Result<()> {
    let n = obs.len();
    if gamma.len() != n {
        return Err(Error::Usage("indicator count does not match the returns".into()));
    }
    if p.rho.abs() >= 1.0 {
        return Err(Error::domain("rho", "|ρ| = 1 leaves the volatility equation without noise"));
    }
    let theta = p.theta();
    let tau = p.tau();
    let q = p.tau_sq * (1.0 - p.rho * p.rho);
    out.resize(n + 1);
    out.m0 = p.alpha;
    out.p0 = p.stationary_variance();
    for j in 0..n {
        let l = gamma[j] as usize;
        let k = p.rho * tau * obs.d[j] * mix.exp_half_m[l];
        out.f[j] = theta - 2.0 * mix.b[l] * k;
        out.c[j] = p.alpha * (1.0 - theta) + k * (mix.a[l] + 2.0 * mix.b[l] * (obs.y_star[j] - 0.5 * mix.m[l]));
        out.q[j] = q;
        out.h[j] = 1.0;
        out.g[j] = 0.5 * mix.m[l];
        out.r[j] = mix.var_star[l];
        out.y[j] = Some(obs.y_star[j]);
    }
    out.h[n] = 1.0;
    out.g[n] = 0.0;
    out.r[n] = 1.0;
    out.y[n] = None;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use nalgebra::{DMatrix, DVector};
    use rand::Rng;
    use std::vec::Vec;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    fn random_system<R: Rng>(rng: &mut R, n: usize) -> LinearGaussianSsm {
        let mut m = LinearGaussianSsm::default();
        m.resize(n);
        for t in 0..n - 1 {
            m.f[t] = rng.random_range(-1.2..1.2);
            m.c[t] = rng.random_range(-1.0..1.0);
            m.q[t] = rng.random_range(0.1..2.0);
        }
        for t in 0..n {
            m.h[t] = rng.random_range(0.3..1.5);
            m.g[t] = rng.random_range(-0.5..0.5);
            m.r[t] = rng.random_range(0.2..2.0);
            m.y[t] = if t == 1 && n > 2 { None } else { Some(rng.random_range(-2.0..2.0)) };
        }
        m.m0 = rng.random_range(-1.0..1.0);
        m.p0 = rng.random_range(0.5..2.0);
        m
    }

    // Joint prior mean and covariance of the states, built densely.
    fn state_moments(m: &LinearGaussianSsm, upto: usize) -> (DVector<f64>, DMatrix<f64>) {
        let mut mean = DVector::zeros(upto);
        let mut cov = DMatrix::zeros(upto, upto);
        mean[0] = m.m0;
        cov[(0, 0)] = m.p0;
        for t in 1..upto {
            mean[t] = m.f[t - 1] * mean[t - 1] + m.c[t - 1];
            for s in 0..t {
                cov[(t, s)] = m.f[t - 1] * cov[(t - 1, s)];
                cov[(s, t)] = cov[(t, s)];
            }
            cov[(t, t)] = m.f[t - 1] * m.f[t - 1] * cov[(t - 1, t - 1)] + m.q[t - 1];
        }
        (mean, cov)
    }

    // Posterior of x_0..x_{upto-1} given the observations among the first `obs_upto`.
    fn dense_posterior(m: &LinearGaussianSsm, upto: usize, obs_upto: usize) -> (DVector<f64>, DMatrix<f64>, f64) {
        let (mx, sx) = state_moments(m, upto.max(obs_upto));
        let idx: Vec<usize> = (0..obs_upto).filter(|&t| m.y[t].is_some()).collect();
        let k = idx.len();
        let dim = mx.len();
        let mut hmat = DMatrix::zeros(k, dim);
        let mut my = DVector::zeros(k);
        let mut yv = DVector::zeros(k);
        let mut rmat = DMatrix::zeros(k, k);
        for (i, &t) in idx.iter().enumerate() {
            hmat[(i, t)] = m.h[t];
            my[i] = m.h[t] * mx[t] + m.g[t];
            yv[i] = m.y[t].unwrap();
            rmat[(i, i)] = m.r[t];
        }
        let syy = &hmat * &sx * hmat.transpose() + rmat;
        let sxy = &sx * hmat.transpose();
        let inv = syy.clone().try_inverse().unwrap();
        let resid = &yv - &my;
        let post_mean = &mx + &sxy * &inv * &resid;
        let post_cov = &sx - &sxy * &inv * sxy.transpose();
        let ll = -0.5 * (k as f64 * LN_2PI + syy.determinant().ln() + (resid.transpose() * &inv * &resid)[(0, 0)]);
        (post_mean.rows(0, upto).into_owned(), post_cov.view((0, 0), (upto, upto)).into_owned(), ll)
    }

    #[test]
    fn single_conjugate_step() {
        let mut m = LinearGaussianSsm::default();
        m.resize(1);
        m.h[0] = 1.0;
        m.r[0] = 1.0;
        m.y[0] = Some(2.0);
        m.m0 = 0.0;
        m.p0 = 1.0;
        let f = forward_filter(&m).unwrap();
        assert!((f.mean[0] - 1.0).abs() < 1e-15 && (f.var[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn filter_and_smoother_match_dense_conditioning() {
        let mut rng = seeded(41);
        for trial in 0..20 {
            let n = 2 + trial % 4;
            let m = random_system(&mut rng, n);
            let f = forward_filter(&m).unwrap();
            let (ms, ps) = smooth(&m, &f);
            for t in 0..n {
                let (pm, pc, _) = dense_posterior(&m, t + 1, t + 1);
                assert!(rel(f.mean[t], pm[t]) < 1e-8 || (f.mean[t] - pm[t]).abs() < 1e-12, "filtered mean");
                assert!(rel(f.var[t], pc[(t, t)]) < 1e-8, "filtered var");
            }
            let (pm, pc, ll) = dense_posterior(&m, n, n);
            for t in 0..n {
                assert!(rel(ms[t], pm[t]) < 1e-8 || (ms[t] - pm[t]).abs() < 1e-12, "smoothed mean");
                assert!(rel(ps[t], pc[(t, t)]) < 1e-8, "smoothed var");
            }
            assert!((f.loglik - ll).abs() < 1e-8 * ll.abs().max(1.0), "loglik {} vs {}", f.loglik, ll);
        }
    }

    #[test]
    fn loglik_matches_dense_density_up_to_eight_steps() {
        let mut rng = seeded(42);
        for n in 1..=8 {
            let m = random_system(&mut rng, n);
            let f = forward_filter(&m).unwrap();
            let (_, _, ll) = dense_posterior(&m, n, n);
            assert!((f.loglik - ll).abs() < 1e-8 * ll.abs().max(1.0));
        }
    }

    #[test]
    fn uninformative_observations_follow_prior() {
        let mut rng = seeded(43);
        let mut m = random_system(&mut rng, 5);
        for r in m.r.iter_mut() {
            *r = 1e300;
        }
        let f = forward_filter(&m).unwrap();
        let mut mean = m.m0;
        for t in 0..5 {
            if t > 0 {
                mean = m.f[t - 1] * mean + m.c[t - 1];
            }
            assert!((f.mean[t] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_transition_backward_sample() {
        let mut rng = seeded(44);
        let mut m = random_system(&mut rng, 5);
        for q in m.q.iter_mut() {
            *q = 0.0;
        }
        let f = forward_filter(&m).unwrap();
        let x = backward_sample(&m, &f, &mut rng).unwrap();
        for t in 0..4 {
            assert!((x[t + 1] - (m.f[t] * x[t] + m.c[t])).abs() < 1e-9);
        }
    }

    #[test]
    fn backward_sampler_moments() {
        let mut rng = seeded(45);
        let m = random_system(&mut rng, 5);
        let f = forward_filter(&m).unwrap();
        let (pm, pc, _) = dense_posterior(&m, 5, 5);
        let draws = 200_000;
        let mut sum = [0.0; 5];
        let mut cross = [[0.0; 5]; 5];
        let mut x = [0.0; 5];
        for _ in 0..draws {
            backward_sample_into(&m, &f, &mut rng, &mut x).unwrap();
            for i in 0..5 {
                sum[i] += x[i];
                for j in 0..5 {
                    cross[i][j] += (x[i] - pm[i]) * (x[j] - pm[j]);
                }
            }
        }
        let nd = draws as f64;
        for i in 0..5 {
            let se = (pc[(i, i)] / nd).sqrt();
            assert!((sum[i] / nd - pm[i]).abs() < 4.0 * se, "mean {i}");
            for j in 0..5 {
                let c = cross[i][j] / nd;
                let se = ((pc[(i, i)] * pc[(j, j)] + pc[(i, j)].powi(2)) / nd).sqrt();
                assert!((c - pc[(i, j)]).abs() < 4.0 * se, "cov {i},{j}");
            }
        }
    }

    #[test]
    fn backward_sample_last_state_is_filtered_marginal() {
        let mut rng = seeded(46);
        let m = random_system(&mut rng, 4);
        let f = forward_filter(&m).unwrap();
        let (mu, sd) = (f.mean[3], f.var[3].sqrt());
        let mut z: Vec<f64> = (0..10_000)
            .map(|_| (backward_sample(&m, &f, &mut rng).unwrap()[3] - mu) / sd)
            .collect();
        z.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = z.len() as f64;
        let d = z
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let c = crate::dist::norm_cdf(v);
                (c - i as f64 / n).abs().max(((i + 1) as f64 / n - c).abs())
            })
            .fold(0.0, f64::max);
        // Kolmogorov-Smirnov critical value at p = 0.01.
        assert!(d * n.sqrt() < 1.628, "KS statistic {d}");
    }

    // Energy distance between two samples of vectors.
    fn energy_statistic(a: &[[f64; 4]], b: &[[f64; 4]]) -> f64 {
        let dist = |x: &[f64; 4], y: &[f64; 4]| x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        let mean_between = |u: &[[f64; 4]], v: &[[f64; 4]]| {
            let mut s = 0.0;
            for x in u {
                for y in v {
                    s += dist(x, y);
                }
            }
            s / (u.len() * v.len()) as f64
        };
        2.0 * mean_between(a, b) - mean_between(a, a) - mean_between(b, b)
    }

    #[test]
    fn backward_sample_energy_test_against_dense_draws() {
        let mut rng = seeded(47);
        let m = random_system(&mut rng, 4);
        let f = forward_filter(&m).unwrap();
        let (pm, pc, _) = dense_posterior(&m, 4, 4);
        let chol = pc.clone().cholesky().unwrap().l();
        let dense = |rng: &mut crate::rng::SvRng| {
            let z = DVector::from_iterator(4, (0..4).map(|_| crate::dist::std_normal(rng)));
            let x = &pm + &chol * z;
            [x[0], x[1], x[2], x[3]]
        };
        let n = 300;
        let ffbs: Vec<[f64; 4]> = (0..n)
            .map(|_| {
                let x = backward_sample(&m, &f, &mut rng).unwrap();
                [x[0], x[1], x[2], x[3]]
            })
            .collect();
        let brute: Vec<[f64; 4]> = (0..n).map(|_| dense(&mut rng)).collect();
        let observed = energy_statistic(&ffbs, &brute);
        // Permutation null distribution.
        let mut pooled = ffbs.clone();
        pooled.extend_from_slice(&brute);
        let perms = 199;
        let mut exceed = 0;
        for _ in 0..perms {
            for i in (1..pooled.len()).rev() {
                let j = rng.random_range(0..=i);
                pooled.swap(i, j);
            }
            if energy_statistic(&pooled[..n], &pooled[n..]) >= observed {
                exceed += 1;
            }
        }
        let p = (exceed + 1) as f64 / (perms + 1) as f64;
        assert!(p > 0.01, "energy test p = {p}");
    }

    #[test]
    fn mixture_fidelity() {
        let mix = MixtureTable::omori();
        assert!((mix.p.iter().sum::<f64>() - 1.0).abs() < 1e-5);
        // ½ E log χ²₁ = (ψ(½) + log 2)/2 and ¼ Var log χ²₁ = ψ'(½)/4 = π²/8.
        let digamma_half = -0.577_215_664_901_532_9 - 2.0 * 2f64.ln();
        let target_mean = 0.5 * (digamma_half + 2f64.ln());
        assert!((target_mean - -0.63518).abs() < 1e-5);
        assert!((mix.mean_star() - target_mean).abs() < 5e-3);
        let pi = core::f64::consts::PI;
        assert!((mix.var_star_total() - pi * pi / 8.0).abs() < 2e-2);
    }

    // Gauss-Hermite nodes and weights (probabilists' form) by Golub-Welsch.
    fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
        let mut j = DMatrix::zeros(n, n);
        for i in 1..n {
            let b = (i as f64).sqrt();
            j[(i, i - 1)] = b;
            j[(i - 1, i)] = b;
        }
        let eig = j.symmetric_eigen();
        let nodes: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        let weights: Vec<f64> = (0..n).map(|k| eig.eigenvectors[(0, k)].powi(2)).collect();
        (nodes, weights)
    }

    #[test]
    fn linearization_constants_match_quadrature_minimizer() {
        let (z, w) = gauss_hermite(60);
        let mix = MixtureTable::omori();
        for l in 0..MIXTURE_SIZE {
            let (m, v) = (mix.m[l], mix.v_sq[l].sqrt());
            // Least squares of e^(ε*) on [e^(m/2), e^(m/2)(2ε* − m)] with ε* = m/2 + (v/2) z.
            let (mut s11, mut s12, mut s22, mut t1, mut t2) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (zk, wk) in z.iter().zip(&w) {
                let e = 0.5 * m + 0.5 * v * zk;
                let x1 = (0.5 * m).exp();
                let x2 = (0.5 * m).exp() * (2.0 * e - m);
                let y = e.exp();
                s11 += wk * x1 * x1;
                s12 += wk * x1 * x2;
                s22 += wk * x2 * x2;
                t1 += wk * x1 * y;
                t2 += wk * x2 * y;
            }
            let det = s11 * s22 - s12 * s12;
            let a = (s22 * t1 - s12 * t2) / det;
            let b = (s11 * t2 - s12 * t1) / det;
            assert!((a - mix.a[l]).abs() < 1e-8 && (b - mix.b[l]).abs() < 1e-8, "row {l}: ({a}, {b})");
        }
        assert!((mix.a[0] - 1.01418).abs() < 1e-5 && (mix.b[0] - 0.50709).abs() < 1e-5);
        let (a, b) = linearization_constants(1e-12);
        assert!((a - 1.0).abs() < 1e-12 && (b - 0.5).abs() < 1e-12);
    }

    #[test]
    fn return_transform() {
        let mu = 0.001;
        let log_s = [0.0, mu + (-2f64).exp(), mu + (-2f64).exp() + mu - (-3f64).exp(), 2.0 * mu + (-2f64).exp() + mu - (-3f64).exp()];
        let t = transform_returns(&log_s, mu);
        assert!((t.y_star[0] + 2.0).abs() < 1e-12 && t.d[0] == 1.0);
        assert!((t.y_star[1] + 3.0).abs() < 1e-12 && t.d[1] == -1.0);
        assert!(t.degenerate[2] && (t.y_star[2] - RETURN_FLOOR.ln()).abs() < 1e-12);
        assert!(!t.degenerate[0] && !t.degenerate[1]);
    }

    fn params(rho: f64, tau_sq: f64) -> DiscreteParams {
        DiscreteParams::new(3e4, 1e-6, 0.95, -6.0, tau_sq, rho, 0.0).unwrap()
    }

    #[test]
    fn volatility_system_without_leverage() {
        let mix = MixtureTable::omori();
        let obs = transform_returns(&[0.0, 0.01, -0.005, 0.002], 1e-6);
        let p = params(0.0, 0.04);
        let mut ssm = LinearGaussianSsm::default();
        build_volatility_ssm(&obs, &[3, 5, 0], &p, &mix, &mut ssm).unwrap();
        for j in 0..3 {
            assert_eq!(ssm.f[j], p.theta());
            assert!((ssm.c[j] - p.alpha * (1.0 - p.theta())).abs() < 1e-15);
        }
        assert_eq!(ssm.len(), 4);
        assert!(ssm.y[3].is_none());
        let p = params(0.5, 0.04);
        build_volatility_ssm(&obs, &[3, 5, 0], &p, &mix, &mut ssm).unwrap();
        assert!((ssm.q[0] - 0.03).abs() < 1e-15);
        assert!(build_volatility_ssm(&obs, &[3, 5, 0], &DiscreteParams { rho: 1.0, ..p }, &mix, &mut ssm).is_err());
    }

    #[test]
    fn volatility_system_hand_assembled() {
        let mix = MixtureTable::omori();
        let obs = transform_returns(&[0.0, 0.01, -0.005, 0.002], 1e-6);
        let p = params(-0.4, 0.04);
        let mut ssm = LinearGaussianSsm::default();
        build_volatility_ssm(&obs, &[3, 3, 3], &p, &mix, &mut ssm).unwrap();
        // Row 4 of the table: m = 0.02266, v² = 0.40611.
        let (m, v2) = (0.02266f64, 0.40611f64);
        let a = (v2 / 8.0).exp();
        let b = 0.5 * a;
        let tau = 0.2;
        for j in 0..3 {
            let d = obs.d[j];
            let theta_j = p.theta() - d * p.rho * tau * b * v2.sqrt() * (0.5 * m).exp() / (v2.sqrt() / 2.0);
            let alpha_j = p.alpha * (1.0 - p.theta())
                + p.rho * tau * d * (0.5 * m).exp() * a
                + d * p.rho * tau * b * v2.sqrt() * (0.5 * m).exp() * (obs.y_star[j] - m / 2.0) / (v2.sqrt() / 2.0);
            assert!((ssm.f[j] - theta_j).abs() < 1e-14);
            assert!((ssm.c[j] - alpha_j).abs() < 1e-14);
            assert!((ssm.g[j] - m / 2.0).abs() < 1e-15 && (ssm.r[j] - v2 / 4.0).abs() < 1e-15);
        }
        assert!((ssm.p0 - 0.04 / (1.0 - 0.95 * 0.95)).abs() < 1e-12);
        assert_eq!(ssm.m0, -6.0);
    }
}
