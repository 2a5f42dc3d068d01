//! Desk-scale studies: interval coverage of the integrated variance across
//! sampling periods and noise treatments, and the posterior variance of `α̂`
//! as the sampling period shrinks or the observation window grows.
//!
//! Every fit is a pure function of `(design, seed, job)`, so the std crate
//! can run jobs in any order on a thread pool and reduce with [`aggregate`].

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::estimators::{
    default_bandwidth, posterior_iv, stationary_bootstrap_ci, BootstrapDesign, IntervalEstimate, IvEstimator,
    KernelWeights,
};
use crate::mcmc::{run_chain, summarize, McmcConfig, RhoMode, XiMode};
use crate::model::{one_minus_exp_over, ContinuousParams, InitialConditions};
use crate::priors::{elicit, ContinuousPriorMoments, NormalPrior};
use crate::rng::substream;
use crate::simulate::{
    apply_microstructure, simulate_path, subsample, true_integrated_variance, MicrostructureSpec, ObservedSeries,
    PathSample,
};

/// `1/Var(α̂) = 1/b² + (2θ̂/τ̂²)(1 + N tanh(θ̂Δ/2))` for exactly observed
/// log-volatility. `prior_var` may be infinite.
pub fn posterior_var_alpha_exact(theta_hat: f64, tau_sq_hat: f64, prior_var: f64, delta_ms: f64, n: usize) -> f64 {
    let precision = 1.0 / prior_var + 2.0 * theta_hat / tau_sq_hat * (1.0 + n as f64 * (0.5 * theta_hat * delta_ms).tanh());
    1.0 / precision
}

/// As [`posterior_var_alpha_exact`] with `tanh x ≈ x`; depends on the window
/// `T = NΔ` only.
pub fn posterior_var_alpha_linearized(theta_hat: f64, tau_sq_hat: f64, prior_var: f64, horizon_ms: f64) -> f64 {
    1.0 / (1.0 / prior_var + 2.0 * theta_hat / tau_sq_hat * (1.0 + 0.5 * theta_hat * horizon_ms))
}

/// Long-window limit `τ̂²/(θ̂² T)`.
pub fn posterior_var_alpha_long_window(theta_hat: f64, tau_sq_hat: f64, horizon_ms: f64) -> f64 {
    tau_sq_hat / theta_hat / (theta_hat * horizon_ms)
}

/// Normal posterior of `α̂` given `log σ̂` observed without error at
/// `0, Δ, ..., NΔ`, all other parameters known.
pub fn conjugate_alpha_posterior(
    log_sigma_hat: &[f64],
    theta_hat: f64,
    tau_sq_hat: f64,
    delta_ms: f64,
    prior: &NormalPrior,
) -> Result<NormalPrior> {
    if log_sigma_hat.is_empty() {
        return Err(Error::Usage("log-volatility path is empty".into()));
    }
    if !(theta_hat > 0.0 && tau_sq_hat > 0.0 && delta_ms > 0.0 && prior.var > 0.0) {
        return Err(Error::domain("theta_hat, tau_sq_hat, delta_ms, prior variance", "must be positive"));
    }
    let theta = (-theta_hat * delta_ms).exp();
    let one_minus = -(-theta_hat * delta_ms).exp_m1();
    let tau_sq_delta = tau_sq_hat * delta_ms * one_minus_exp_over(2.0 * theta_hat * delta_ms);
    let tau_sq_inf = tau_sq_hat / (2.0 * theta_hat);
    let n = (log_sigma_hat.len() - 1) as f64;
    let mut precision = 1.0 / tau_sq_inf + n * one_minus * one_minus / tau_sq_delta;
    let mut weighted = log_sigma_hat[0] / tau_sq_inf;
    for w in log_sigma_hat.windows(2) {
        weighted += one_minus * (w[1] - theta * w[0]) / tau_sq_delta;
    }
    if prior.var.is_finite() {
        precision += 1.0 / prior.var;
        weighted += prior.mean / prior.var;
    }
    Ok(NormalPrior { mean: weighted / precision, var: 1.0 / precision })
}

/// How the noise variance is treated in a coverage fit, or the kernel
/// baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Variant {
    XiZero,
    XiFixed(f64),
    XiEstimated,
    /// Bartlett kernel realized variance, `H = ⌈n^(1/3)⌉`, with a
    /// stationary-bootstrap interval.
    Kernel,
}

impl Variant {
    pub fn label(&self) -> String {
        match self {
            Variant::XiZero => "xi2=0".into(),
            Variant::XiFixed(v) => alloc::format!("xi2={v:e}"),
            Variant::XiEstimated => "xi2 estimated".into(),
            Variant::Kernel => "kernel".into(),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "zero" | "xi2=0" => Ok(Variant::XiZero),
            "estimated" | "xi2 estimated" => Ok(Variant::XiEstimated),
            "kernel" => Ok(Variant::Kernel),
            other => {
                let v = other.strip_prefix("fixed:").or_else(|| other.strip_prefix("xi2="));
                match v.and_then(|v| v.parse::<f64>().ok()) {
                    Some(x) if x > 0.0 && x.is_finite() => Ok(Variant::XiFixed(x)),
                    _ => Err(Error::Usage(alloc::format!(
                        "unknown variant '{other}' (expected zero, estimated, kernel or fixed:<xi2>)"
                    ))),
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageDesign {
    pub replicates: usize,
    pub deltas_ms: Vec<u64>,
    pub variants: Vec<Variant>,
    pub iterations: usize,
    pub burn_in: usize,
    pub truth: ContinuousParams,
    pub noise: MicrostructureSpec,
    pub prior: ContinuousPriorMoments,
    pub initial: InitialConditions,
    pub sim_step_ms: u64,
    pub horizon_ms: u64,
    /// Tail mass of the intervals.
    pub level: f64,
    pub bootstrap_replicates: usize,
    /// Largest tolerated share of failed fits per cell.
    pub max_failure_rate: f64,
}

impl Default for CoverageDesign {
    fn default() -> Self {
        Self {
            replicates: 50,
            deltas_ms: alloc::vec![300_000, 60_000, 30_000, 15_000],
            variants: alloc::vec![Variant::XiZero, Variant::XiFixed(2.5e-7), Variant::XiEstimated, Variant::Kernel],
            iterations: 8000,
            burn_in: 3000,
            truth: ContinuousParams::reference_day(),
            noise: MicrostructureSpec::BidAsk { spread: 0.1, tick: 0.01, ref_price: 100.0 },
            prior: ContinuousPriorMoments::reference_day(),
            initial: InitialConditions { eta: 100f64.ln(), kappa_sq: 1e-8 },
            sim_step_ms: 1000,
            horizon_ms: 23_400_000,
            level: 0.05,
            bootstrap_replicates: 1000,
            max_failure_rate: 0.1,
        }
    }
}

impl CoverageDesign {
    pub fn validate(&self) -> Result<()> {
        if self.deltas_ms.len() > 256 || self.variants.len() > 256 {
            return Err(Error::Usage("at most 256 sampling periods and variants".into()));
        }
        if self.burn_in > self.iterations {
            return Err(Error::Usage("burn-in exceeds iterations".into()));
        }
        for &d in &self.deltas_ms {
            if d == 0 || d % self.sim_step_ms != 0 {
                return Err(Error::Grid(alloc::format!(
                    "sampling period {d} ms is not a positive multiple of the simulation step {} ms",
                    self.sim_step_ms
                )));
            }
        }
        self.truth.validate()?;
        self.noise.validate()?;
        self.prior.validate()
    }

    pub fn jobs(&self) -> Vec<CoverageJob> {
        let mut out = Vec::with_capacity(self.replicates * self.deltas_ms.len() * self.variants.len());
        for replicate in 0..self.replicates {
            for delta in 0..self.deltas_ms.len() {
                for variant in 0..self.variants.len() {
                    out.push(CoverageJob { replicate, delta, variant });
                }
            }
        }
        out
    }
}

/// One fit: indices into the design's replicate, period and variant lists.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoverageJob {
    pub replicate: usize,
    pub delta: usize,
    pub variant: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellOutcome {
    pub interval: IntervalEstimate,
    pub true_iv: f64,
}

/// The contaminated path of replicate `r`. Replicates are shared by all
/// periods and variants.
pub fn simulate_replicate(design: &CoverageDesign, seed: u64, replicate: usize) -> Result<PathSample> {
    let path = simulate_path(
        &design.truth,
        design.sim_step_ms,
        design.horizon_ms,
        &design.initial,
        substream(replicate as u64, 0, 0) ^ seed.rotate_left(17),
    )?;
    apply_microstructure(&path, &design.noise, substream(replicate as u64, 0, 1) ^ seed.rotate_left(17))
}

/// Interval for one variant on one series.
pub fn fit_interval(
    series: &ObservedSeries,
    prior: &ContinuousPriorMoments,
    variant: Variant,
    iterations: usize,
    burn_in: usize,
    level: f64,
    bootstrap_replicates: usize,
    seed: u64,
) -> Result<IntervalEstimate> {
    let xi_mode = match variant {
        Variant::XiZero => XiMode::FixedZero,
        Variant::XiFixed(v) => XiMode::Fixed(v),
        Variant::XiEstimated => XiMode::Estimated,
        Variant::Kernel => {
            let n = series.n();
            let est = IvEstimator::Kernel { bandwidth: default_bandwidth(n), weights: KernelWeights::Bartlett };
            let design = BootstrapDesign { replicates: bootstrap_replicates, level, ..BootstrapDesign::default_for(n, seed) };
            return Ok(stationary_bootstrap_ci(series, est, &design)?.interval);
        }
    };
    let spec = elicit(prior, series.delta_obs_ms as f64)?;
    let cfg = McmcConfig {
        iterations,
        burn_in,
        seed,
        xi_mode,
        rho_mode: RhoMode::Fixed(0.0),
        ..McmcConfig::default()
    };
    let chain = run_chain(series, &spec, &cfg)?;
    Ok(posterior_iv(&chain, level)?.1)
}

pub fn run_coverage_job(design: &CoverageDesign, seed: u64, job: CoverageJob) -> Result<CellOutcome> {
    let path = simulate_replicate(design, seed, job.replicate)?;
    let delta = design.deltas_ms[job.delta];
    let series = subsample(&path, delta)?;
    let true_iv = true_integrated_variance(&path, delta)?;
    let fit_seed = seed ^ substream(job.replicate as u64, job.delta as u8 + 1, job.variant as u8 + 1).rotate_left(29);
    let interval = fit_interval(
        &series,
        &design.prior,
        design.variants[job.variant],
        design.iterations,
        design.burn_in,
        design.level,
        design.bootstrap_replicates,
        fit_seed,
    )?;
    Ok(CellOutcome { interval, true_iv })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageCell {
    pub delta_ms: u64,
    pub variant: Variant,
    /// Successful fits.
    pub fits: usize,
    pub failures: usize,
    pub covered: usize,
    pub mean_width: f64,
    /// Mean wall-clock seconds per fit; NaN when not measured.
    pub seconds_per_fit: f64,
}

impl CoverageCell {
    pub fn coverage_pct(&self) -> f64 {
        if self.fits == 0 {
            f64::NAN
        } else {
            100.0 * self.covered as f64 / self.fits as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageReport {
    pub replicates: usize,
    pub level: f64,
    /// Period-major: all variants for the first period, then the next.
    pub cells: Vec<CoverageCell>,
}

impl CoverageReport {
    pub fn cell(&self, delta_ms: u64, variant: Variant) -> Option<&CoverageCell> {
        self.cells.iter().find(|c| c.delta_ms == delta_ms && c.variant == variant)
    }

    /// Plain-text table: one row per variant, one column per period.
    pub fn render_table(&self) -> String {
        let mut deltas: Vec<u64> = Vec::new();
        let mut variants: Vec<Variant> = Vec::new();
        for c in &self.cells {
            if !deltas.contains(&c.delta_ms) {
                deltas.push(c.delta_ms);
            }
            if !variants.contains(&c.variant) {
                variants.push(c.variant);
            }
        }
        let mut s = String::new();
        let _ = writeln!(
            s,
            "Coverage (%) of the true integrated variance by {:.0}% intervals, {} replicates",
            100.0 * (1.0 - self.level),
            self.replicates
        );
        let _ = write!(s, "{:<18}", "variant");
        for d in &deltas {
            let _ = write!(s, "{:>10}", format_period(*d));
        }
        s.push('\n');
        for v in &variants {
            let _ = write!(s, "{:<18}", v.label());
            for d in &deltas {
                match self.cell(*d, *v) {
                    Some(c) if c.fits > 0 => {
                        let _ = write!(s, "{:>10.0}", c.coverage_pct());
                    }
                    _ => {
                        let _ = write!(s, "{:>10}", "-");
                    }
                }
            }
            s.push('\n');
        }
        s
    }
}

pub fn format_period(ms: u64) -> String {
    if ms % 60_000 == 0 {
        alloc::format!("{} min", ms / 60_000)
    } else if ms % 1000 == 0 {
        alloc::format!("{} sec", ms / 1000)
    } else {
        alloc::format!("{ms} ms")
    }
}

/// Reduces job results (with optional wall-clock seconds) to a report.
/// Fails when any cell loses more than `max_failure_rate` of its fits.
pub fn aggregate(design: &CoverageDesign, results: &[(CoverageJob, Result<CellOutcome>, f64)]) -> Result<CoverageReport> {
    let mut cells = Vec::new();
    if design.replicates > 0 {
        for (di, &delta_ms) in design.deltas_ms.iter().enumerate() {
            for (vi, &variant) in design.variants.iter().enumerate() {
                let mut cell = CoverageCell {
                    delta_ms,
                    variant,
                    fits: 0,
                    failures: 0,
                    covered: 0,
                    mean_width: 0.0,
                    seconds_per_fit: 0.0,
                };
                for (_, outcome, secs) in results.iter().filter(|(j, _, _)| j.delta == di && j.variant == vi) {
                    match outcome {
                        Ok(o) => {
                            cell.fits += 1;
                            cell.covered += o.interval.covers(o.true_iv) as usize;
                            cell.mean_width += o.interval.width();
                            cell.seconds_per_fit += secs;
                        }
                        Err(_) => cell.failures += 1,
                    }
                }
                if cell.fits > 0 {
                    cell.mean_width /= cell.fits as f64;
                    cell.seconds_per_fit /= cell.fits as f64;
                }
                let attempted = cell.fits + cell.failures;
                if attempted > 0 && cell.failures as f64 > design.max_failure_rate * attempted as f64 {
                    return Err(Error::Usage(alloc::format!(
                        "{} of {attempted} fits failed for {} at {}; coverage over the survivors would be biased",
                        cell.failures,
                        variant.label(),
                        format_period(delta_ms)
                    )));
                }
                cells.push(cell);
            }
        }
    }
    Ok(CoverageReport { replicates: design.replicates, level: design.level, cells })
}

/// Serial runner. Wall-clock time is not measured here (no clock in
/// `no_std`); the std crate's parallel runner fills it in.
pub fn run_coverage_study(design: &CoverageDesign, seed: u64) -> Result<CoverageReport> {
    design.validate()?;
    let results: Vec<_> = design
        .jobs()
        .into_iter()
        .map(|job| (job, run_coverage_job(design, seed, job), f64::NAN))
        .collect();
    aggregate(design, &results)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlphaScenario {
    /// Fixed window, shrinking sampling period.
    ShrinkDelta,
    /// Fixed sampling period, growing window.
    GrowWindow,
}

impl AlphaScenario {
    pub fn tag(&self) -> &'static str {
        match self {
            AlphaScenario::ShrinkDelta => "shrink-delta",
            AlphaScenario::GrowWindow => "grow-T",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaStudyDesign {
    pub truth: ContinuousParams,
    pub noise: MicrostructureSpec,
    pub prior: ContinuousPriorMoments,
    pub initial: InitialConditions,
    pub sim_step_ms: u64,
    pub horizon_ms: u64,
    pub shrink_deltas_ms: Vec<u64>,
    pub grow_delta_ms: u64,
    /// The window grows through `k/windows` of the horizon, `k = 1..=windows`.
    pub windows: usize,
    /// Skip the sampler and report the closed-form and conjugate values only.
    pub conjugate_only: bool,
    pub iterations: usize,
    pub burn_in: usize,
}

impl Default for AlphaStudyDesign {
    fn default() -> Self {
        Self {
            truth: ContinuousParams { theta_hat: 1.0 / 900_000.0, xi_sq: 0.0, ..ContinuousParams::reference_day() },
            noise: MicrostructureSpec::None,
            prior: ContinuousPriorMoments::reference_day(),
            initial: InitialConditions { eta: 100f64.ln(), kappa_sq: 1e-8 },
            sim_step_ms: 1000,
            horizon_ms: 23_400_000,
            shrink_deltas_ms: alloc::vec![60_000, 30_000, 15_000, 5000],
            grow_delta_ms: 60_000,
            windows: 6,
            conjugate_only: false,
            iterations: 40_000,
            burn_in: 5000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaRow {
    pub scenario: AlphaScenario,
    pub delta_ms: u64,
    pub horizon_ms: u64,
    pub n: usize,
    /// Closed-form variance with the true `θ̂, τ̂²`.
    pub var_closed_form: f64,
    /// Conjugate posterior variance given the true log-volatility path.
    pub var_conjugate: f64,
    /// Posterior variance of `α̂` from the full sampler.
    pub var_mcmc: Option<f64>,
    pub mean_mcmc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaVarianceReport {
    pub rows: Vec<AlphaRow>,
}

impl AlphaVarianceReport {
    pub fn scenario(&self, s: AlphaScenario) -> impl Iterator<Item = &AlphaRow> {
        self.rows.iter().filter(move |r| r.scenario == s)
    }

    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<13}{:>9}{:>10}{:>7}{:>14}{:>14}{:>14}",
            "scenario", "delta", "T (min)", "N", "closed form", "conjugate", "mcmc"
        );
        for r in &self.rows {
            let mcmc = r.var_mcmc.map(|v| alloc::format!("{v:.4e}")).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                s,
                "{:<13}{:>9}{:>10.0}{:>7}{:>14.4e}{:>14.4e}{:>14}",
                r.scenario.tag(),
                format_period(r.delta_ms),
                r.horizon_ms as f64 / 60_000.0,
                r.n,
                r.var_closed_form,
                r.var_conjugate,
                mcmc
            );
        }
        s
    }
}

/// One row of the study; `window` counts `1/windows` fractions of the horizon.
pub fn alpha_study_job(
    design: &AlphaStudyDesign,
    path: &PathSample,
    scenario: AlphaScenario,
    delta_ms: u64,
    horizon_ms: u64,
    seed: u64,
) -> Result<AlphaRow> {
    let full = subsample(path, delta_ms)?;
    let n = (horizon_ms / delta_ms) as usize;
    let keep = n + 1;
    if keep > full.y.len() {
        return Err(Error::Grid("window exceeds the simulated horizon".into()));
    }
    let truth = full.truth.as_ref().ok_or_else(|| Error::Usage("series carries no latent truth".into()))?;
    let t = &design.truth;
    let prior = NormalPrior { mean: design.prior.alpha_hat.mean, var: design.prior.alpha_hat.var() };
    let conj = conjugate_alpha_posterior(&truth.log_sigma_hat[..keep], t.theta_hat, t.tau_sq_hat, delta_ms as f64, &prior)?;
    let var_closed_form = posterior_var_alpha_exact(t.theta_hat, t.tau_sq_hat, prior.var, delta_ms as f64, n);
    let (var_mcmc, mean_mcmc) = if design.conjugate_only {
        (None, None)
    } else {
        let series = ObservedSeries::from_grid(delta_ms, full.y[..keep].to_vec())?;
        let spec = elicit(&design.prior, delta_ms as f64)?;
        let xi_mode = if matches!(design.noise, MicrostructureSpec::None) { XiMode::FixedZero } else { XiMode::Estimated };
        let cfg = McmcConfig {
            iterations: design.iterations,
            burn_in: design.burn_in,
            seed,
            xi_mode,
            rho_mode: RhoMode::Fixed(0.0),
            ..McmcConfig::default()
        };
        let chain = run_chain(&series, &spec, &cfg)?;
        let alpha: Vec<f64> = chain.draws.iter().map(|d| d.alpha_hat).collect();
        if alpha.is_empty() {
            (None, None)
        } else {
            let s = summarize(&alpha);
            (Some(s.sd * s.sd), Some(s.mean))
        }
    };
    Ok(AlphaRow { scenario, delta_ms, horizon_ms, n, var_closed_form, var_conjugate: conj.var, var_mcmc, mean_mcmc })
}

/// `(scenario, Δ, T)` for every row of the study.
pub fn alpha_study_grid(design: &AlphaStudyDesign) -> Vec<(AlphaScenario, u64, u64)> {
    let mut out = Vec::new();
    for &d in &design.shrink_deltas_ms {
        out.push((AlphaScenario::ShrinkDelta, d, design.horizon_ms / d * d));
    }
    let d = design.grow_delta_ms;
    let steps = design.horizon_ms / d;
    for k in 1..=design.windows as u64 {
        out.push((AlphaScenario::GrowWindow, d, steps * k / design.windows as u64 * d));
    }
    out
}

pub fn simulate_alpha_dataset(design: &AlphaStudyDesign, seed: u64) -> Result<PathSample> {
    let path = simulate_path(&design.truth, design.sim_step_ms, design.horizon_ms, &design.initial, seed)?;
    apply_microstructure(&path, &design.noise, seed ^ 0x5eed)
}

pub fn run_alpha_variance_study(design: &AlphaStudyDesign, seed: u64) -> Result<AlphaVarianceReport> {
    design.truth.validate()?;
    let path = simulate_alpha_dataset(design, seed)?;
    let rows = alpha_study_grid(design)
        .into_iter()
        .enumerate()
        .map(|(i, (s, d, t))| alpha_study_job(design, &path, s, d, t, seed ^ substream(i as u64, 7, 7)))
        .collect::<Result<Vec<_>>>()?;
    Ok(AlphaVarianceReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::normal;
    use crate::rng::seeded;
    use proptest::prelude::*;
    use std::vec;
    use std::vec::Vec;

    #[test]
    fn closed_form_examples() {
        assert!((posterior_var_alpha_exact(1.0, 2.0, f64::INFINITY, 1.0, 0) - 1.0).abs() < 1e-15);
        let v = posterior_var_alpha_exact(1.0, 2.0, f64::INFINITY, 1.0, 10);
        assert!((1.0 / v - (1.0 + 10.0 * 0.5f64.tanh())).abs() < 1e-12);
        assert!((1.0 / v - 5.621171573).abs() < 1e-8);
        assert!((v - 0.177899).abs() < 1e-6);
    }

    #[test]
    fn linearized_form_within_one_percent_at_small_theta_delta() {
        let (theta, tau_sq, delta) = (1e-6, 1e-7, 1e5);
        for n in [1, 10, 100, 1000] {
            let exact = posterior_var_alpha_exact(theta, tau_sq, 50.0, delta, n);
            let lin = posterior_var_alpha_linearized(theta, tau_sq, 50.0, n as f64 * delta);
            assert!((lin / exact - 1.0).abs() < 0.01, "n={n}");
        }
    }

    #[test]
    fn long_window_form_within_five_percent() {
        let (theta, tau_sq) = (1.0 / 9e5, 1.3e-7);
        let b_sq = 10.0 * tau_sq / (2.0 * theta);
        let delta = 6e4;
        let n = 1500; // θ̂T = 100
        let exact = posterior_var_alpha_exact(theta, tau_sq, b_sq, delta, n);
        let long = posterior_var_alpha_long_window(theta, tau_sq, n as f64 * delta);
        assert!((long / exact - 1.0).abs() < 0.05, "{}", long / exact);
    }

    #[test]
    fn conjugate_mean_tracks_a_flat_path() {
        let path = vec![-13.0; 5001];
        let prior = NormalPrior { mean: 0.0, var: 100.0 };
        let post = conjugate_alpha_posterior(&path, 1e-6, 1e-7, 6e4, &prior).unwrap();
        assert!((post.mean + 13.0).abs() < 1e-3);
        assert!(conjugate_alpha_posterior(&[], 1e-6, 1e-7, 6e4, &prior).is_err());
    }

    proptest! {
        #[test]
        fn conjugate_variance_matches_closed_form(
            n in 0usize..400,
            log_theta in -9.0f64..-3.0,
            log_delta in 2.0f64..6.0,
            tau_sq in 1e-8f64..1e-5,
            prior_var in prop_oneof![Just(f64::INFINITY), 0.01f64..100.0],
            seed in 0u64..1000,
        ) {
            let theta = 10f64.powf(log_theta);
            let delta = 10f64.powf(log_delta);
            let mut rng = seeded(seed);
            let path: Vec<f64> = (0..=n).map(|_| normal(&mut rng, -13.0, 1.0)).collect();
            let post = conjugate_alpha_posterior(&path, theta, tau_sq, delta, &NormalPrior { mean: -13.0, var: prior_var }).unwrap();
            let exact = posterior_var_alpha_exact(theta, tau_sq, prior_var, delta, n);
            prop_assert!((post.var / exact - 1.0).abs() < 1e-12, "{} vs {}", post.var, exact);
        }
    }

    #[test]
    fn conjugate_posterior_is_calibrated() {
        // α̂ drawn from the prior, path from the OU model: the posterior
        // z-score of the truth is standard normal.
        let (theta, tau_sq, delta, n) = (1.0 / 9e5, 1.3e-7, 6e4, 50);
        let prior = NormalPrior { mean: -13.0, var: 0.04 };
        let p = (-theta * delta).exp();
        let sd_inf = (tau_sq / (2.0 * theta)).sqrt();
        let sd_d = (tau_sq * (1.0 - p * p) / (2.0 * theta)).sqrt();
        let mut rng = seeded(11);
        let reps = 4000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..reps {
            let a = normal(&mut rng, prior.mean, prior.var.sqrt());
            let mut x = normal(&mut rng, a, sd_inf);
            let mut path = vec![x];
            for _ in 0..n {
                x = a + p * (x - a) + normal(&mut rng, 0.0, sd_d);
                path.push(x);
            }
            let post = conjugate_alpha_posterior(&path, theta, tau_sq, delta, &prior).unwrap();
            let z = (a - post.mean) / post.var.sqrt();
            s1 += z;
            s2 += z * z;
        }
        let m = s1 / reps as f64;
        let v = s2 / reps as f64 - m * m;
        assert!(m.abs() < 0.07 && (v - 1.0).abs() < 0.07, "{m} {v}");
    }

    #[test]
    fn variant_labels_round_trip() {
        for v in [Variant::XiZero, Variant::XiFixed(2.5e-7), Variant::XiEstimated, Variant::Kernel] {
            assert_eq!(Variant::parse(&v.label()).unwrap(), v);
        }
        assert_eq!(Variant::parse("fixed:1e-7").unwrap(), Variant::XiFixed(1e-7));
        assert!(Variant::parse("bogus").unwrap_err().is_usage());
        assert_eq!(format_period(300_000), "5 min");
        assert_eq!(format_period(15_000), "15 sec");
    }

    #[test]
    fn zero_replicate_design_gives_empty_report() {
        let design = CoverageDesign { replicates: 0, ..CoverageDesign::default() };
        assert!(design.jobs().is_empty());
        let report = run_coverage_study(&design, 1).unwrap();
        assert!(report.cells.is_empty());
    }

    fn small_design() -> CoverageDesign {
        CoverageDesign {
            replicates: 2,
            deltas_ms: vec![300_000],
            variants: vec![Variant::XiEstimated, Variant::Kernel],
            iterations: 300,
            burn_in: 100,
            bootstrap_replicates: 200,
            ..CoverageDesign::default()
        }
    }

    #[test]
    fn coverage_study_smoke_and_determinism() {
        let design = small_design();
        let a = run_coverage_study(&design, 5).unwrap();
        assert_eq!(a.cells.len(), 2);
        for c in &a.cells {
            assert_eq!(c.fits + c.failures, 2);
            let pct = c.coverage_pct();
            assert!((0.0..=100.0).contains(&pct));
            assert!(c.mean_width > 0.0);
        }
        let b = run_coverage_study(&design, 5).unwrap();
        assert_eq!(a.cells.len(), b.cells.len());
        for (x, y) in a.cells.iter().zip(&b.cells) {
            assert_eq!((x.covered, x.mean_width.to_bits()), (y.covered, y.mean_width.to_bits()));
        }
        let table = a.render_table();
        assert!(table.contains("5 min") && table.contains("kernel"));
    }

    #[test]
    fn failure_threshold_is_enforced() {
        let design = small_design();
        let job = |r| CoverageJob { replicate: r, delta: 0, variant: 0 };
        let ok = CellOutcome {
            interval: IntervalEstimate { point: 1.0, lower: 0.5, upper: 1.5, level: 0.05, method: crate::estimators::IntervalMethod::Posterior },
            true_iv: 1.0,
        };
        let results = vec![(job(0), Ok(ok), 1.0), (job(1), Err(Error::Usage("boom".into())), 1.0)];
        assert!(aggregate(&design, &results).is_err());
        let results = vec![(job(0), Ok(ok), 1.0), (job(1), Ok(ok), 3.0)];
        let r = aggregate(&design, &results).unwrap();
        let c = r.cell(300_000, Variant::XiEstimated).unwrap();
        assert_eq!((c.fits, c.covered, c.seconds_per_fit), (2, 2, 2.0));
    }

    #[test]
    fn alpha_study_conjugate_path() {
        let design = AlphaStudyDesign { conjugate_only: true, ..AlphaStudyDesign::default() };
        let report = run_alpha_variance_study(&design, 3).unwrap();
        let shrink: Vec<f64> = report.scenario(AlphaScenario::ShrinkDelta).map(|r| r.var_conjugate).collect();
        assert_eq!(shrink.len(), 4);
        let (lo, hi) = shrink.iter().fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(*v), b.max(*v)));
        assert!(hi / lo < 1.05, "{shrink:?}");
        let grow: Vec<&AlphaRow> = report.scenario(AlphaScenario::GrowWindow).collect();
        assert_eq!(grow.len(), 6);
        for r in &report.rows {
            assert_eq!(r.n as u64 * r.delta_ms, r.horizon_ms);
            assert!((r.var_conjugate / r.var_closed_form - 1.0).abs() < 1e-12);
        }
        let ratio = grow[5].var_conjugate / grow[2].var_conjugate;
        assert!((0.45..=0.65).contains(&ratio), "{ratio}");
    }
}
