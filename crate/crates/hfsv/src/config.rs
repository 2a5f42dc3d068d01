//! `key = value` run configuration.
//!
//! One pair per line, `#` starts a comment. Every key must be consumed by
//! the subcommand reading the file; leftovers are reported as unknown.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use hfsv_core::experiments::{AlphaStudyDesign, CoverageDesign, Variant};
use hfsv_core::mcmc::{McmcConfig, RhoMode, XiMode};
use hfsv_core::priors::{ContinuousPriorMoments, Moments};
use hfsv_core::simulate::MicrostructureSpec;
use hfsv_core::{ContinuousParams, InitialConditions};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{origin}:{line}: expected `key = value`")]
    Syntax { origin: String, line: usize },
    #[error("{origin}:{line}: key `{key}` given twice")]
    Duplicate { origin: String, line: usize, key: String },
    #[error("{origin}:{line}: bad value for `{key}`: {reason}")]
    Value { origin: String, line: usize, key: String, reason: String },
    #[error("{origin}: missing required key `{key}`")]
    Missing { origin: String, key: String },
    #[error("{origin}: unknown keys: {keys}")]
    Unknown { origin: String, keys: String },
}

#[derive(Debug, Clone, Default)]
pub struct KvConfig {
    origin: String,
    entries: BTreeMap<String, (String, usize)>,
}

impl KvConfig {
    pub fn parse(origin: &str, text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax { origin: origin.into(), line: i + 1 })?;
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(ConfigError::Syntax { origin: origin.into(), line: i + 1 });
            }
            if entries.insert(key.clone(), (v.trim().to_string(), i + 1)).is_some() {
                return Err(ConfigError::Duplicate { origin: origin.into(), line: i + 1, key });
            }
        }
        Ok(Self { origin: origin.into(), entries })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::parse(&path.display().to_string(), &text)
    }

    pub fn empty(origin: &str) -> Self {
        Self { origin: origin.into(), entries: BTreeMap::new() }
    }

    /// Removes and parses `key` if present.
    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((v, line)) => v.parse::<T>().map(Some).map_err(|e| ConfigError::Value {
                origin: self.origin.clone(),
                line,
                key: key.into(),
                reason: e.to_string(),
            }),
        }
    }

    pub fn take_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.take(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&mut self, key: &str) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        self.take(key)?.ok_or_else(|| ConfigError::Missing { origin: self.origin.clone(), key: key.into() })
    }

    /// Comma-separated list.
    pub fn take_list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        let Some((v, line)) = self.entries.remove(key) else { return Ok(None) };
        v.split(',')
            .map(|s| {
                s.trim().parse::<T>().map_err(|e| ConfigError::Value {
                    origin: self.origin.clone(),
                    line,
                    key: key.into(),
                    reason: e.to_string(),
                })
            })
            .collect::<Result<Vec<T>, _>>()
            .map(Some)
    }

    fn bad(&self, key: &str, reason: impl Into<String>) -> ConfigError {
        ConfigError::Value { origin: self.origin.clone(), line: 0, key: key.into(), reason: reason.into() }
    }

    /// Fails if any key was not consumed.
    pub fn finish(self) -> Result<(), ConfigError> {
        if self.entries.is_empty() {
            return Ok(());
        }
        let keys = self
            .entries
            .iter()
            .map(|(k, (_, line))| format!("{k} (line {line})"))
            .collect::<Vec<_>>()
            .join(", ");
        Err(ConfigError::Unknown { origin: self.origin, keys })
    }
}

/// Simulation truth; unspecified keys take the reference-day values.
pub fn take_truth(cfg: &mut KvConfig) -> Result<ContinuousParams, ConfigError> {
    let d = ContinuousParams::reference_day();
    Ok(ContinuousParams {
        mu_hat: cfg.take_or("mu_hat", d.mu_hat)?,
        theta_hat: cfg.take_or("theta_hat", d.theta_hat)?,
        alpha_hat: cfg.take_or("alpha_hat", d.alpha_hat)?,
        tau_sq_hat: cfg.take_or("tau_sq_hat", d.tau_sq_hat)?,
        rho: cfg.take_or("rho", d.rho)?,
        xi_sq: cfg.take_or("xi_sq", d.xi_sq)?,
    })
}

/// `noise = none | gaussian | bidask` with `noise_xi_sq` or
/// `spread`, `tick`, `ref_price`. Default: $0.10 bid-ask on $100.
pub fn take_noise(cfg: &mut KvConfig) -> Result<MicrostructureSpec, ConfigError> {
    let kind: String = cfg.take_or("noise", "bidask".to_string())?;
    let spec = match kind.as_str() {
        "none" => MicrostructureSpec::None,
        "gaussian" => MicrostructureSpec::Gaussian { xi_sq: cfg.require("noise_xi_sq")? },
        "bidask" => MicrostructureSpec::BidAsk {
            spread: cfg.take_or("spread", 0.1)?,
            tick: cfg.take_or("tick", 0.01)?,
            ref_price: cfg.take_or("ref_price", 100.0)?,
        },
        other => return Err(cfg.bad("noise", format!("`{other}` is not one of none, gaussian, bidask"))),
    };
    Ok(spec)
}

pub fn take_initial(cfg: &mut KvConfig) -> Result<InitialConditions, ConfigError> {
    let price: f64 = cfg.take_or("initial_price", 100.0)?;
    let kappa_sq: f64 = cfg.take_or("initial_log_price_var", 1e-8)?;
    if !(price > 0.0) {
        return Err(cfg.bad("initial_price", "must be positive"));
    }
    Ok(InitialConditions { eta: price.ln(), kappa_sq })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub truth: ContinuousParams,
    pub noise: MicrostructureSpec,
    pub initial: InitialConditions,
    pub step_ms: u64,
    pub horizon_ms: u64,
}

impl SimulationConfig {
    pub fn from_kv(mut cfg: KvConfig) -> Result<Self, ConfigError> {
        let out = Self {
            truth: take_truth(&mut cfg)?,
            noise: take_noise(&mut cfg)?,
            initial: take_initial(&mut cfg)?,
            step_ms: cfg.take_or("step_ms", 1000)?,
            horizon_ms: cfg.take_or("horizon_ms", 23_400_000)?,
        };
        cfg.finish()?;
        Ok(out)
    }
}

/// Prior moments of the continuous-time parameters. All keys required:
/// `<param>_mean`, `<param>_sd` for mu_hat, theta_hat, alpha_hat,
/// tau_sq_hat, xi_sq, plus `rho_precision`.
pub fn take_prior(cfg: &mut KvConfig) -> Result<ContinuousPriorMoments, ConfigError> {
    let mut m = |name: &str| -> Result<Moments, ConfigError> {
        let mean = cfg.require(&format!("{name}_mean"))?;
        let sd = cfg.require(&format!("{name}_sd"))?;
        Ok(Moments { mean, sd })
    };
    let mu_hat = m("mu_hat")?;
    let theta_hat = m("theta_hat")?;
    let alpha_hat = m("alpha_hat")?;
    let tau_sq_hat = m("tau_sq_hat")?;
    let xi_sq = m("xi_sq")?;
    let rho_precision = cfg.require("rho_precision")?;
    Ok(ContinuousPriorMoments { mu_hat, theta_hat, alpha_hat, tau_sq_hat, xi_sq, rho_precision })
}

/// Same as [`take_prior`] but every key falls back to the reference prior.
pub fn take_prior_or_reference(cfg: &mut KvConfig) -> Result<ContinuousPriorMoments, ConfigError> {
    let d = ContinuousPriorMoments::reference_day();
    let mut m = |name: &str, def: Moments| -> Result<Moments, ConfigError> {
        Ok(Moments {
            mean: cfg.take_or(&format!("{name}_mean"), def.mean)?,
            sd: cfg.take_or(&format!("{name}_sd"), def.sd)?,
        })
    };
    let mu_hat = m("mu_hat", d.mu_hat)?;
    let theta_hat = m("theta_hat", d.theta_hat)?;
    let alpha_hat = m("alpha_hat", d.alpha_hat)?;
    let tau_sq_hat = m("tau_sq_hat", d.tau_sq_hat)?;
    let xi_sq = m("xi_sq", d.xi_sq)?;
    let rho_precision = cfg.take_or("rho_precision", d.rho_precision)?;
    Ok(ContinuousPriorMoments { mu_hat, theta_hat, alpha_hat, tau_sq_hat, xi_sq, rho_precision })
}

pub fn parse_xi_mode(s: &str) -> Result<XiMode, String> {
    match s {
        "estimated" => Ok(XiMode::Estimated),
        "zero" => Ok(XiMode::FixedZero),
        other => match other.strip_prefix("fixed:").map(str::parse::<f64>) {
            Some(Ok(v)) if v > 0.0 => Ok(XiMode::Fixed(v)),
            _ => Err(format!("`{other}` is not one of estimated, zero, fixed:<value>")),
        },
    }
}

pub fn parse_rho_mode(s: &str) -> Result<RhoMode, String> {
    match s {
        "estimated" => Ok(RhoMode::Estimated),
        other => match other.strip_prefix("fixed:").unwrap_or(other).parse::<f64>() {
            Ok(v) if v.abs() < 1.0 => Ok(RhoMode::Fixed(v)),
            _ => Err(format!("`{other}` is not `estimated` or a value in (-1, 1)")),
        },
    }
}

/// Sampler settings; `seed` always comes from the command line.
pub fn take_mcmc(cfg: &mut KvConfig, seed: u64) -> Result<McmcConfig, ConfigError> {
    let d = McmcConfig::default();
    let xi: String = cfg.take_or("xi_mode", "estimated".into())?;
    let rho: String = cfg.take_or("rho_mode", "0".into())?;
    let xi_mode = parse_xi_mode(&xi).map_err(|e| cfg.bad("xi_mode", e))?;
    let rho_mode = parse_rho_mode(&rho).map_err(|e| cfg.bad("rho_mode", e))?;
    Ok(McmcConfig {
        iterations: cfg.take_or("iterations", d.iterations)?,
        burn_in: cfg.take_or("burn_in", d.burn_in)?,
        thin: cfg.take_or("thin", d.thin)?,
        seed,
        xi_mode,
        rho_mode,
        rho_step: cfg.take_or("rho_step", d.rho_step)?,
        adapt_rho: cfg.take_or("adapt_rho", d.adapt_rho)?,
        mixture_correction: cfg.take_or("mixture_correction", d.mixture_correction)?,
        path_every: cfg.take_or("path_every", 10)?,
        initial: None,
    })
}

/// Coverage study; prior keys may be given individually and otherwise take
/// the reference values.
pub fn coverage_design(mut cfg: KvConfig) -> Result<CoverageDesign, ConfigError> {
    let d = CoverageDesign::default();
    let variants = match cfg.take_list::<String>("variants")? {
        None => d.variants.clone(),
        Some(v) => v
            .iter()
            .map(|s| Variant::parse(s).map_err(|e| cfg.bad("variants", e.to_string())))
            .collect::<Result<Vec<_>, _>>()?,
    };
    let out = CoverageDesign {
        replicates: cfg.take_or("replicates", d.replicates)?,
        deltas_ms: cfg.take_list("deltas_ms")?.unwrap_or(d.deltas_ms),
        variants,
        iterations: cfg.take_or("iterations", d.iterations)?,
        burn_in: cfg.take_or("burn_in", d.burn_in)?,
        truth: take_truth(&mut cfg)?,
        noise: take_noise(&mut cfg)?,
        prior: take_prior_or_reference(&mut cfg)?,
        initial: take_initial(&mut cfg)?,
        sim_step_ms: cfg.take_or("step_ms", d.sim_step_ms)?,
        horizon_ms: cfg.take_or("horizon_ms", d.horizon_ms)?,
        level: cfg.take_or("level", d.level)?,
        bootstrap_replicates: cfg.take_or("bootstrap_replicates", d.bootstrap_replicates)?,
        max_failure_rate: cfg.take_or("max_failure_rate", d.max_failure_rate)?,
    };
    cfg.finish()?;
    Ok(out)
}

pub fn alpha_design(mut cfg: KvConfig) -> Result<AlphaStudyDesign, ConfigError> {
    let d = AlphaStudyDesign::default();
    let mut truth = d.truth;
    truth.mu_hat = cfg.take_or("mu_hat", truth.mu_hat)?;
    truth.theta_hat = cfg.take_or("theta_hat", truth.theta_hat)?;
    truth.alpha_hat = cfg.take_or("alpha_hat", truth.alpha_hat)?;
    truth.tau_sq_hat = cfg.take_or("tau_sq_hat", truth.tau_sq_hat)?;
    truth.rho = cfg.take_or("rho", truth.rho)?;
    let noise: String = cfg.take_or("noise", "none".to_string())?;
    let noise = match noise.as_str() {
        "none" => MicrostructureSpec::None,
        "gaussian" => MicrostructureSpec::Gaussian { xi_sq: cfg.require("noise_xi_sq")? },
        other => return Err(cfg.bad("noise", format!("`{other}` is not one of none, gaussian"))),
    };
    if let MicrostructureSpec::Gaussian { xi_sq } = noise {
        truth.xi_sq = xi_sq;
    }
    let out = AlphaStudyDesign {
        truth,
        noise,
        prior: take_prior_or_reference(&mut cfg)?,
        initial: take_initial(&mut cfg)?,
        sim_step_ms: cfg.take_or("step_ms", d.sim_step_ms)?,
        horizon_ms: cfg.take_or("horizon_ms", d.horizon_ms)?,
        shrink_deltas_ms: cfg.take_list("shrink_deltas_ms")?.unwrap_or(d.shrink_deltas_ms),
        grow_delta_ms: cfg.take_or("grow_delta_ms", d.grow_delta_ms)?,
        windows: cfg.take_or("windows", d.windows)?,
        conjugate_only: cfg.take_or("conjugate_only", d.conjugate_only)?,
        iterations: cfg.take_or("iterations", d.iterations)?,
        burn_in: cfg.take_or("burn_in", d.burn_in)?,
    };
    cfg.finish()?;
    Ok(out)
}
