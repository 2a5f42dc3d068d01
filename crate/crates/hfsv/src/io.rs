//! Tick files, latent-path dumps and the sampler's output files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use hfsv_core::experiments::{format_period, AlphaVarianceReport, CoverageReport};
use hfsv_core::mcmc::{quantile, summarize, ChainOutput};
use hfsv_core::simulate::{ObservedSeries, PathSample};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: file has no ticks")]
    Empty { path: String },
    #[error("{path}: expected header `timestamp_ms,price`, found `{found}`")]
    Header { path: String, found: String },
    #[error("{path}:{line}: {reason}")]
    Row { path: String, line: u64, reason: String },
    #[error("{path}:{line}: timestamp {ts} does not increase (previous {prev})")]
    NonMonotone { path: String, line: u64, ts: i64, prev: i64 },
    #[error("{path}: no tick at or before the first grid point {origin} ms (first tick at {first} ms, line 2)")]
    NoTickBeforeGrid { path: String, origin: i64, first: i64 },
    #[error("{path}: sampling period must be positive")]
    Period { path: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tick {
    pub timestamp_ms: i64,
    pub price: f64,
}

pub fn read_ticks(path: &Path) -> Result<Vec<Tick>, IngestError> {
    let p = path.display().to_string();
    let file = File::open(path).map_err(|source| IngestError::Io { path: p.clone(), source })?;
    parse_ticks(&p, file)
}

pub fn parse_ticks<R: std::io::Read>(p: &str, input: R) -> Result<Vec<Tick>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(input);
    let headers = rdr
        .headers()
        .map_err(|e| IngestError::Row { path: p.into(), line: 1, reason: e.to_string() })?
        .clone();
    if headers.is_empty() {
        return Err(IngestError::Empty { path: p.into() });
    }
    if headers.len() != 2 || &headers[0] != "timestamp_ms" || &headers[1] != "price" {
        return Err(IngestError::Header { path: p.into(), found: headers.iter().collect::<Vec<_>>().join(",") });
    }
    let mut ticks: Vec<Tick> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|pos| pos.line()).unwrap_or(0);
            IngestError::Row { path: p.into(), line, reason: e.to_string() }
        })?;
        let line = rec.position().map(|pos| pos.line()).unwrap_or(0);
        let row = |reason: String| IngestError::Row { path: p.into(), line, reason };
        if rec.len() != 2 {
            return Err(row(format!("expected 2 fields, found {}", rec.len())));
        }
        let ts: i64 = rec[0].parse().map_err(|_| row(format!("bad timestamp `{}`", &rec[0])))?;
        let price: f64 = rec[1].parse().map_err(|_| row(format!("bad price `{}`", &rec[1])))?;
        if !(price > 0.0 && price.is_finite()) {
            return Err(row(format!("price must be positive and finite, found `{}`", &rec[1])));
        }
        if let Some(prev) = ticks.last() {
            if ts <= prev.timestamp_ms {
                return Err(IngestError::NonMonotone { path: p.into(), line, ts, prev: prev.timestamp_ms });
            }
        }
        ticks.push(Tick { timestamp_ms: ts, price });
    }
    if ticks.is_empty() {
        return Err(IngestError::Empty { path: p.into() });
    }
    Ok(ticks)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub series: ObservedSeries,
    /// Grid points with no new tick since the previous grid point.
    pub carried_forward: usize,
    pub origin_ms: i64,
}

/// Samples the last tick at or before each point of `origin + kΔ`, up to the
/// last tick. `origin` defaults to the first tick.
pub fn resample(p: &str, ticks: &[Tick], delta_ms: u64, origin_ms: Option<i64>) -> Result<Ingested, IngestError> {
    if delta_ms == 0 {
        return Err(IngestError::Period { path: p.into() });
    }
    let first = ticks.first().ok_or_else(|| IngestError::Empty { path: p.into() })?.timestamp_ms;
    let last = ticks[ticks.len() - 1].timestamp_ms;
    let origin = origin_ms.unwrap_or(first);
    if origin < first {
        return Err(IngestError::NoTickBeforeGrid { path: p.into(), origin, first });
    }
    let n_points = if last < origin { 1 } else { ((last - origin) as u64 / delta_ms) as usize + 1 };
    let mut y = Vec::with_capacity(n_points);
    let mut carried = 0;
    let mut i = 0;
    for k in 0..n_points {
        let t = origin + (k as u64 * delta_ms) as i64;
        let before = i;
        while i + 1 < ticks.len() && ticks[i + 1].timestamp_ms <= t {
            i += 1;
        }
        if k > 0 && i == before {
            let prev_t = origin + ((k - 1) as u64 * delta_ms) as i64;
            if ticks[i].timestamp_ms <= prev_t {
                carried += 1;
            }
        }
        y.push(ticks[i].price.ln());
    }
    let series = ObservedSeries::from_grid(delta_ms, y)
        .map_err(|e| IngestError::Row { path: p.into(), line: 0, reason: e.to_string() })?;
    Ok(Ingested { series, carried_forward: carried, origin_ms: origin })
}

pub fn ingest_ticks(path: &Path, delta_ms: u64, origin_ms: Option<i64>) -> Result<Ingested, IngestError> {
    let ticks = read_ticks(path)?;
    resample(&path.display().to_string(), &ticks, delta_ms, origin_ms)
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    let f = File::create(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    Ok(BufWriter::new(f))
}

/// Decimal price string. With `decimals` the price is printed at that fixed
/// precision (tick-rounded prices); otherwise the shortest string that
/// parses back to the same double.
pub fn format_price(price: f64, decimals: Option<usize>) -> String {
    match decimals {
        Some(d) => format!("{price:.d$}"),
        None => format!("{price}"),
    }
}

/// Number of decimals needed to print multiples of `tick` exactly.
pub fn tick_decimals(tick: f64) -> usize {
    (0..=12).find(|d| ((tick * 10f64.powi(*d as i32)).round() - tick * 10f64.powi(*d as i32)).abs() < 1e-9).unwrap_or(12)
}

pub fn write_ticks(path: &Path, sample: &PathSample, decimals: Option<usize>) -> anyhow::Result<()> {
    let mut w = create(path)?;
    writeln!(w, "timestamp_ms,price")?;
    for (k, y) in sample.y.iter().enumerate() {
        writeln!(w, "{},{}", k as u64 * sample.delta_sim_ms, format_price(y.exp(), decimals))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_latent(path: &Path, sample: &PathSample) -> anyhow::Result<()> {
    let mut w = create(path)?;
    let half_ln_delta = 0.5 * (sample.delta_sim_ms as f64).ln();
    writeln!(w, "timestamp_ms,log_price,log_sigma_hat,observed_log_price")?;
    for k in 0..sample.n_points() {
        writeln!(
            w,
            "{},{},{},{}",
            k as u64 * sample.delta_sim_ms,
            sample.log_s[k],
            sample.log_sigma[k] - half_ln_delta,
            sample.y[k]
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_draws(path: &Path, chain: &ChainOutput, burn_in: usize, thin: usize) -> anyhow::Result<()> {
    let mut w = create(path)?;
    writeln!(w, "iteration,mu_hat,theta_hat,alpha_hat,tau_sq_hat,xi_sq,rho,iv,loglik")?;
    for (k, d) in chain.draws.iter().enumerate() {
        writeln!(
            w,
            "{},{:e},{:e},{},{:e},{:e},{},{:e},{}",
            burn_in + (k + 1) * thin,
            d.mu_hat,
            d.theta_hat,
            d.alpha_hat,
            d.tau_sq_hat,
            d.xi_sq,
            d.rho,
            chain.iv[k],
            chain.loglik[k]
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Posterior mean of `log σ̂` per return, with 95% bands when thinned
/// paths were kept.
pub fn write_volpath(path: &Path, chain: &ChainOutput, series: &ObservedSeries) -> anyhow::Result<()> {
    let mut w = create(path)?;
    let half_ln_delta = 0.5 * chain.delta_ms.ln();
    let n = series.n();
    writeln!(w, "timestamp_ms,log_sigma_hat_mean,log_sigma_hat_q025,log_sigma_hat_q975")?;
    let mut col = Vec::with_capacity(chain.h_paths.len());
    for j in 0..n.min(chain.h_mean.len()) {
        let mean = chain.h_mean[j] - half_ln_delta;
        let (lo, hi) = if chain.h_paths.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            col.clear();
            col.extend(chain.h_paths.iter().map(|h| h[j] - half_ln_delta));
            col.sort_by(|a, b| a.total_cmp(b));
            (quantile(&col, 0.025), quantile(&col, 0.975))
        };
        writeln!(w, "{},{},{},{}", series.timestamps[j + 1], mean, lo, hi)?;
    }
    w.flush()?;
    Ok(())
}

pub fn diagnostics_text(chain: &ChainOutput, carried_forward: usize) -> String {
    let mut s = String::new();
    let cols: [(&str, Vec<f64>); 7] = [
        ("mu_hat", chain.draws.iter().map(|d| d.mu_hat).collect()),
        ("theta_hat", chain.draws.iter().map(|d| d.theta_hat).collect()),
        ("alpha_hat", chain.draws.iter().map(|d| d.alpha_hat).collect()),
        ("tau_sq_hat", chain.draws.iter().map(|d| d.tau_sq_hat).collect()),
        ("xi_sq", chain.draws.iter().map(|d| d.xi_sq).collect()),
        ("rho", chain.draws.iter().map(|d| d.rho).collect()),
        ("iv", chain.iv.clone()),
    ];
    s.push_str(&format!("sampling period: {}\n", format_period(chain.delta_ms as u64)));
    s.push_str(&format!("retained draws: {}\n", chain.draws.len()));
    s.push_str(&format!("grid points carried forward: {carried_forward}\n\n"));
    s.push_str(&format!("{:<12}{:>14}{:>14}{:>14}{:>14}{:>10}\n", "parameter", "mean", "sd", "q2.5", "q97.5", "ess"));
    for (name, v) in &cols {
        if v.is_empty() {
            continue;
        }
        let m = summarize(v);
        s.push_str(&format!(
            "{:<12}{:>14.5e}{:>14.5e}{:>14.5e}{:>14.5e}{:>10.0}\n",
            name, m.mean, m.sd, m.q025, m.q975, m.ess
        ));
    }
    let st = &chain.stats_post_burn;
    s.push_str("\nacceptance after burn-in\n");
    for (name, c) in [
        ("volatility", st.volatility),
        ("tau_sq", st.tau_sq),
        ("theta", st.theta),
        ("alpha", st.alpha),
        ("rho", st.rho),
    ] {
        if c.proposed > 0 {
            s.push_str(&format!("  {name:<12}{:.3} ({}/{})\n", c.rate(), c.accepted, c.proposed));
        }
    }
    s.push_str(&format!("  theta prior-proposal fallbacks: {}\n", chain.stats.theta_fallbacks));
    s.push_str(&format!("  final rho step: {:.4}\n", chain.rho_step));
    s
}

pub fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn write_coverage_csv(path: &Path, report: &CoverageReport) -> anyhow::Result<()> {
    let mut w = create(path)?;
    writeln!(w, "delta_ms,variant,fits,failures,covered,coverage_pct,mean_width")?;
    for c in &report.cells {
        writeln!(
            w,
            "{},{},{},{},{},{:.1},{:e}",
            c.delta_ms,
            c.variant.label(),
            c.fits,
            c.failures,
            c.covered,
            c.coverage_pct(),
            c.mean_width
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_alpha_csv(path: &Path, report: &AlphaVarianceReport) -> anyhow::Result<()> {
    let mut w = create(path)?;
    writeln!(w, "scenario,delta_ms,horizon_ms,n,var_closed_form,var_conjugate,var_mcmc,mean_mcmc")?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
    for r in &report.rows {
        writeln!(
            w,
            "{},{},{},{},{:e},{:e},{},{}",
            r.scenario.tag(),
            r.delta_ms,
            r.horizon_ms,
            r.n,
            r.var_closed_form,
            r.var_conjugate,
            opt(r.var_mcmc),
            opt(r.mean_mcmc)
        )?;
    }
    w.flush()?;
    Ok(())
}
