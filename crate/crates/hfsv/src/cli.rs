use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use hfsv_core::estimators::{
    default_bandwidth, kernel_realized_variance, percentile_interval, realized_variance, stationary_bootstrap_ci,
    BootstrapDesign, IntervalMethod, IvEstimator, KernelWeights,
};
use hfsv_core::mcmc::run_chain;
use hfsv_core::priors::{describe, elicit};
use hfsv_core::simulate::{apply_microstructure, simulate_path, MicrostructureSpec};

use crate::config::{self, ConfigError, KvConfig, SimulationConfig};
use crate::io::{self, IngestError};
use crate::runner;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "hfsv", version, about = "Stochastic volatility with microstructure noise for high-frequency prices")]
pub struct Cli {
    /// Master seed for every random stream.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Log progress to stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one session and write ticks.csv and latent.csv.
    Simulate {
        /// key=value simulation settings (defaults to the reference day).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Print the discrete-time prior implied by continuous-time moments.
    Elicit {
        #[arg(long)]
        prior: PathBuf,
        #[arg(long)]
        delta_ms: u64,
    },
    /// Run the sampler on a tick file.
    Fit {
        #[arg(long)]
        ticks: PathBuf,
        /// key=value prior moments.
        #[arg(long)]
        prior: PathBuf,
        #[arg(long)]
        delta_ms: u64,
        /// key=value sampler settings.
        #[arg(long)]
        config: Option<PathBuf>,
        /// First grid point in ms (defaults to the first tick).
        #[arg(long)]
        origin_ms: Option<i64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Realized, kernel and posterior integrated-variance estimates.
    Iv {
        #[arg(long)]
        ticks: PathBuf,
        #[arg(long)]
        delta_ms: u64,
        #[arg(long)]
        origin_ms: Option<i64>,
        /// Kernel bandwidth (defaults to ⌈n^(1/3)⌉).
        #[arg(long)]
        bandwidth: Option<usize>,
        #[arg(long, value_enum, default_value_t = KernelArg::Bartlett)]
        kernel: KernelArg,
        /// Mean bootstrap block length (defaults to n^(1/3)).
        #[arg(long)]
        block_len: Option<f64>,
        #[arg(long, default_value_t = 1000)]
        bootstrap: usize,
        /// Tail mass of the intervals.
        #[arg(long, default_value_t = 0.05)]
        level: f64,
        /// draws.csv from `fit`, for the posterior interval.
        #[arg(long)]
        draws: Option<PathBuf>,
    },
    /// Coverage study; writes coverage.csv and coverage.txt.
    Coverage {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Posterior variance of α̂ against sampling period and window length.
    AlphaStudy {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KernelArg {
    Bartlett,
    Flat,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Core(#[from] hfsv_core::Error),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Io(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if !e.is_usage() => EXIT_NUMERIC,
            _ => EXIT_USAGE,
        }
    }
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).try_init();
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load_or_empty(path: &Option<PathBuf>) -> Result<KvConfig, ConfigError> {
    match path {
        Some(p) => KvConfig::load(p),
        None => Ok(KvConfig::empty("<defaults>")),
    }
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Usage(format!("{}: {e}", dir.display())))
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Simulate { config, out } => {
            let sim = SimulationConfig::from_kv(load_or_empty(config)?)?;
            ensure_dir(out)?;
            let path = simulate_path(&sim.truth, sim.step_ms, sim.horizon_ms, &sim.initial, cli.seed)?;
            let noisy = apply_microstructure(&path, &sim.noise, cli.seed.wrapping_add(1))?;
            let decimals = match sim.noise {
                MicrostructureSpec::BidAsk { tick, .. } => Some(io::tick_decimals(tick)),
                _ => None,
            };
            io::write_ticks(&out.join("ticks.csv"), &noisy, decimals)?;
            io::write_latent(&out.join("latent.csv"), &noisy)?;
            log::info!("wrote {} ticks to {}", noisy.n_points(), out.display());
        }
        Command::Elicit { prior, delta_ms } => {
            let mut kv = KvConfig::load(prior)?;
            let mom = config::take_prior(&mut kv)?;
            kv.finish()?;
            let spec = elicit(&mom, *delta_ms as f64)?;
            println!("{}", describe(&spec));
        }
        Command::Fit { ticks, prior, delta_ms, config, origin_ms, out } => {
            let mut kv = KvConfig::load(prior)?;
            let mom = config::take_prior(&mut kv)?;
            kv.finish()?;
            let mut run_kv = load_or_empty(config)?;
            let mcmc = config::take_mcmc(&mut run_kv, cli.seed)?;
            run_kv.finish()?;
            let ing = io::ingest_ticks(ticks, *delta_ms, *origin_ms)?;
            if ing.carried_forward > 0 {
                log::warn!("{} grid points carried forward over gaps", ing.carried_forward);
            }
            let spec = elicit(&mom, *delta_ms as f64)?;
            log::info!("prior: {}", describe(&spec));
            let chain = run_chain(&ing.series, &spec, &mcmc)?;
            ensure_dir(out)?;
            io::write_draws(&out.join("draws.csv"), &chain, mcmc.burn_in, mcmc.thin)?;
            io::write_volpath(&out.join("volpath.csv"), &chain, &ing.series)?;
            let mut text = format!("prior: {}\n", describe(&spec));
            text.push_str(&io::diagnostics_text(&chain, ing.carried_forward));
            io::write_text(&out.join("diagnostics.txt"), &text)?;
        }
        Command::Iv { ticks, delta_ms, origin_ms, bandwidth, kernel, block_len, bootstrap, level, draws } => {
            let ing = io::ingest_ticks(ticks, *delta_ms, *origin_ms)?;
            let series = &ing.series;
            let n = series.n();
            let h = bandwidth.unwrap_or_else(|| default_bandwidth(n));
            let weights = match kernel {
                KernelArg::Bartlett => KernelWeights::Bartlett,
                KernelArg::Flat => KernelWeights::Flat,
            };
            let rv = realized_variance(series)?;
            let krv = kernel_realized_variance(series, h, weights)?;
            let mut design = BootstrapDesign { replicates: *bootstrap, level: *level, ..BootstrapDesign::default_for(n, cli.seed) };
            if let Some(l) = block_len {
                design.mean_block_len = *l;
            }
            let ci = stationary_bootstrap_ci(series, IvEstimator::Kernel { bandwidth: h, weights }, &design)?;
            println!("returns: {n}");
            println!("realized variance: {rv:e}");
            println!(
                "kernel realized variance (H = {h}): {krv:e} [{:e}, {:e}]{}",
                ci.interval.lower,
                ci.interval.upper,
                if ci.degenerate { " (constant returns)" } else { "" }
            );
            if let Some(path) = draws {
                let iv = read_iv_column(path)?;
                let mean = iv.iter().sum::<f64>() / iv.len() as f64;
                let est = percentile_interval(&iv, mean, *level, IntervalMethod::Posterior)?;
                println!("posterior integrated variance: {:e} [{:e}, {:e}]", est.point, est.lower, est.upper);
            }
        }
        Command::Coverage { config, out, threads } => {
            let design = config::coverage_design(load_or_empty(config)?)?;
            let report = runner::run_coverage(&design, cli.seed, *threads)?;
            ensure_dir(out)?;
            io::write_coverage_csv(&out.join("coverage.csv"), &report)?;
            let table = report.render_table();
            io::write_text(&out.join("coverage.txt"), &table)?;
            print!("{table}");
            for c in &report.cells {
                log::info!("{} at {} ms: {:.2}s per fit", c.variant.label(), c.delta_ms, c.seconds_per_fit);
            }
        }
        Command::AlphaStudy { config, out, threads } => {
            let design = config::alpha_design(load_or_empty(config)?)?;
            let report = runner::run_alpha_study(&design, cli.seed, *threads)?;
            ensure_dir(out)?;
            io::write_alpha_csv(&out.join("alpha.csv"), &report)?;
            let table = report.render_table();
            io::write_text(&out.join("alpha.txt"), &table)?;
            print!("{table}");
        }
    }
    Ok(())
}

fn read_iv_column(path: &Path) -> Result<Vec<f64>, CliError> {
    let bad = |e: String| CliError::Usage(format!("{}: {e}", path.display()));
    let mut rdr = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let idx = rdr
        .headers()
        .map_err(|e| bad(e.to_string()))?
        .iter()
        .position(|h| h == "iv")
        .ok_or_else(|| bad("no `iv` column".into()))?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        out.push(rec[idx].parse::<f64>().map_err(|e| bad(e.to_string()))?);
    }
    if out.is_empty() {
        return Err(bad("no draws".into()));
    }
    Ok(out)
}
