//! Thread-pool runners for the studies. Jobs are independent and seeded by
//! their indices, so results do not depend on the number of threads.

use std::time::Instant;

use rayon::prelude::*;

use hfsv_core::experiments::{
    aggregate, alpha_study_grid, alpha_study_job, run_coverage_job, simulate_alpha_dataset, AlphaStudyDesign,
    AlphaVarianceReport, CoverageDesign, CoverageReport,
};
use hfsv_core::mcmc::geweke::{run_geweke, GewekeDesign, GewekeStat};
use hfsv_core::priors::DiscretePriorSpec;
use hfsv_core::rng::substream;
use hfsv_core::Result;

fn pool(threads: Option<usize>) -> rayon::ThreadPool {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        b = b.num_threads(t);
    }
    b.build().expect("thread pool")
}

pub fn run_coverage(design: &CoverageDesign, seed: u64, threads: Option<usize>) -> Result<CoverageReport> {
    design.validate()?;
    let jobs = design.jobs();
    let total = jobs.len();
    let done = std::sync::atomic::AtomicUsize::new(0);
    let results: Vec<_> = pool(threads).install(|| {
        jobs.par_iter()
            .map(|&job| {
                let t = Instant::now();
                let r = run_coverage_job(design, seed, job);
                let secs = t.elapsed().as_secs_f64();
                if let Err(e) = &r {
                    log::warn!("replicate {} period {} variant {}: {e}", job.replicate, job.delta, job.variant);
                }
                let k = done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
                log::debug!("coverage job {k}/{total} in {secs:.1}s");
                (job, r, secs)
            })
            .collect()
    });
    aggregate(design, &results)
}

pub fn run_alpha_study(design: &AlphaStudyDesign, seed: u64, threads: Option<usize>) -> Result<AlphaVarianceReport> {
    design.truth.validate()?;
    let path = simulate_alpha_dataset(design, seed)?;
    let grid = alpha_study_grid(design);
    let rows = pool(threads).install(|| {
        grid.par_iter()
            .enumerate()
            .map(|(i, &(s, d, t))| alpha_study_job(design, &path, s, d, t, seed ^ substream(i as u64, 7, 7)))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(AlphaVarianceReport { rows })
}

/// Splits the replicates into chunks with distinct seeds and pools the
/// moment estimates.
pub fn run_geweke_parallel(prior: &DiscretePriorSpec, design: &GewekeDesign, threads: Option<usize>) -> Result<Vec<GewekeStat>> {
    let pool = pool(threads);
    let chunks = pool.current_num_threads().max(1);
    if chunks == 1 {
        return run_geweke(prior, design);
    }
    let per = design.replications.div_ceil(chunks);
    let parts = pool.install(|| {
        (0..chunks)
            .into_par_iter()
            .map(|c| {
                let reps = per.min(design.replications.saturating_sub(c * per));
                let d = GewekeDesign { replications: reps, seed: design.seed ^ substream(c as u64, 9, 9), ..design.clone() };
                if reps < 2 {
                    return Ok((0, Vec::new()));
                }
                run_geweke(prior, &d).map(|s| (reps, s))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(pool_geweke(&parts))
}

fn pool_geweke(parts: &[(usize, Vec<GewekeStat>)]) -> Vec<GewekeStat> {
    let parts: Vec<_> = parts.iter().filter(|(n, _)| *n > 0).collect();
    let total: f64 = parts.iter().map(|(n, _)| *n as f64).sum();
    let k = parts[0].1.len();
    (0..k)
        .map(|i| {
            let w = |n: usize| n as f64 / total;
            let mean = |f: fn(&GewekeStat) -> f64| parts.iter().map(|(n, s)| w(*n) * f(&s[i])).sum::<f64>();
            let se = |f: fn(&GewekeStat) -> f64| parts.iter().map(|(n, s)| (w(*n) * f(&s[i])).powi(2)).sum::<f64>().sqrt();
            GewekeStat {
                name: parts[0].1[i].name.clone(),
                sampler_mean: mean(|s| s.sampler_mean),
                sampler_se: se(|s| s.sampler_se),
                prior_mean: mean(|s| s.prior_mean),
                prior_se: se(|s| s.prior_se),
            }
        })
        .collect()
}
