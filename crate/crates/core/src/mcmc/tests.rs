use super::geweke::{simulate_discrete, test_prior, TEST_INITIAL};
use super::*;
use crate::priors::NormalPrior;
use crate::rng::seeded;
use std::vec::Vec;

fn params(n_rho: f64, xi_sq: f64) -> DiscreteParams {
    DiscreteParams::new(6e4, 5e-6, 0.8454, -6.694, 0.0331, n_rho, xi_sq).unwrap()
}

fn cfg(xi_mode: XiMode, rho_mode: RhoMode) -> McmcConfig {
    McmcConfig { iterations: 10, burn_in: 0, xi_mode, rho_mode, initial: Some(TEST_INITIAL), ..McmcConfig::default() }
}

struct Fixture {
    y: Vec<f64>,
    state: GibbsState,
}

fn fixture(p: DiscreteParams, n: usize, seed: u64) -> Fixture {
    let mut rng = seeded(seed);
    let (h, log_s, y) = simulate_discrete(&p, n, TEST_INITIAL, &mut rng);
    Fixture { y, state: GibbsState { h, log_s, gamma: vec![0; n], params: p, iteration: 0 } }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

#[test]
fn config_validation() {
    let mut c = McmcConfig::default();
    assert!(c.validate().is_ok());
    assert_eq!(c.retained(), 5000);
    c.thin = 0;
    assert!(c.validate().is_err());
    c.thin = 1;
    c.burn_in = c.iterations;
    assert!(c.validate().is_err());
    let c = McmcConfig { xi_mode: XiMode::Fixed(0.0), ..McmcConfig::default() };
    assert!(c.validate().is_err());
    let c = McmcConfig { iterations: 0, burn_in: 0, ..McmcConfig::default() };
    assert!(c.validate().is_ok());
}

#[test]
fn tau_sq_recovers_truth_from_fixed_path() {
    let f = fixture(params(0.0, 0.0), 780, 1);
    let prior = test_prior();
    let c = cfg(XiMode::FixedZero, RhoMode::Fixed(0.0));
    let mut g = Gibbs::new(&f.y, &prior, &c, TEST_INITIAL, f.state).unwrap();
    let mut rng = seeded(2);
    let draws: Vec<f64> = (0..5000)
        .map(|_| {
            g.step_tau_sq(&mut rng).unwrap();
            g.state.params.tau_sq
        })
        .collect();
    assert!((mean(&draws) / 0.0331 - 1.0).abs() < 0.1, "{}", mean(&draws));
}

#[test]
fn tau_sq_shape_and_rate_without_residuals() {
    // Path sitting exactly on α makes every residual zero: the rate is the
    // prior rate and only the shape moves.
    let p = params(0.0, 0.0);
    let n = 4;
    let prior = test_prior();
    let c = cfg(XiMode::FixedZero, RhoMode::Fixed(0.0));
    let y = vec![0.0, 0.001, 0.0, -0.001, 0.0];
    let state = GibbsState { h: vec![p.alpha; n + 1], log_s: y.clone(), gamma: vec![0; n], params: p, iteration: 0 };
    let mut g = Gibbs::new(&y, &prior, &c, TEST_INITIAL, state).unwrap();
    let mut rng = seeded(3);
    let draws: Vec<f64> = (0..100_000)
        .map(|_| {
            g.step_tau_sq(&mut rng).unwrap();
            g.state.params.tau_sq
        })
        .collect();
    let shape = prior.tau_sq.shape + 0.5 * (n as f64 + 1.0);
    let expected = prior.tau_sq.rate / (shape - 1.0);
    let sd = expected / (shape - 2.0).sqrt();
    assert!((mean(&draws) - expected).abs() < 4.0 * sd / (draws.len() as f64).sqrt());
}

#[test]
fn tau_sq_leverage_step_matches_grid_posterior() {
    let f = fixture(params(-0.6, 0.0), 200, 4);
    let prior = test_prior();
    let c = cfg(XiMode::FixedZero, RhoMode::Fixed(-0.6));
    let mut g = Gibbs::new(&f.y, &prior, &c, TEST_INITIAL, f.state).unwrap();
    let mut rng = seeded(5);
    let draws: Vec<f64> = (0..40_000)
        .map(|_| {
            g.step_tau_sq(&mut rng).unwrap();
            g.state.params.tau_sq
        })
        .collect();
    // Brute-force posterior mean on a grid of τ² using the exact transition densities.
    let s = &g.state;
    let p = s.params;
    let log_post = |t2: f64| {
        let mut lp = prior.tau_sq.ln_pdf(t2);
        let tau = t2.sqrt();
        lp += ln_norm_pdf(s.h[0], p.alpha, t2 / p.one_minus_theta_sq());
        for j in 0..200 {
            let eps = (s.log_s[j + 1] - s.log_s[j] - p.mu) * (-s.h[j]).exp();
            let m = p.alpha + p.theta() * (s.h[j] - p.alpha) + p.rho * tau * eps;
            lp += ln_norm_pdf(s.h[j + 1], m, t2 * (1.0 - p.rho * p.rho));
        }
        lp
    };
    let grid: Vec<f64> = (1..4000).map(|i| i as f64 * 2e-5).collect();
    let lps: Vec<f64> = grid.iter().map(|&t| log_post(t)).collect();
    let max = lps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = lps.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = w.iter().sum();
    let m: f64 = grid.iter().zip(&w).map(|(t, w)| t * w).sum::<f64>() / z;
    let sd = (grid.iter().zip(&w).map(|(t, w)| (t - m).powi(2) * w).sum::<f64>() / z).sqrt();
    let ess = effective_sample_size(&draws);
    assert!((mean(&draws) - m).abs() < 4.0 * sd / ess.sqrt(), "{} vs {m}", mean(&draws));
    assert!(g.stats.tau_sq.rate() > 0.8);
}

#[test]
fn theta_recovers_truth_and_accepts_often() {
    let f = fixture(params(0.0, 0.0), 5000, 6);
    let prior = test_prior();
    let c = cfg(XiMode::FixedZero, RhoMode::Fixed(0.0));
    let mut g = Gibbs::new(&f.y, &prior, &c, TEST_INITIAL, f.state).unwrap();
    let mut rng = seeded(7);
    let draws: Vec<f64> = (0..5000)
        .map(|_| {
            g.step_theta(&mut rng).unwrap();
            g.state.params.theta()
        })
        .collect();
    assert!((mean(&draws) - 0.8454).abs() < 0.05);
    let rate = g.stats.theta.rate();
    assert!(rate > 0.5 && rate < 1.0 + 1e-12, "acceptance {rate}");
}

#[test]
fn alpha_recovers_truth() {
    let f = fixture(params(0.0, 0.0), 780, 8);
    let prior = test_prior();
    let c = cfg(XiMode::FixedZero, RhoMode::Fixed(0.0));
    let mut g = Gibbs::new(&f.y, &prior, &c, TEST_INITIAL, f.state).unwrap();
    let mut rng = seeded(9);
    let draws: Vec<f64> = (0..5000)
        .map(|_| {
            g.step_alpha(&mut rng);
            g.state.params.alpha
        })
        .collect();
    assert!((mean(&draws) + 6.694).abs() < 0.3);
    assert_eq!(g.stats.alpha.rate(), 1.0);
}

#[test]
fn xi_sq_recovers_truth_and_fixed_modes_hold() {
    let f = fixture(params(0.0, 2.5e-7), 780, 10);
    let prior = test_prior();
    let c = cfg(XiMode::Estimated, RhoMode::Fixed(0.0));
    let mut g = Gibbs::new(&f.y, &prior, &c, TEST_INITIAL, f.state.clone()).unwrap();
    let mut rng = seeded(11);
    let draws: Vec<f64> = (0..5000)
        .map(|_| {
            g.step_xi_sq(&mut rng).unwrap();
            g.state.params.xi_sq
        })
        .collect();
    assert!((mean(&draws) / 2.5e-7 - 1.0).abs() < 0.15, "{}", mean(&draws));

    // Y ≡ log S: the posterior is the prior with the shape shifted by n/2.
    let state = GibbsState { log_s: f.y.clone(), ..f.state.clone() };
    let mut g = Gibbs::new(&f.y, &prior, &c, TEST_INITIAL, state).unwrap();
    let draws: Vec<f64> = (0..20_000)
        .map(|_| {
            g.step_xi_sq(&mut rng).unwrap();
            g.state.params.xi_sq
        })
        .collect();
    let shape = prior.xi_sq.shape + 390.0;
    let expected = prior.xi_sq.rate / (shape - 1.0);
    assert!((mean(&draws) / expected - 1.0).abs() < 0.01);

    let c = cfg(XiMode::FixedZero, RhoMode::Fixed(0.0));
    let mut g = Gibbs::new(&f.y, &prior, &c, TEST_INITIAL, f.state.clone()).unwrap();
    g.sweep(&mut rng).unwrap();
    assert_eq!(g.state.params.xi_sq, 0.0);
    assert_eq!(g.state.log_s, f.y);
}

#[test]
fn mu_posterior_covers_truth() {
    // Reference day at 5 minutes: μ(Δ) = 5.1e-7.
    let mut p = params(0.0, 0.0);
    p.mu = 5.1e-7;
    p.alpha = -13.0 + 0.5 * 3e5f64.ln();
    let f = fixture(p, 78, 12);
    let mut prior = test_prior();
    prior.mu = NormalPrior { mean: 5.1e-7, var: 1e-10 };
    let c = cfg(XiMode::FixedZero, RhoMode::Fixed(0.0));
    let mut g = Gibbs::new(&f.y, &prior, &c, TEST_INITIAL, f.state).unwrap();
    let mut rng = seeded(13);
    let mut draws: Vec<f64> = (0..4000)
        .map(|_| {
            g.step_mu(&mut rng);
            g.state.params.mu
        })
        .collect();
    draws.sort_by(|a, b| a.total_cmp(b));
    assert!(quantile(&draws, 0.025) < 5.1e-7 && 5.1e-7 < quantile(&draws, 0.975));
}

#[test]
fn mu_flat_prior_gives_precision_weighted_mean() {
    let f = fixture(params(0.0, 0.0), 50, 14);
    let mut prior = test_prior();
    prior.mu = NormalPrior { mean: 0.0, var: 1e300 };
    let c = cfg(XiMode::FixedZero, RhoMode::Fixed(0.0));
    let mut g = Gibbs::new(&f.y, &prior, &c, TEST_INITIAL, f.state).unwrap();
    let s = &g.state;
    let (mut num, mut den) = (0.0, 0.0);
    for j in 0..50 {
        let w = (-2.0 * s.h[j]).exp();
        num += w * (s.log_s[j + 1] - s.log_s[j]);
        den += w;
    }
    let mut rng = seeded(15);
    let draws: Vec<f64> = (0..100_000)
        .map(|_| {
            g.step_mu(&mut rng);
            g.state.params.mu
        })
        .collect();
    let se = (1.0 / den / draws.len() as f64).sqrt();
    assert!((mean(&draws) - num / den).abs() < 4.0 * se);
}

#[test]
fn indicator_probabilities_and_prior_predictive_frequencies() {
    let n = 20_000;
    let p = params(0.0, 0.0);
    let f = fixture(p, n, 16);
    let prior = test_prior();
    let c = cfg(XiMode::FixedZero, RhoMode::Fixed(0.0));
    let mut g = Gibbs::new(&f.y, &prior, &c, TEST_INITIAL, f.state).unwrap();
    let mut rng = seeded(17);
    g.step_indicators(&mut rng).unwrap();
    let mut lw = [0.0; MIXTURE_SIZE];
    g.component_log_weights(&g.state.h, 0, &mut lw);
    categorical_from_log_weights(&mut rng, &mut lw).unwrap();
    assert!((lw.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let mut counts = [0usize; MIXTURE_SIZE];
    for &k in &g.state.gamma {
        counts[k as usize] += 1;
    }
    let mix = MixtureTable::omori();
    for l in 0..MIXTURE_SIZE {
        let freq = counts[l] as f64 / n as f64;
        let se = (mix.p[l] * (1.0 - mix.p[l]) / n as f64).sqrt();
        assert!((freq - mix.p[l]).abs() < 3.0 * se + 1e-3, "component {l}: {freq} vs {}", mix.p[l]);
    }
}

#[test]
fn indicator_weights_reduce_to_prior_at_component_means() {
    // With ε* at m_l/2 and a common variance the likelihood factor is flat.
    let mut mix = MixtureTable::omori();
    let e = 0.3;
    let lw: Vec<f64> = (0..MIXTURE_SIZE)
        .map(|l| {
            mix.m[l] = 2.0 * e;
            mix.ln_p[l] + ln_norm_pdf(e, 0.5 * mix.m[l], 0.5)
        })
        .collect();
    let z = log_sum_exp(&lw);
    for l in 0..MIXTURE_SIZE {
        assert!(((lw[l] - z).exp() - mix.p[l] / mix.p.iter().sum::<f64>()).abs() < 1e-12);
    }
}

#[test]
fn volatility_path_collapses_without_state_noise() {
    let mut p = params(0.0, 0.0);
    p.tau_sq = 1e-14;
    let f = fixture(p, 100, 18);
    let prior = test_prior();
    let c = cfg(XiMode::FixedZero, RhoMode::Fixed(0.0));
    let mut g = Gibbs::new(&f.y, &prior, &c, TEST_INITIAL, f.state).unwrap();
    let mut rng = seeded(19);
    g.step_indicators(&mut rng).unwrap();
    g.step_volatilities(&mut rng).unwrap();
    assert!(g.state.h.iter().all(|h| (h - p.alpha).abs() < 1e-5));
}

#[test]
fn rho_step_scale_zero_keeps_rho() {
    let f = fixture(params(0.3, 0.0), 100, 20);
    let prior = test_prior();
    let c = McmcConfig { rho_step: 0.0, ..cfg(XiMode::FixedZero, RhoMode::Estimated) };
    let mut g = Gibbs::new(&f.y, &prior, &c, TEST_INITIAL, f.state).unwrap();
    let mut rng = seeded(21);
    for _ in 0..20 {
        g.step_rho(&mut rng);
        assert_eq!(g.state.params.rho, 0.3);
    }
}

#[test]
fn chain_with_zero_iterations_returns_initial_record() {
    let f = fixture(params(0.0, 2.5e-7), 50, 22);
    let series = ObservedSeries::from_grid(60_000, f.y).unwrap();
    let c = McmcConfig { iterations: 0, burn_in: 0, ..McmcConfig::default() };
    let out = run_chain(&series, &test_prior(), &c).unwrap();
    assert!(out.draws.is_empty() && out.iv.is_empty());
    assert!((out.initial.alpha_hat - (test_prior().alpha.mean - 0.5 * 6e4f64.ln())).abs() < 1e-12);
}

#[test]
fn chain_is_deterministic_and_reports_continuized_draws() {
    let f = fixture(params(-0.3, 2.5e-7), 100, 23);
    let series = ObservedSeries::from_grid(60_000, f.y).unwrap();
    let c = McmcConfig {
        iterations: 300,
        burn_in: 100,
        thin: 3,
        rho_mode: RhoMode::Estimated,
        path_every: 10,
        seed: 5,
        ..McmcConfig::default()
    };
    let a = run_chain(&series, &test_prior(), &c).unwrap();
    let b = run_chain(&series, &test_prior(), &c).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.draws.len(), c.retained());
    assert_eq!(a.h_paths.len(), (c.retained() + 9) / 10);
    for (d, cp) in a.discrete.iter().zip(&a.draws) {
        assert_eq!(continuize(d).unwrap(), *cp);
    }
    assert!(a.stats.volatility.rate() > 0.5);
    let other = run_chain(&series, &test_prior(), &McmcConfig { seed: 6, ..c }).unwrap();
    assert_ne!(a.draws, other.draws);
}

#[test]
fn rho_posterior_covers_zero_on_uncorrelated_data() {
    let f = fixture(params(0.0, 1e-7), 800, 24);
    let series = ObservedSeries::from_grid(60_000, f.y).unwrap();
    let c = McmcConfig {
        iterations: 3000,
        burn_in: 1000,
        rho_mode: RhoMode::Estimated,
        initial: Some(TEST_INITIAL),
        seed: 9,
        ..McmcConfig::default()
    };
    let out = run_chain(&series, &test_prior(), &c).unwrap();
    let mut rho: Vec<f64> = out.draws.iter().map(|d| d.rho).collect();
    rho.sort_by(|a, b| a.total_cmp(b));
    assert!(quantile(&rho, 0.025) < 0.0 && 0.0 < quantile(&rho, 0.975));
    let rate = out.stats_post_burn.rho.rate();
    assert!(rate > 0.15 && rate < 0.5, "ρ acceptance {rate}");
}

#[test]
fn rho_posterior_detects_leverage() {
    let f = fixture(params(-0.7, 1e-7), 2000, 25);
    let series = ObservedSeries::from_grid(60_000, f.y).unwrap();
    let c = McmcConfig {
        iterations: 3000,
        burn_in: 1000,
        rho_mode: RhoMode::Estimated,
        initial: Some(TEST_INITIAL),
        seed: 10,
        ..McmcConfig::default()
    };
    let out = run_chain(&series, &test_prior(), &c).unwrap();
    let mut rho: Vec<f64> = out.draws.iter().map(|d| d.rho).collect();
    rho.sort_by(|a, b| a.total_cmp(b));
    assert!(quantile(&rho, 0.975) < -0.3, "{:?}", summarize(&rho));
}
