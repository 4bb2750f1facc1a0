use std::sync::Arc;

use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;
use sbi_abc::{
    ess_of_weights, rejection_abc, regression_summary_train, smc_abc, systematic_resample, AbcProblem, KernelKind,
    KernelSpec, RegressionSummaryConfig, RejectionConfig, SmcConfig, Transition,
};
use sbi_core::stats::{ks_one_sample, mean};
use sbi_core::{Distribution, Error, PriorSpec, RngKey, SimulatorFn, Tensor};
use sbi_ndnet::FitConfig;
use statrs::distribution::{ContinuousCDF, Normal};

fn normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// y | θ ∼ N(θ, σ²I) row by row, for any θ width.
fn gaussian_noise(sigma: f64) -> SimulatorFn {
    Arc::new(move |key, theta| {
        let mut t = theta.flatten();
        let mut rng = key.rng();
        for v in t.data_mut() {
            *v += sigma * rng.sample::<f64, _>(StandardNormal);
        }
        Ok(t)
    })
}

fn toy_2d(y_obs: Vec<f64>) -> AbcProblem {
    let prior = PriorSpec::new(vec![("theta", Distribution::normal_iid(2, 0.0, 1.0))]).unwrap();
    AbcProblem::new(prior, gaussian_noise(1.0), y_obs)
}

#[test]
fn rejection_with_infinite_epsilon_returns_prior_draws() {
    let p = toy_2d(vec![3.0, 3.0]);
    let k = KernelSpec::new(KernelKind::Indicator, f64::INFINITY).unwrap();
    let theta = rejection_abc(&p, RngKey::new(1), 2000, &k, &RejectionConfig::default()).unwrap();
    assert_eq!(theta.n(), 2000);
    let (_, pv) = ks_one_sample(&theta.get("theta").unwrap().column_values(0), normal_cdf);
    assert!(pv > 0.01, "KS p {pv}");
}

/// θ ∼ N(0, 1), ten observations y_i ∼ N(θ, 1), summary = sample mean.
fn mean_toy() -> (AbcProblem, f64, f64) {
    let prior = PriorSpec::new(vec![("theta", Distribution::normal(0.0, 1.0))]).unwrap();
    let sim: SimulatorFn = Arc::new(|key, theta| {
        let t = theta.get("theta").unwrap();
        let mut rng = key.rng();
        let mut y = Vec::new();
        for i in 0..theta.n() {
            for _ in 0..10 {
                y.push(t.get(i, 0) + rng.sample::<f64, _>(StandardNormal));
            }
        }
        Ok(Tensor::matrix(theta.n(), 10, y))
    });
    let y_obs: Vec<f64> = vec![0.9, 1.4, 0.2, 1.1, 0.5, 1.8, 0.7, 0.3, 1.2, 0.9];
    let ybar = mean(&y_obs);
    let summary = Arc::new(|y: &Tensor| {
        let m: Vec<f64> = (0..y.rows()).map(|i| mean(y.row(i))).collect();
        Ok(Tensor::column(&m))
    });
    // Conjugate posterior N(10 ȳ / 11, 1 / 11).
    (AbcProblem::new(prior, sim, y_obs).with_summary(summary), 10.0 * ybar / 11.0, (1.0f64 / 11.0).sqrt())
}

#[test]
fn rejection_recovers_conjugate_posterior_mean() {
    let (p, post_mean, post_sd) = mean_toy();
    let n = 2000;
    let k = KernelSpec::new(KernelKind::Indicator, 0.02).unwrap();
    let theta = rejection_abc(&p, RngKey::new(2), n, &k, &RejectionConfig::default()).unwrap();
    let m = mean(&theta.get("theta").unwrap().column_values(0));
    assert!((m - post_mean).abs() < 4.0 * post_sd / (n as f64).sqrt(), "{m} vs {post_mean}");

    // Epanechnikov acceptance: ABC posterior N(10ȳ/11, 1/11 + O(ε²)) keeps the same mean.
    let k = KernelSpec::new(KernelKind::Epanechnikov, 0.05).unwrap();
    let theta = rejection_abc(&p, RngKey::new(3), n, &k, &RejectionConfig::default()).unwrap();
    let m = mean(&theta.get("theta").unwrap().column_values(0));
    assert!((m - post_mean).abs() < 4.0 * post_sd / (n as f64).sqrt(), "{m} vs {post_mean}");
}

#[test]
fn rejection_is_deterministic_and_reports_budget() {
    let (p, _, _) = mean_toy();
    let k = KernelSpec::new(KernelKind::Gaussian, 0.1).unwrap();
    let cfg = RejectionConfig::default();
    let a = rejection_abc(&p, RngKey::new(4), 300, &k, &cfg).unwrap();
    let b = rejection_abc(&p, RngKey::new(4), 300, &k, &cfg).unwrap();
    assert_eq!(a, b);

    let k = KernelSpec::new(KernelKind::Indicator, 1e-9).unwrap();
    let cfg = RejectionConfig {
        min_trials: 20_000,
        ..RejectionConfig::default()
    };
    match rejection_abc(&p, RngKey::new(5), 10, &k, &cfg) {
        Err(Error::Budget(msg)) => assert!(msg.contains("rate"), "{msg}"),
        other => panic!("expected budget error, got {other:?}"),
    }
}

#[test]
fn smc_matches_conjugate_posterior_with_geometric_epsilon() {
    let y_obs = vec![1.0, -0.5];
    let p = toy_2d(y_obs.clone());
    let cfg = SmcConfig::default();
    let (set, trace) = smc_abc(&p, RngKey::new(6), &cfg).unwrap();
    assert_eq!(trace.rounds.len(), 10);
    assert!(!trace.stopped_early);
    let eps = trace.epsilons();
    for (r, e) in eps.iter().enumerate() {
        assert_eq!(*e, eps[0] * 0.8f64.powi(r as i32));
    }
    assert!(eps.windows(2).all(|w| w[1] < w[0]));
    for r in &trace.rounds {
        assert!((r.weight_sum - 1.0).abs() < 1e-12);
    }
    assert!((set.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let m = set.weighted_mean();
    for j in 0..2 {
        assert!((m[j] - y_obs[j] / 2.0).abs() < 0.15, "coordinate {j}: {} vs {}", m[j], y_obs[j] / 2.0);
    }
    let again = smc_abc(&p, RngKey::new(6), &cfg).unwrap();
    assert_eq!(again.0, set);
}

#[test]
fn identity_transition_keeps_uniform_weights() {
    let p = toy_2d(vec![0.0, 0.0]);
    let cfg = SmcConfig {
        n_particles: 200,
        n_rounds: 3,
        transition: Transition::Identity,
        initial_epsilon: Some(f64::INFINITY),
        ..SmcConfig::default()
    };
    let (set, trace) = smc_abc(&p, RngKey::new(7), &cfg).unwrap();
    assert!(set.weights.iter().all(|w| (w - 1.0 / 200.0).abs() < 1e-15));
    assert!(trace.rounds.iter().all(|r| !r.resampled && r.n_exhausted == 0));
}

fn coin_problem(flip: f64) -> AbcProblem {
    // P(θ = 1) = 0.3; y = θ, flipped with probability `flip`.
    let prior = PriorSpec::new(vec![(
        "theta",
        Distribution::Categorical {
            logits: vec![0.7f64.ln(), 0.3f64.ln()],
        },
    )])
    .unwrap();
    let sim: SimulatorFn = Arc::new(move |key, theta| {
        let mut t = theta.flatten();
        let mut rng = key.rng();
        for v in t.data_mut() {
            if rng.random::<f64>() < flip {
                *v = 1.0 - *v;
            }
        }
        Ok(t)
    });
    AbcProblem::new(prior, sim, vec![1.0])
}

#[test]
fn discrete_posterior_mass_is_exact() {
    let cfg = SmcConfig {
        n_particles: 5000,
        n_rounds: 3,
        transition: Transition::Prior,
        initial_epsilon: Some(0.5),
        ..SmcConfig::default()
    };
    let mass = |p: &AbcProblem, seed| {
        let (set, _) = smc_abc(p, RngKey::new(seed), &cfg).unwrap();
        let t = set.thetas.get("theta").unwrap();
        (0..t.rows()).map(|i| set.weights[i] * t.get(i, 0)).sum::<f64>()
    };
    // y = θ: the observation pins θ = 1.
    assert!((mass(&coin_problem(0.0), 8) - 1.0).abs() < 0.02);
    // Noisy channel: P(θ = 1 | y = 1) = 0.3·0.8 / (0.3·0.8 + 0.7·0.2).
    let want = 0.24 / 0.38;
    let got = mass(&coin_problem(0.2), 9);
    assert!((got - want).abs() < 0.02, "{got} vs {want}");
}

#[test]
fn resampling_frequencies() {
    // Uniform weights: every index once per draw, so frequency 1/N exactly.
    let n = 50;
    let mut counts = vec![0usize; n];
    for rep in 0..200 {
        for i in systematic_resample(&vec![1.0; n], RngKey::new(rep)) {
            counts[i] += 1;
        }
    }
    assert!(counts.iter().all(|&c| c == 200));
    // Systematic resampling copies particle i either ⌊N wᵢ⌋ or ⌈N wᵢ⌉ times.
    let w = [0.05, 0.3, 0.15, 0.5];
    let mut total = [0usize; 4];
    for rep in 0..2000 {
        let idx = systematic_resample(&w, RngKey::new(1000 + rep));
        assert_eq!(idx.len(), 4);
        for (i, wi) in w.iter().enumerate() {
            let c = idx.iter().filter(|&&k| k == i).count();
            let e = 4.0 * wi;
            assert!(c as f64 >= e.floor() && c as f64 <= e.ceil(), "{c} copies for weight {wi}");
            total[i] += c;
        }
    }
    for (i, wi) in w.iter().enumerate() {
        let f = total[i] as f64 / 8000.0;
        let sd = (wi * (1.0 - wi) / 8000.0).sqrt();
        assert!((f - wi).abs() < 3.0 * sd, "index {i}: {f}");
    }
}

fn learned_summary_toy() -> (PriorSpec, SimulatorFn) {
    let prior = PriorSpec::new(vec![("theta", Distribution::normal_iid(2, 0.0, 1.0))]).unwrap();
    (prior, gaussian_noise(0.1))
}

fn small_fit() -> RegressionSummaryConfig {
    RegressionSummaryConfig {
        n_sims: 4000,
        embed_dim: 2,
        hidden_sizes: vec![32],
        fit: FitConfig {
            n_iter: 60,
            ..FitConfig::default()
        },
    }
}

#[test]
fn learned_summary_tracks_theta() {
    let (prior, sim) = learned_summary_toy();
    let cfg = small_fit();
    let (params, f) = regression_summary_train(&prior, &sim, RngKey::new(10), &cfg).unwrap();
    let theta = prior.sample(RngKey::new(11), 1000).unwrap();
    let y = sim(RngKey::new(12), &theta).unwrap();
    let s = f(&y).unwrap();
    assert_eq!(s.cols(), 2);
    let t = theta.flatten();
    for j in 0..2 {
        let (a, b) = (s.column_values(j), t.column_values(j));
        let (ma, mb) = (mean(&a), mean(&b));
        let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        let r = cov / (va * vb).sqrt();
        assert!(r > 0.95, "coordinate {j}: r = {r}");
    }
    let (params2, _) = regression_summary_train(&prior, &sim, RngKey::new(10), &cfg).unwrap();
    assert_eq!(params.flat(), params2.flat());

    let one = RegressionSummaryConfig { embed_dim: 1, ..cfg.clone() };
    let (_, f1) = regression_summary_train(&prior, &sim, RngKey::new(10), &one).unwrap();
    assert_eq!(f1(&y).unwrap().cols(), 1);
    let too_wide = RegressionSummaryConfig { embed_dim: 3, ..cfg };
    assert!(regression_summary_train(&prior, &sim, RngKey::new(10), &too_wide).is_err());
}

#[test]
fn learned_and_identity_summaries_agree_under_smc() {
    let y_obs = vec![0.8, -0.6];
    let base = toy_2d(y_obs.clone());
    let cfg = SmcConfig {
        n_particles: 500,
        n_rounds: 6,
        ..SmcConfig::default()
    };
    let (a, _) = smc_abc(&base, RngKey::new(13), &cfg).unwrap();
    let (_, f) = regression_summary_train(&base.prior, &base.simulator, RngKey::new(14), &RegressionSummaryConfig {
        n_sims: 4000,
        ..small_fit()
    })
    .unwrap();
    let learned = base.clone().with_summary(f);
    let (b, _) = smc_abc(&learned, RngKey::new(15), &cfg).unwrap();
    let (ma, mb) = (a.weighted_mean(), b.weighted_mean());
    for j in 0..2 {
        assert!((ma[j] - mb[j]).abs() < 0.2, "coordinate {j}: {} vs {}", ma[j], mb[j]);
        assert!((ma[j] - y_obs[j] / 2.0).abs() < 0.2);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ess_matches_normalized_formula(w in prop::collection::vec(1e-6f64..10.0, 1..40)) {
        let s: f64 = w.iter().sum();
        let oracle = 1.0 / w.iter().map(|v| (v / s).powi(2)).sum::<f64>();
        prop_assert!((ess_of_weights(&w) - oracle).abs() < 1e-9 * oracle);
        prop_assert!(ess_of_weights(&w) <= w.len() as f64 + 1e-9);
    }

    #[test]
    fn resample_is_deterministic_and_in_range(w in prop::collection::vec(0.0f64..1.0, 1..30), seed in 0u64..1000) {
        prop_assume!(w.iter().sum::<f64>() > 0.0);
        let a = systematic_resample(&w, RngKey::new(seed));
        prop_assert_eq!(&a, &systematic_resample(&w, RngKey::new(seed)));
        prop_assert_eq!(a.len(), w.len());
        prop_assert!(a.iter().all(|&i| w[i] > 0.0));
    }
}
