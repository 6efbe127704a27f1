mod common;

use common::*;
use lmaps_core::rng::{seeded, stream};
use lmaps_core::{ddim_transition, Error, renoise, GaussianMixture, NoiseSchedule, RhoPolicy, ScheduleKind, StateVector};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn kind_strategy() -> impl Strategy<Value = ScheduleKind> {
    prop_oneof![
        Just(ScheduleKind::Cosine),
        Just(ScheduleKind::Geometric),
        Just(ScheduleKind::LinearBeta)
    ]
}

fn mixture(seed: u64, k: usize, d: usize) -> GaussianMixture {
    let mut rng = seeded(seed);
    let mut weights: Vec<f64> = (0..k).map(|i| 1.0 + (i as f64 * 0.37 + seed as f64 * 0.11).sin().abs()).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    let means = (0..k).map(|_| randn(&mut rng, d) * 2.0).collect();
    let covs = (0..k).map(|_| random_spd(&mut rng, d, 0.05)).collect();
    GaussianMixture::new(weights, means, covs).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn snr_strictly_decreases(kind in kind_strategy(), steps in 1usize..300, lo in 1e-4f64..0.5, span in 2.0f64..500.0) {
        let s = match NoiseSchedule::build(kind, steps, lo, lo * span) {
            Ok(s) => s,
            Err(e) => {
                prop_assert!(kind == ScheduleKind::LinearBeta && matches!(e, Error::NonMonotone(_)), "{}", e);
                return Ok(());
            }
        };
        let snr = s.snrs();
        prop_assert!(snr.windows(2).all(|w| w[1] < w[0]));
        prop_assert_eq!(s.alpha(0), 1.0);
        prop_assert_eq!(s.sigma(0), 0.0);
        let ratio = s.sigma(steps) / s.alpha(steps);
        prop_assert!((ratio - lo * span).abs() <= 1e-9 * lo * span);
    }

    #[test]
    fn ddpm_rho_lies_in_unit_interval(kind in kind_strategy(), steps in 2usize..200) {
        let s = NoiseSchedule::build(kind, steps, 0.01, 50.0).unwrap().with_rho(RhoPolicy::Ddpm);
        prop_assert!((1..=steps).all(|t| (0.0..=1.0).contains(&s.rho(t))));
    }

    #[test]
    fn full_renoise_transition_is_renoise(t in 1usize..60, seed in 0u64..1000) {
        let s = cosine(60).with_rho(RhoPolicy::Constant(1.0));
        let xi = randn(&mut seeded(seed), 3);
        let x_t = StateVector::new(randn(&mut seeded(seed + 1), 3), t);
        let eps = randn(&mut stream(seed, &[2]), 3);
        let a = ddim_transition(&xi, &x_t, &eps, &s).unwrap();
        let b = renoise(&xi, t - 1, &s, &mut stream(seed, &[2])).unwrap();
        prop_assert_eq!(a.time_index, t - 1);
        prop_assert!((a.values - b.values).amax() < 1e-12);
    }

    #[test]
    fn deterministic_transition_keeps_the_noise_direction(t in 1usize..60, seed in 0u64..1000) {
        let s = cosine(60).with_rho(RhoPolicy::Constant(0.0));
        let x0 = randn(&mut seeded(seed), 4);
        let noise = randn(&mut seeded(seed + 7), 4);
        let x_t = StateVector::new(&x0 * s.alpha(t) + &noise * s.sigma(t), t);
        let next = ddim_transition(&x0, &x_t, &DVector::zeros(4), &s).unwrap();
        let expected = &x0 * s.alpha(t - 1) + &noise * s.sigma(t - 1);
        prop_assert!((next.values - expected).amax() < 1e-9);
    }

    #[test]
    fn conditional_posterior_is_well_formed(seed in 0u64..500, k in 1usize..5, t in 0usize..=80) {
        let prior = mixture(seed, k, 3);
        let sched = cosine(80);
        let x_t = StateVector::new(randn(&mut seeded(seed + 99), 3) * 3.0, t);
        let cond = prior.condition(&x_t, &sched).unwrap();
        let total: f64 = cond.responsibilities().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        let cov = cond.conditional_covariance();
        prop_assert!((&cov - cov.transpose()).amax() < 1e-12);
        prop_assert!(cov.symmetric_eigenvalues().min() > -1e-10);
        prop_assert!(cond.posterior_mean().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn component_order_does_not_change_the_denoiser(seed in 0u64..500, t in 1usize..=80) {
        let prior = mixture(seed, 3, 2);
        let perm = prior.permuted(&[2, 0, 1]).unwrap();
        let sched = cosine(80);
        let x_t = StateVector::new(randn(&mut seeded(seed + 5), 2), t);
        let a = prior.condition(&x_t, &sched).unwrap().posterior_mean();
        let b = perm.condition(&x_t, &sched).unwrap().posterior_mean();
        prop_assert!((a - b).amax() < 1e-12);
        let x = randn(&mut seeded(seed + 6), 2);
        prop_assert!((prior.log_density(&x).unwrap() - perm.log_density(&x).unwrap()).abs() < 1e-12);
    }
}

#[test]
fn single_gaussian_denoiser_matches_conjugacy() {
    let mut rng = seeded(17);
    let sched = cosine(100);
    for d in [1, 3, 6] {
        let mean = randn(&mut rng, d);
        let cov = random_spd(&mut rng, d, 0.1);
        let prior = gaussian(mean.clone(), cov.clone());
        for t in [1, 10, 50, 100] {
            let x_t = randn(&mut rng, d);
            let cond = prior.condition(&StateVector::new(x_t.clone(), t), &sched).unwrap();
            let (m, c) = gaussian_denoiser(&mean, &cov, &x_t, sched.alpha(t), sched.sigma(t));
            assert!(rel_err(&cond.posterior_mean(), &m) < 1e-10);
            assert!((cond.conditional_covariance() - &c).norm() / c.norm() < 1e-10);
        }
    }
}

#[test]
fn density_integrates_to_one_on_a_grid() {
    let prior = mixture(3, 3, 2);
    let (lo, hi, n) = (-14.0, 14.0, 700);
    let h = (hi - lo) / n as f64;
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let x = v(&[lo + (i as f64 + 0.5) * h, lo + (j as f64 + 0.5) * h]);
            total += prior.log_density(&x).unwrap().exp() * h * h;
        }
    }
    assert!((total - 1.0).abs() < 1e-4, "{total}");
}

#[test]
fn prior_draws_have_mixture_moments() {
    let prior = mixture(4, 3, 2);
    let n = 40_000;
    let mut rng = seeded(12);
    let xs: Vec<DVector<f64>> = (0..n).map(|_| prior.sample(&mut rng)).collect();
    let mean = prior.overall_mean();
    let mut cov = DMatrix::zeros(2, 2);
    for (k, w) in prior.weights().iter().enumerate() {
        let dm = prior.mean(k) - &mean;
        cov += (prior.covariance(k) + &dm * dm.transpose()) * *w;
    }
    let se = cov.diagonal().map(|d| (d / n as f64).sqrt());
    assert!(((sample_mean(&xs) - &mean).component_div(&se)).amax() < 4.0);
    assert!((sample_cov(&xs) - &cov).norm() / cov.norm() < 0.05);
}
