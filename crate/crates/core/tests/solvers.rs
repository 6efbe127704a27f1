mod common;

use common::*;
use lmaps_core::operators::{KernelSpec, MaskSpec, MatrixSource, Surrogate};
use lmaps_core::rng::{seeded, stream};
use lmaps_core::schedule::initial_state;
use lmaps_core::solvers::{
    daps_langevin, global_map_objective, lmaps_inner_loop, quadratic_minimiser, run, run_global_map, tmpd_denoise,
};
use lmaps_core::{
    build_operator, renoise, Error, Family, GaussianMixture, OperatorConfig, OperatorSpec, RhoPolicy, SolverConfig,
    StateVector,
};
use nalgebra::{DMatrix, DVector};

fn square_mixture() -> GaussianMixture {
    let means = [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)]
        .iter()
        .map(|&(a, b)| v(&[a, b]))
        .collect();
    GaussianMixture::isotropic(vec![0.25; 4], means, &[0.05; 4]).unwrap()
}

fn cfg(family: Family, steps: usize) -> SolverConfig {
    SolverConfig {
        steps,
        ..SolverConfig::new(family)
    }
}

#[test]
fn dps_without_guidance_is_unconditional_sampling() {
    let prior = square_mixture();
    let sched = cosine(40);
    let op = build_operator(&OperatorConfig::new(2, OperatorSpec::Identity, 0.1)).unwrap();
    let y = op.measure(&v(&[1.0, 1.0]), &mut seeded(1)).unwrap();
    for seed in 0..5 {
        let plain = run(&prior, &sched, None, None, &cfg(Family::Unconditional, 40), &mut seeded(seed)).unwrap();
        let dps_cfg = SolverConfig {
            guidance_scale: 0.0,
            ..cfg(Family::Dps, 40)
        };
        let dps = run(&prior, &sched, Some(&op), Some(&y), &dps_cfg, &mut seeded(seed)).unwrap();
        assert_eq!(plain.x0_hat, dps.x0_hat);
    }
}

#[test]
fn daps_without_langevin_is_renoised_posterior_mean() {
    let prior = square_mixture();
    let sched = cosine(30);
    let op = build_operator(&OperatorConfig::new(2, OperatorSpec::Mask(MaskSpec::Indices(vec![0])), 0.05)).unwrap();
    let y = op.measure(&v(&[1.0, -1.0]), &mut seeded(2)).unwrap();
    let daps_cfg = SolverConfig {
        langevin_steps: 0,
        ..cfg(Family::Daps, 30)
    };
    let plain_cfg = SolverConfig {
        rho: Some(RhoPolicy::Constant(1.0)),
        ..cfg(Family::Unconditional, 30)
    };
    for seed in 0..5 {
        let a = run(&prior, &sched, Some(&op), Some(&y), &daps_cfg, &mut seeded(seed)).unwrap();
        let b = run(&prior, &sched, None, None, &plain_cfg, &mut seeded(seed)).unwrap();
        assert_eq!(a.x0_hat, b.x0_hat);
    }
}

#[test]
fn daps_langevin_targets_the_gaussian_posterior_mean() {
    let mut rng = seeded(11);
    let mean = v(&[0.3, -0.2]);
    let cov = random_spd(&mut rng, 2, 0.3);
    let prior = gaussian(mean.clone(), cov.clone());
    let sched = cosine(50);
    let t = 20;
    let (a, s) = (sched.alpha(t), sched.sigma(t));
    let x_t = StateVector::new(v(&[0.5, 0.1]), t);
    let cond = prior.condition(&x_t, &sched).unwrap();
    let h = random_matrix(&mut rng, 1, 2);
    let sigma_y = 0.4;
    let op = build_operator(&OperatorConfig::new(2, OperatorSpec::DenseLinear(MatrixSource::Explicit(h.clone())), sigma_y)).unwrap();
    let y = op.measure(&v(&[1.0, 0.5]), &mut seeded(3)).unwrap();

    let (m_t, c_t) = gaussian_denoiser(&mean, &cov, &x_t.values, a, s);
    let target = conjugate_mean(&m_t, &c_t, &h, &y.values, sigma_y);

    let runs = 2000;
    let endpoint_mean = |steps: usize| -> (DVector<f64>, DVector<f64>) {
        let c = SolverConfig {
            langevin_steps: steps,
            ..cfg(Family::Daps, 50)
        };
        let xs: Vec<DVector<f64>> = (0..runs)
            .map(|i| daps_langevin(&cond, &op, &y, &c, &mut stream(5, &[i])).unwrap())
            .collect();
        let se = sample_cov(&xs).diagonal().map(|d| (d / runs as f64).sqrt());
        (sample_mean(&xs), se)
    };

    let (long, se) = endpoint_mean(2000);
    let z = (&long - &target).component_div(&se);
    assert!(z.amax() < 4.0, "z = {z}");

    let dists: Vec<f64> = [2, 4, 8, 16].iter().map(|&n| (endpoint_mean(n).0 - &target).norm()).collect();
    assert!(dists.windows(2).all(|w| w[1] < w[0]), "{dists:?}");
}

#[test]
fn tmpd_step_is_the_conjugate_posterior_mean() {
    let mut rng = seeded(21);
    let sched = cosine(100);
    for d in [2, 5, 9] {
        let mean = randn(&mut rng, d);
        let cov = random_spd(&mut rng, d, 0.1);
        let prior = gaussian(mean.clone(), cov.clone());
        let h = random_matrix(&mut rng, d - 1, d);
        let y = randn(&mut rng, d - 1);
        for t in [1, 30, 70, 100] {
            let x_t = StateVector::new(randn(&mut rng, d), t);
            let cond = prior.condition(&x_t, &sched).unwrap();
            let (m_t, c_t) = gaussian_denoiser(&mean, &cov, &x_t.values, sched.alpha(t), sched.sigma(t));
            let oracle = conjugate_mean(&m_t, &c_t, &h, &y, 0.1);
            let got = tmpd_denoise(&cond, &h, &y, 0.1).unwrap();
            assert!(rel_err(&got, &oracle) < 1e-8, "d={d} t={t}");
        }
    }
}

#[test]
fn tmpd_limits_in_measurement_noise() {
    let prior = square_mixture();
    let sched = cosine(50);
    let x_t = StateVector::new(v(&[0.4, -0.7]), 25);
    let cond = prior.condition(&x_t, &sched).unwrap();
    let h = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
    let y = v(&[0.9]);
    let vague = tmpd_denoise(&cond, &h, &y, 1e8).unwrap();
    assert!((vague - cond.posterior_mean()).amax() < 1e-9);
    let sharp = tmpd_denoise(&cond, &h, &y, 1e-6).unwrap();
    assert!((sharp[0] - 0.9).abs() < 1e-3);
}

#[test]
fn tmpd_pins_observed_coordinates_of_samples() {
    let prior = square_mixture();
    let sched = cosine(60);
    let op = build_operator(&OperatorConfig::new(2, OperatorSpec::Mask(MaskSpec::Indices(vec![1])), 1e-6)).unwrap();
    let y = op.measure(&v(&[0.2, 1.05]), &mut seeded(4)).unwrap();
    for seed in 0..10 {
        let r = run(&prior, &sched, Some(&op), Some(&y), &cfg(Family::Tmpd, 60), &mut seeded(seed)).unwrap();
        assert!((r.x0_hat.values[1] - y.values[0]).abs() < 1e-3);
    }
}

#[test]
fn tmpd_rejects_nonlinear_operators() {
    let prior = GaussianMixture::isotropic(vec![1.0], vec![DVector::zeros(4)], &[0.1]).unwrap();
    let op = build_operator(&OperatorConfig::new(
        4,
        OperatorSpec::Quantize {
            n_bits: 2,
            surrogate: Surrogate::Identity,
        },
        0.05,
    ))
    .unwrap();
    let y = op.measure(&DVector::from_element(4, 0.5), &mut seeded(0)).unwrap();
    let err = run(&prior, &cosine(10), Some(&op), Some(&y), &cfg(Family::Tmpd, 10), &mut seeded(0)).unwrap_err();
    assert!(matches!(err, Error::NotLinear { .. }));
}

#[test]
fn global_map_of_gaussian_is_the_conjugate_mean() {
    let mut rng = seeded(31);
    for d in [2, 4, 8] {
        let mean = randn(&mut rng, d);
        let cov = random_spd(&mut rng, d, 0.2);
        let prior = gaussian(mean.clone(), cov.clone());
        let h = random_matrix(&mut rng, d / 2, d);
        let sigma_y = 0.3;
        let op = build_operator(&OperatorConfig::new(d, OperatorSpec::DenseLinear(MatrixSource::Explicit(h.clone())), sigma_y)).unwrap();
        let y = op.measure(&randn(&mut rng, d), &mut seeded(d as u64)).unwrap();
        let r = run(&prior, &cosine(10), Some(&op), Some(&y), &SolverConfig::new(Family::GlobalMap), &mut seeded(1)).unwrap();
        let oracle = conjugate_mean(&mean, &cov, &h, &y.values, sigma_y);
        assert!(rel_err(&r.x0_hat.values, &oracle) < 1e-6, "d={d}");
        assert!(r.metrics["min_ascent_gain"] >= 0.0);
        let (_, grad) = global_map_objective(&prior, &op, &y, &r.x0_hat.values).unwrap();
        assert!(grad.norm() < 1e-6);
    }
}

#[test]
fn global_map_without_information_picks_the_heaviest_peak() {
    let prior = GaussianMixture::isotropic(vec![0.2, 0.8], vec![v(&[-3.0, 0.0]), v(&[3.0, 1.0])], &[0.1, 0.1]).unwrap();
    let op = build_operator(&OperatorConfig::new(2, OperatorSpec::Identity, 1e4)).unwrap();
    let y = op.measure(&v(&[-3.0, 0.0]), &mut seeded(0)).unwrap();
    let r = run_global_map(&prior, &op, &y, &SolverConfig::new(Family::GlobalMap), &mut seeded(2)).unwrap();
    assert!((r.x0_hat.values - v(&[3.0, 1.0])).amax() < 1e-3);
}

#[test]
fn lmaps_inner_loop_with_zero_fidelity_returns_the_denoiser() {
    let op = build_operator(&OperatorConfig::new(16, OperatorSpec::ConvBlur(KernelSpec::Gaussian { sigma: 1.0, radius: 2 }), 0.05)).unwrap();
    let mut rng = seeded(41);
    let y = op.measure(&randn(&mut rng, 16), &mut rng).unwrap();
    let x_hat = randn(&mut rng, 16);
    let out = lmaps_inner_loop(&x_hat, &op, &y, 0.7, 0.0, 0.1, 50, None, false).unwrap();
    assert_eq!(out.x, x_hat);
}

#[test]
fn lmaps_inner_loop_descends_and_converges_to_the_quadratic_minimiser() {
    let mut rng = seeded(42);
    let d = 6;
    let h = random_matrix(&mut rng, 4, d);
    let op = build_operator(&OperatorConfig::new(d, OperatorSpec::DenseLinear(MatrixSource::Explicit(h.clone())), 0.1)).unwrap();
    let y = op.measure(&randn(&mut rng, d), &mut rng).unwrap();
    let x_hat = randn(&mut rng, d);
    let (r, k2) = (0.4, 3.0);
    let lipschitz = (1.0 - r) + 2.0 * r * k2 * (h.transpose() * &h).symmetric_eigenvalues().max();
    let out = lmaps_inner_loop(&x_hat, &op, &y, r, k2, 1.0 / lipschitz, 20_000, Some(1e-12), true).unwrap();
    let curve = out.loss_curve.unwrap();
    assert!(curve.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    let oracle = quadratic_minimiser(1.0 - r, 2.0 * r * k2, &x_hat, &h, &y.values).unwrap();
    assert!(rel_err(&out.x, &oracle) < 1e-8);
    assert!(out.misfit_end <= out.misfit_start);
}

#[test]
fn runs_are_reproducible_from_the_seed() {
    let prior = square_mixture();
    let sched = cosine(20);
    let op = build_operator(&OperatorConfig::new(2, OperatorSpec::Mask(MaskSpec::Indices(vec![0])), 0.1)).unwrap();
    let y = op.measure(&v(&[1.0, 1.0]), &mut seeded(9)).unwrap();
    for family in Family::ALL {
        let c = SolverConfig {
            langevin_steps: 5,
            inner_steps: if family == Family::GlobalMap { 200 } else { 5 },
            ..cfg(family, 20)
        };
        let a = run(&prior, &sched, Some(&op), Some(&y), &c, &mut seeded(77)).unwrap();
        let b = run(&prior, &sched, Some(&op), Some(&y), &c, &mut seeded(77)).unwrap();
        assert_eq!(a, b, "{family}");
        assert!(a.x0_hat.is_finite());
    }
}

#[test]
fn unconditional_sampling_recovers_a_gaussian_prior() {
    let mut rng = seeded(51);
    let mean = v(&[1.0, -2.0, 0.5]);
    let cov = random_spd(&mut rng, 3, 0.2);
    let prior = gaussian(mean.clone(), cov.clone());
    let sched = cosine(100);
    let runs = 4000;
    let xs: Vec<DVector<f64>> = (0..runs)
        .map(|i| run(&prior, &sched, None, None, &cfg(Family::Unconditional, 100), &mut stream(3, &[i])).unwrap().x0_hat.values)
        .collect();
    let m = sample_mean(&xs);
    let se = cov.diagonal().map(|d| (d / runs as f64).sqrt());
    assert!((&m - &mean).component_div(&se).amax() < 4.0);
    let c = sample_cov(&xs);
    assert!((&c - &cov).norm() / cov.norm() < 0.1);
}

#[test]
fn trajectory_recording_follows_the_stride() {
    let prior = square_mixture();
    let sched = cosine(50);
    let c = SolverConfig {
        trajectory_stride: Some(10),
        ..cfg(Family::Unconditional, 50)
    };
    let r = run(&prior, &sched, None, None, &c, &mut seeded(0)).unwrap();
    let traj = r.trajectory.unwrap();
    assert_eq!(traj.first().unwrap().time_index, 50);
    assert_eq!(traj.last().unwrap(), &r.x0_hat);
    assert!(traj.len() >= 6 && traj.len() <= 7);
}

#[test]
fn inconsistent_problems_are_rejected() {
    let prior = square_mixture();
    let sched = cosine(20);
    let op3 = build_operator(&OperatorConfig::new(3, OperatorSpec::Identity, 0.1)).unwrap();
    let y3 = op3.measure(&DVector::zeros(3), &mut seeded(0)).unwrap();
    let err = run(&prior, &sched, Some(&op3), Some(&y3), &cfg(Family::Lmaps, 20), &mut seeded(0)).unwrap_err();
    assert!(matches!(err, Error::DimensionMismatch { .. }));
    let err = run(&prior, &sched, None, None, &cfg(Family::Unconditional, 30), &mut seeded(0)).unwrap_err();
    assert!(matches!(err, Error::DimensionMismatch { context: "schedule steps", .. }));
    let err = run(&prior, &sched, None, None, &cfg(Family::Dps, 20), &mut seeded(0)).unwrap_err();
    assert!(!err.is_divergence());
}

#[test]
fn runaway_guidance_is_reported_as_divergence() {
    let prior = square_mixture();
    let sched = cosine(20);
    let op = build_operator(&OperatorConfig::new(2, OperatorSpec::Identity, 1e-3)).unwrap();
    let y = op.measure(&v(&[1.0, 1.0]), &mut seeded(0)).unwrap();
    let c = SolverConfig {
        guidance_scale: 1e6,
        ..cfg(Family::Dps, 20)
    };
    let err = run(&prior, &sched, Some(&op), Some(&y), &c, &mut seeded(0)).unwrap_err();
    assert!(err.is_divergence(), "{err}");
}

#[test]
fn renoise_matches_the_forward_marginal() {
    let sched = cosine(50);
    let x0 = v(&[0.7, -1.2]);
    let t = 30;
    let runs = 20_000;
    let xs: Vec<DVector<f64>> = (0..runs)
        .map(|i| renoise(&x0, t, &sched, &mut stream(8, &[i])).unwrap().values)
        .collect();
    let s = sched.sigma(t);
    let se = s / (runs as f64).sqrt();
    assert!(((sample_mean(&xs) - &x0 * sched.alpha(t)) / se).amax() < 4.0);
    let var = sample_cov(&xs).diagonal();
    let var_se = s * s * (2.0 / runs as f64).sqrt();
    assert!(var.iter().all(|v| (v - s * s).abs() < 4.0 * var_se));
    let start = initial_state(&sched, 2, &mut seeded(0));
    assert_eq!(start.time_index, 50);
}
