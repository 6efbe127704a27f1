//! Built-in oracle suite: each check compares an implementation against an
//! independent computation (finite differences, quadrature, joint-Gaussian
//! conjugacy) on seeded random instances.

use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::Result;
use crate::gmm::GaussianMixture;
use crate::operators::{build_operator, KernelSpec, MaskSpec, MatrixSource, OperatorConfig, OperatorSpec};
use crate::rng::{seeded, standard_normal, Stream};
use crate::schedule::{NoiseSchedule, ScheduleKind, StateVector};
use crate::solvers::{
    isotropic_from_k, k2_for_isotropic, k_from_reformulated, lmaps_inner_loop, lmaps_weight, map_lambda,
    quadratic_minimiser, solve_local_map_closed_form, tmpd_denoise, CovarianceSpec,
};

/// Signature of the closed-form local MAP solver under test.
pub type ClosedForm = fn(&DVector<f64>, &CovarianceSpec, &DMatrix<f64>, &DVector<f64>, f64) -> Result<DVector<f64>>;

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    /// Largest error observed across instances.
    pub worst: f64,
    pub tolerance: f64,
    pub detail: String,
    pub seconds: f64,
}

pub const INSTANCES: usize = 20;

/// Runs every check with the library's own closed-form solver.
pub fn run_suite() -> Vec<CheckOutcome> {
    run_suite_with(solve_local_map_closed_form)
}

pub fn run_suite_with(closed_form: ClosedForm) -> Vec<CheckOutcome> {
    vec![
        timed("schedule-invariants", 1e-12, schedule_invariants),
        timed("tweedie-covariance", 1e-4, tweedie_covariance),
        timed("gaussian-equivalence", 1e-5, move || gaussian_equivalence(closed_form)),
        timed("objective-equivalence", 1e-6, objective_equivalence),
        timed("operator-gradients", 1e-5, operator_gradients),
        timed("conditional-score", 1e-6, conditional_score),
        timed("responsibilities-quadrature", 1e-6, responsibilities_quadrature),
        timed("tmpd-conjugacy", 1e-8, move || tmpd_conjugacy(closed_form)),
    ]
}

fn timed(name: &'static str, tolerance: f64, check: impl FnOnce() -> Result<(f64, String)>) -> CheckOutcome {
    let start = Instant::now();
    let (passed, worst, detail) = match check() {
        Ok((worst, detail)) => (worst <= tolerance, worst, detail),
        Err(e) => (false, f64::INFINITY, format!("error: {e}")),
    };
    CheckOutcome {
        name,
        passed,
        worst,
        tolerance,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

fn uniform(rng: &mut Stream, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

fn random_spd(rng: &mut Stream, d: usize, floor: f64) -> DMatrix<f64> {
    let a = DMatrix::from_column_slice(d, d, standard_normal(rng, d * d).as_slice());
    let mut s = &a * a.transpose() / d as f64;
    for i in 0..d {
        s[(i, i)] += floor;
    }
    (&s + s.transpose()) * 0.5
}

fn random_mixture(rng: &mut Stream, d: usize, k: usize, spread: f64) -> GaussianMixture {
    let raw: Vec<f64> = (0..k).map(|_| uniform(rng, 0.2, 1.0)).collect();
    let total: f64 = raw.iter().sum();
    let weights = raw.iter().map(|w| w / total).collect();
    let means = (0..k).map(|_| standard_normal(rng, d) * spread).collect();
    let covs = (0..k).map(|_| random_spd(rng, d, 0.05) * uniform(rng, 0.1, 0.5)).collect();
    GaussianMixture::new(weights, means, covs).expect("well-conditioned random mixture")
}

/// Fourth-order central difference of a scalar function along `e_i`.
fn fd4(f: &dyn Fn(&DVector<f64>) -> f64, x: &DVector<f64>, i: usize, h: f64) -> f64 {
    let at = |s: f64| {
        let mut p = x.clone();
        p[i] += s;
        f(&p)
    };
    (-at(2.0 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2.0 * h)) / (12.0 * h)
}

/// Posterior mean of `x0` under the joint Gaussian model
/// `x0 ~ N(mu, Sigma0)`, `x_t = alpha x0 + sigma e`, `y = H x0 + sigma_y z`,
/// from the summed precisions.
pub(crate) fn conjugate_mean(
    mu: &DVector<f64>,
    cov0: &DMatrix<f64>,
    alpha: f64,
    sigma: f64,
    x_t: &DVector<f64>,
    h: &DMatrix<f64>,
    y: &DVector<f64>,
    sigma_y: f64,
) -> DVector<f64> {
    let d = mu.len();
    let prec0 = cov0.clone().try_inverse().expect("SPD prior covariance");
    let s2 = sigma * sigma;
    let sy2 = sigma_y * sigma_y;
    let precision = &prec0 + DMatrix::identity(d, d) * (alpha * alpha / s2) + h.tr_mul(h) / sy2;
    let rhs = &prec0 * mu + x_t * (alpha / s2) + h.tr_mul(y) / sy2;
    precision.cholesky().expect("posterior precision is SPD").solve(&rhs)
}

fn schedule_invariants() -> Result<(f64, String)> {
    let mut violations = 0usize;
    let mut built = 0usize;
    for kind in [ScheduleKind::Cosine, ScheduleKind::Geometric, ScheduleKind::LinearBeta] {
        for &(n, lo, hi) in &[(1usize, 0.5, 80.0), (20, 0.01, 50.0), (200, 0.002, 200.0)] {
            let s = NoiseSchedule::build(kind, n, lo, hi)?;
            built += 1;
            let snr = s.snrs();
            if s.alpha(0) != 1.0 || s.sigma(0) != 0.0 {
                violations += 1;
            }
            for t in 1..=n {
                let (a, sg) = (s.alpha(t), s.sigma(t));
                if !(a > 0.0 && a <= 1.0 && sg > 0.0 && a.is_finite() && sg.is_finite()) {
                    violations += 1;
                }
                if !(snr[t] < snr[t - 1]) {
                    violations += 1;
                }
                if kind.is_variance_preserving() && (a * a + sg * sg - 1.0).abs() > 1e-12 {
                    violations += 1;
                }
            }
            let top = s.sigma(n) / s.alpha(n);
            if ((top - hi) / hi).abs() > 1e-9 {
                violations += 1;
            }
        }
    }
    Ok((violations as f64, format!("{built} schedules, {violations} violations")))
}

fn tweedie_covariance() -> Result<(f64, String)> {
    let mut rng = seeded(0x7EED);
    let sched = NoiseSchedule::build(ScheduleKind::Cosine, 40, 0.05, 20.0)?;
    let mut worst: f64 = 0.0;
    for _ in 0..INSTANCES {
        let d = rng.random_range(1..=4);
        let k = rng.random_range(1..=4);
        let prior = random_mixture(&mut rng, d, k, 1.5);
        let t = rng.random_range(1..=sched.steps());
        let (a, s) = (sched.alpha(t), sched.sigma(t));
        let x_t = prior.sample(&mut rng) * a + standard_normal(&mut rng, d) * s;
        let cov = prior.condition(&StateVector::new(x_t.clone(), t), &sched)?.conditional_covariance();
        let h = 1e-3 * s;
        let mut jac = DMatrix::zeros(d, d);
        for j in 0..d {
            for i in 0..d {
                let f = |x: &DVector<f64>| {
                    prior
                        .condition(&StateVector::new(x.clone(), t), &sched)
                        .expect("dimension fixed")
                        .posterior_mean()[i]
                };
                jac[(i, j)] = fd4(&f, &x_t, j, h);
            }
        }
        let tweedie = jac * (s * s / a);
        worst = worst.max((&cov - &tweedie).norm() / cov.norm());
    }
    Ok((worst, format!("{INSTANCES} mixtures, worst relative Frobenius error {worst:.2e}")))
}

fn gaussian_equivalence(closed_form: ClosedForm) -> Result<(f64, String)> {
    let mut rng = seeded(0x6A55);
    let sched = NoiseSchedule::build(ScheduleKind::Cosine, 50, 0.02, 50.0)?;
    let mut worst: f64 = 0.0;
    let dims = [2usize, 8, 32];
    for inst in 0..INSTANCES {
        let d = dims[inst % dims.len()];
        let m_rows = (d / 2).max(1);
        let mu = standard_normal(&mut rng, d);
        let v0 = uniform(&mut rng, 0.5, 2.0);
        let prior = GaussianMixture::isotropic(vec![1.0], vec![mu.clone()], &[v0])?;
        let t = rng.random_range(1..=sched.steps());
        let (a, s) = (sched.alpha(t), sched.sigma(t));
        let x0 = prior.sample(&mut rng);
        let x_t = &x0 * a + standard_normal(&mut rng, d) * s;
        let sigma_y = uniform(&mut rng, 0.2, 0.5);
        let h = DMatrix::from_row_slice(m_rows, d, standard_normal(&mut rng, m_rows * d).as_slice()) / (d as f64).sqrt();
        let op = build_operator(&OperatorConfig::new(
            d,
            OperatorSpec::DenseLinear(MatrixSource::Explicit(h.clone())),
            sigma_y,
        ))?;
        let y = op.measure(&x0, &mut rng)?;

        let cond = prior.condition(&StateVector::new(x_t.clone(), t), &sched)?;
        let m = cond.posterior_mean();
        let s_post = cond.component_cov(0)[(0, 0)];
        let snr = sched.snr(t);
        let k = s_post * snr;
        let k1 = 0.3;
        let k2 = k2_for_isotropic(k, k1, sigma_y, a);
        let r = lmaps_weight(s, k1);
        let lipschitz = (1.0 - r) + 2.0 * r * k2 * op.jacobian_norm_sq();
        let tol = 1e-13 * (1.0 + m.norm()) * lipschitz;
        let inner = lmaps_inner_loop(&m, &op, &y, r, k2, 1.0 / lipschitz, 2_000_000, Some(tol), false)?;

        let closed = closed_form(&m, &isotropic_from_k(k, snr), &h, &y.values, sigma_y)?;
        let oracle = conjugate_mean(
            &mu,
            &(DMatrix::identity(d, d) * v0),
            a,
            s,
            &x_t,
            &h,
            &y.values,
            sigma_y,
        );
        worst = worst
            .max(rel_err(&inner.x, &oracle))
            .max(rel_err(&closed, &oracle))
            .max(rel_err(&inner.x, &closed));
    }
    Ok((worst, format!("{INSTANCES} instances in d = 2, 8, 32, worst pairwise relative error {worst:.2e}")))
}

fn objective_equivalence() -> Result<(f64, String)> {
    let mut rng = seeded(0x0B1E);
    let mut worst: f64 = 0.0;
    for _ in 0..INSTANCES {
        let d = rng.random_range(2..=12);
        let rows = rng.random_range(1..=d);
        let h = DMatrix::from_row_slice(rows, d, standard_normal(&mut rng, rows * d).as_slice());
        let m = standard_normal(&mut rng, d);
        let y = standard_normal(&mut rng, rows);
        let sigma_y = uniform(&mut rng, 0.02, 0.5);
        let alpha = uniform(&mut rng, 0.2, 1.0);
        let sigma_t = uniform(&mut rng, 0.05, 3.0);
        let snr = alpha * alpha / (sigma_t * sigma_t);
        let k1 = uniform(&mut rng, 0.05, 1.0);
        let k2 = uniform(&mut rng, 0.5, 200.0);
        let k = k_from_reformulated(k1, k2, sigma_y, alpha);
        let mu = sigma_t * sigma_t / (sigma_t * sigma_t + k1 * k1);

        let iso = quadratic_minimiser(snr / k, 1.0 / (sigma_y * sigma_y), &m, &h, &y)?;
        let reform = quadratic_minimiser(1.0 - mu, 2.0 * mu * k2, &m, &h, &y)?;
        worst = worst.max(rel_err(&reform, &iso));

        let lambda = uniform(&mut rng, 0.1, 10.0);
        let regularised = quadratic_minimiser(1.0 / lambda, 1.0, &m, &h, &y)?;
        let via_map = solve_local_map_closed_form(&m, &map_lambda(lambda, sigma_y), &h, &y, sigma_y)?;
        worst = worst.max(rel_err(&via_map, &regularised));
    }
    let k = k_from_reformulated(0.22, 100.0, 0.05, 1.0);
    let worked = (k - 10.33).abs() / 10.33;
    let worst = if worked < 1e-3 { worst } else { worst.max(worked) };
    Ok((worst, format!("{INSTANCES} instances, worst relative error {worst:.2e}, k(0.22, 100, 0.05, 1) = {k:.4}")))
}

fn operator_gradients() -> Result<(f64, String)> {
    let mut rng = seeded(0x06AD);
    let specs: Vec<(usize, OperatorSpec)> = vec![
        (5, OperatorSpec::Identity),
        (6, OperatorSpec::DenseLinear(MatrixSource::Random { rows: 4, seed: 3 })),
        (6, OperatorSpec::Mask(MaskSpec::Indices(vec![0, 2, 5]))),
        (9, OperatorSpec::ConvBlur(KernelSpec::Taps(vec![0.25, 0.5, 0.25]))),
        (16, OperatorSpec::ConvBlur(KernelSpec::Gaussian { sigma: 1.0, radius: 1 })),
        (8, OperatorSpec::Downsample { factor: 2, image: false }),
        (6, OperatorSpec::Magnitude(MatrixSource::Random { rows: 5, seed: 11 })),
    ];
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for (d, spec) in specs {
        let op = build_operator(&OperatorConfig::new(d, spec, 0.1))?;
        for _ in 0..INSTANCES {
            let x = standard_normal(&mut rng, d);
            let y = crate::operators::Measurement::new(standard_normal(&mut rng, op.output_dim()), op.name(), 0.1);
            let grad = op.misfit_gradient(&x, &y)?;
            let f = |p: &DVector<f64>| op.misfit(p, &y).expect("dimension fixed");
            let fd = DVector::from_fn(d, |i, _| fd4(&f, &x, i, 1e-4));
            worst = worst.max(rel_err(&grad, &fd));
            count += 1;
        }
    }
    Ok((worst, format!("{count} points over 7 operators, worst relative error {worst:.2e}")))
}

fn conditional_score() -> Result<(f64, String)> {
    let mut rng = seeded(0x5C0E);
    let sched = NoiseSchedule::build(ScheduleKind::Geometric, 30, 0.05, 20.0)?;
    let mut worst: f64 = 0.0;
    for _ in 0..INSTANCES {
        let d = rng.random_range(1..=4);
        let k = rng.random_range(1..=4);
        let prior = random_mixture(&mut rng, d, k, 1.5);
        let t = rng.random_range(1..=sched.steps());
        let x_t = prior.sample(&mut rng) * sched.alpha(t) + standard_normal(&mut rng, d) * sched.sigma(t);
        let cond = prior.condition(&StateVector::new(x_t, t), &sched)?;
        let x0 = cond.posterior_mean() + standard_normal(&mut rng, d) * cond.max_component_variance().sqrt();
        let (_, grad) = cond.log_density_and_grad(&x0)?;
        let f = |p: &DVector<f64>| cond.log_density_and_grad(p).expect("dimension fixed").0;
        let h = 1e-3 * cond.min_component_variance().sqrt();
        let fd = DVector::from_fn(d, |i, _| fd4(&f, &x0, i, h));
        worst = worst.max(rel_err(&grad, &fd));
    }
    Ok((worst, format!("{INSTANCES} points, worst relative error {worst:.2e}")))
}

fn responsibilities_quadrature() -> Result<(f64, String)> {
    let mut rng = seeded(0x0AD5);
    let sched = NoiseSchedule::build(ScheduleKind::LinearBeta, 25, 0.1, 10.0)?;
    let mut worst: f64 = 0.0;
    for _ in 0..INSTANCES {
        let k = rng.random_range(2..=4);
        let raw: Vec<f64> = (0..k).map(|_| uniform(&mut rng, 0.2, 1.0)).collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let means: Vec<f64> = (0..k).map(|_| uniform(&mut rng, -3.0, 3.0)).collect();
        let vars: Vec<f64> = (0..k).map(|_| uniform(&mut rng, 0.05, 0.5)).collect();
        let prior = GaussianMixture::isotropic(
            weights.clone(),
            means.iter().map(|&m| DVector::from_element(1, m)).collect(),
            &vars,
        )?;
        let t = rng.random_range(1..=sched.steps());
        let (a, s) = (sched.alpha(t), sched.sigma(t));
        let x_t = uniform(&mut rng, -3.0, 3.0) * a;
        let cond = prior.condition(&StateVector::new(DVector::from_element(1, x_t), t), &sched)?;

        let lo = -12.0;
        let hi = 12.0;
        let n = 200_001;
        let dx = (hi - lo) / (n - 1) as f64;
        let normal = |x: f64, m: f64, v: f64| (-(x - m) * (x - m) / (2.0 * v)).exp() / (2.0 * PI * v).sqrt();
        let mut mass = vec![0.0; k];
        let mut first = 0.0;
        for i in 0..n {
            let x0 = lo + i as f64 * dx;
            let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            let lik = normal(x_t, a * x0, s * s);
            for c in 0..k {
                let p = w * weights[c] * normal(x0, means[c], vars[c]) * lik;
                mass[c] += p;
                first += p * x0;
            }
        }
        let z: f64 = mass.iter().sum();
        for c in 0..k {
            worst = worst.max((cond.responsibilities()[c] - mass[c] / z).abs());
        }
        let mean_err = (cond.posterior_mean()[0] - first / z).abs() / (first / z).abs().max(1.0);
        worst = worst.max(mean_err);
    }
    Ok((worst, format!("{INSTANCES} one-dimensional mixtures, worst absolute error {worst:.2e}")))
}

fn tmpd_conjugacy(closed_form: ClosedForm) -> Result<(f64, String)> {
    let mut rng = seeded(0x73D);
    let sched = NoiseSchedule::build(ScheduleKind::Cosine, 40, 0.02, 40.0)?;
    let mut worst: f64 = 0.0;
    for _ in 0..INSTANCES {
        let d = rng.random_range(1..=6);
        let rows = rng.random_range(1..=d);
        let mu = standard_normal(&mut rng, d);
        let cov0 = random_spd(&mut rng, d, 0.1);
        let prior = GaussianMixture::new(vec![1.0], vec![mu.clone()], vec![cov0.clone()])?;
        let t = rng.random_range(1..=sched.steps());
        let (a, s) = (sched.alpha(t), sched.sigma(t));
        let x_t = prior.sample(&mut rng) * a + standard_normal(&mut rng, d) * s;
        let h = DMatrix::from_row_slice(rows, d, standard_normal(&mut rng, rows * d).as_slice());
        let y = standard_normal(&mut rng, rows);
        let sigma_y = uniform(&mut rng, 0.05, 1.0);
        let cond = prior.condition(&StateVector::new(x_t.clone(), t), &sched)?;
        let via_tmpd = tmpd_denoise(&cond, &h, &y, sigma_y)?;
        let via_injected = closed_form(
            &cond.posterior_mean(),
            &CovarianceSpec::Dense(cond.conditional_covariance()),
            &h,
            &y,
            sigma_y,
        )?;
        let oracle = conjugate_mean(&mu, &cov0, a, s, &x_t, &h, &y, sigma_y);
        worst = worst.max(rel_err(&via_tmpd, &oracle)).max(rel_err(&via_injected, &oracle));
    }
    Ok((worst, format!("{INSTANCES} Gaussian instances, worst relative error {worst:.2e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conjugate_mean_scalar() {
        // x0 ~ N(0, 1), x_t = x0 + e (var 1), y = x0 + z (var 1): mean (x_t + y) / 3
        let one = DMatrix::identity(1, 1);
        let m = conjugate_mean(
            &DVector::zeros(1),
            &one,
            1.0,
            1.0,
            &DVector::from_element(1, 3.0),
            &one,
            &DVector::from_element(1, 6.0),
            1.0,
        );
        assert!((m[0] - 3.0).abs() < 1e-12);
    }
}
