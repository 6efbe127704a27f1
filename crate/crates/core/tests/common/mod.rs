#![allow(dead_code)]

use lmaps_core::{GaussianMixture, NoiseSchedule, ScheduleKind};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn v(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

pub fn randn<R: Rng>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_iterator(rows, cols, (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

pub fn random_spd<R: Rng>(rng: &mut R, d: usize, floor: f64) -> DMatrix<f64> {
    let a = random_matrix(rng, d, d);
    &a * a.transpose() / d as f64 + DMatrix::identity(d, d) * floor
}

pub fn cosine(steps: usize) -> NoiseSchedule {
    NoiseSchedule::build(ScheduleKind::Cosine, steps, 0.002, 80.0).unwrap()
}

pub fn gaussian(mean: DVector<f64>, cov: DMatrix<f64>) -> GaussianMixture {
    GaussianMixture::new(vec![1.0], vec![mean], vec![cov]).unwrap()
}

/// Mean of `N(mean, cov)` conditioned on `y = H x + N(0, sigma_y^2 I)`,
/// written in information form so it shares no algebra with the gain form.
pub fn conjugate_mean(mean: &DVector<f64>, cov: &DMatrix<f64>, h: &DMatrix<f64>, y: &DVector<f64>, sigma_y: f64) -> DVector<f64> {
    let prec = cov.clone().try_inverse().unwrap();
    let s2 = sigma_y * sigma_y;
    let post_prec = &prec + h.transpose() * h / s2;
    let rhs = &prec * mean + h.transpose() * y / s2;
    post_prec.lu().solve(&rhs).unwrap()
}

/// `p(x0 | x_t)` for a single Gaussian prior: the conjugate update with
/// `H = alpha I` and noise `sigma`.
pub fn gaussian_denoiser(mean: &DVector<f64>, cov: &DMatrix<f64>, x_t: &DVector<f64>, alpha: f64, sigma: f64) -> (DVector<f64>, DMatrix<f64>) {
    let d = mean.len();
    let prec = cov.clone().try_inverse().unwrap();
    let post_prec = &prec + DMatrix::identity(d, d) * (alpha * alpha / (sigma * sigma));
    let post_cov = post_prec.try_inverse().unwrap();
    let m = &post_cov * (&prec * mean + x_t * (alpha / (sigma * sigma)));
    (m, post_cov)
}

pub fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-12)
}

pub fn sample_mean(xs: &[DVector<f64>]) -> DVector<f64> {
    xs.iter().fold(DVector::zeros(xs[0].len()), |acc, x| acc + x) / xs.len() as f64
}

pub fn sample_cov(xs: &[DVector<f64>]) -> DMatrix<f64> {
    let m = sample_mean(xs);
    let d = m.len();
    let mut c = DMatrix::zeros(d, d);
    for x in xs {
        let z = x - &m;
        c += &z * z.transpose();
    }
    c / (xs.len() - 1) as f64
}
