//! Quadratic local-MAP problems with a linear operator and their exact
//! minimisers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Gaussian approximation `N(m, Sigma)` of `p(x0 | x_t)`.
#[derive(Debug, Clone, PartialEq)]
pub enum CovarianceSpec {
    /// `Sigma = v I`.
    Isotropic(f64),
    Dense(DMatrix<f64>),
}

impl CovarianceSpec {
    pub fn to_dense(&self, dim: usize) -> DMatrix<f64> {
        match self {
            CovarianceSpec::Isotropic(v) => DMatrix::identity(dim, dim) * *v,
            CovarianceSpec::Dense(s) => s.clone(),
        }
    }
}

/// `Sigma = lambda sigma_y^2 I`, the covariance implied by regularised
/// least squares with trade-off `lambda`.
pub fn map_lambda(lambda: f64, sigma_y: f64) -> CovarianceSpec {
    CovarianceSpec::Isotropic(lambda * sigma_y * sigma_y)
}

/// `Sigma = (k / SNR_t) I`.
pub fn isotropic_from_k(k: f64, snr: f64) -> CovarianceSpec {
    CovarianceSpec::Isotropic(k / snr)
}

/// `k` implied by reformulated parameters: `k = 2 k2 alpha^2 sigma_y^2 / k1^2`.
pub fn k_from_reformulated(k1: f64, k2: f64, sigma_y: f64, alpha: f64) -> f64 {
    2.0 * k2 * alpha * alpha * sigma_y * sigma_y / (k1 * k1)
}

/// `k2` that makes the reformulated objective (including its `1e-6`
/// stabiliser) share a minimiser with the isotropic objective of scale `k`.
pub fn k2_for_isotropic(k: f64, k1: f64, sigma_y: f64, alpha: f64) -> f64 {
    k * (k1 * k1 + super::lmaps::WEIGHT_EPS) / (2.0 * alpha * alpha * sigma_y * sigma_y)
}

/// Data-fidelity weight `mu_t = sigma_t^2 / (sigma_t^2 + k1^2)`.
pub fn fidelity_weight(sigma_t: f64, k1: f64) -> f64 {
    let s2 = sigma_t * sigma_t;
    s2 / (s2 + k1 * k1)
}

/// `x* = m + Sigma H^T (H Sigma H^T + sigma_y^2 I)^{-1} (y - H m)`.
pub fn solve_local_map_closed_form(
    m: &DVector<f64>,
    cov: &CovarianceSpec,
    h: &DMatrix<f64>,
    y: &DVector<f64>,
    sigma_y: f64,
) -> Result<DVector<f64>> {
    let d = m.len();
    Error::check_dim(d, h.ncols(), "closed form: operator columns")?;
    Error::check_dim(h.nrows(), y.len(), "closed form: measurement")?;
    let sigma_ht = match cov {
        CovarianceSpec::Isotropic(v) => h.transpose() * *v,
        CovarianceSpec::Dense(s) => {
            Error::check_dim(d, s.nrows(), "closed form: covariance")?;
            s * h.transpose()
        }
    };
    let mut system = h * &sigma_ht;
    for i in 0..system.nrows() {
        system[(i, i)] += sigma_y * sigma_y;
    }
    let system = (&system + system.transpose()) * 0.5;
    let residual = y - h * m;
    let chol = system.cholesky().ok_or(Error::Singular("H Sigma H^T + sigma_y^2 I"))?;
    Ok(m + sigma_ht * chol.solve(&residual))
}

/// Minimiser of `a/2 ||x - m||^2 + b/2 ||y - H x||^2`, i.e. the solution of
/// `(a I + b H^T H) x = a m + b H^T y`.
pub fn quadratic_minimiser(
    a: f64,
    b: f64,
    m: &DVector<f64>,
    h: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<DVector<f64>> {
    Error::check_dim(m.len(), h.ncols(), "quadratic minimiser: operator")?;
    Error::check_dim(h.nrows(), y.len(), "quadratic minimiser: measurement")?;
    let mut lhs = h.tr_mul(h) * b;
    for i in 0..m.len() {
        lhs[(i, i)] += a;
    }
    let rhs = m * a + h.tr_mul(y) * b;
    let chol = lhs.cholesky().ok_or(Error::Singular("a I + b H^T H"))?;
    Ok(chol.solve(&rhs))
}

/// `1/2 (x - m)^T Sigma^{-1} (x - m) + ||y - Hx||^2 / (2 sigma_y^2)`.
pub fn objective_local_map(
    x: &DVector<f64>,
    m: &DVector<f64>,
    cov: &CovarianceSpec,
    h: &DMatrix<f64>,
    y: &DVector<f64>,
    sigma_y: f64,
) -> Result<f64> {
    let dev = x - m;
    let prior = match cov {
        CovarianceSpec::Isotropic(v) => dev.norm_squared() / v,
        CovarianceSpec::Dense(s) => {
            let chol = s.clone().cholesky().ok_or(Error::Singular("Sigma"))?;
            dev.dot(&chol.solve(&dev))
        }
    };
    Ok(0.5 * prior + (y - h * x).norm_squared() / (2.0 * sigma_y * sigma_y))
}

/// `SNR_t / (2k) ||x - m||^2 + ||y - Hx||^2 / (2 sigma_y^2)`.
pub fn objective_isotropic(
    x: &DVector<f64>,
    m: &DVector<f64>,
    k: f64,
    snr: f64,
    h: &DMatrix<f64>,
    y: &DVector<f64>,
    sigma_y: f64,
) -> f64 {
    snr / (2.0 * k) * (x - m).norm_squared() + (y - h * x).norm_squared() / (2.0 * sigma_y * sigma_y)
}

/// `(1 - r)/2 ||x - m||^2 + r k2 ||y - Hx||^2`, with `r` the LMAPS weight.
pub fn objective_reformulated(x: &DVector<f64>, m: &DVector<f64>, r: f64, k2: f64, h: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    0.5 * (1.0 - r) * (x - m).norm_squared() + r * k2 * (y - h * x).norm_squared()
}

/// `1/2 ||y - Hx||^2 + 1/(2 lambda) ||x - m||^2`.
pub fn objective_regularised(x: &DVector<f64>, m: &DVector<f64>, lambda: f64, h: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    0.5 * (y - h * x).norm_squared() + 0.5 / lambda * (x - m).norm_squared()
}
