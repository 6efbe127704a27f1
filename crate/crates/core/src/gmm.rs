//! Analytic Gaussian-mixture prior.
//!
//! Stands in for a trained diffusion model: with a mixture prior the
//! denoiser `E[x0 | x_t]`, the conditional covariance and the conditional
//! density `p(x0 | x_t)` are all available in closed form.
//!
//! Each component covariance is diagonalised once at construction,
//! `Sigma_k = U diag(lambda) U^T`. The per-level posterior covariance
//! `S_k = (Sigma_k^-1 + SNR_t I)^-1` shares the eigenvectors, so conditioning
//! costs two basis changes per component and never forms `S_k` densely unless
//! asked to.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::standard_normal;
use crate::schedule::{NoiseSchedule, StateVector};

const MAX_CONDITION: f64 = 1e12;

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Orthonormal basis plus per-axis variances: `U diag(values) U^T`.
/// `basis == None` means the standard basis.
#[derive(Debug, Clone)]
struct Spectral {
    basis: Option<Arc<DMatrix<f64>>>,
    values: DVector<f64>,
}

impl Spectral {
    fn to_coords(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.basis {
            Some(u) => u.tr_mul(v),
            None => v.clone(),
        }
    }

    fn from_coords(&self, c: DVector<f64>) -> DVector<f64> {
        match &self.basis {
            Some(u) => &**u * c,
            None => c,
        }
    }

    fn dense(&self) -> DMatrix<f64> {
        match &self.basis {
            Some(u) => {
                let scaled = &**u * DMatrix::from_diagonal(&self.values);
                let m = scaled * u.transpose();
                (&m + m.transpose()) * 0.5
            }
            None => DMatrix::from_diagonal(&self.values),
        }
    }

    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let c = self.to_coords(v).component_mul(&self.values);
        self.from_coords(c)
    }

    fn log_det(&self) -> f64 {
        self.values.iter().map(|v| v.ln()).sum()
    }

    /// Log density of `N(center, self)` at `x`, and the gradient in `x`.
    fn log_normal(&self, x: &DVector<f64>, center: &DVector<f64>, with_grad: bool) -> (f64, Option<DVector<f64>>) {
        let d = x.len() as f64;
        let z = self.to_coords(&(x - center));
        let quad: f64 = z.iter().zip(self.values.iter()).map(|(z, s)| z * z / s).sum();
        let lp = -0.5 * quad - 0.5 * self.log_det() - 0.5 * d * (2.0 * PI).ln();
        let grad = with_grad.then(|| -self.from_coords(z.component_div(&self.values)));
        (lp, grad)
    }
}

#[derive(Debug, Clone)]
struct Component {
    weight: f64,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    spectral: Spectral,
    /// `U^T mu`
    mean_coords: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct GaussianMixture {
    dim: usize,
    components: Vec<Component>,
}

impl GaussianMixture {
    /// Validates and factorises the mixture. Weights must sum to one within
    /// `1e-9`; they are then renormalised exactly.
    pub fn new(weights: Vec<f64>, means: Vec<DVector<f64>>, covariances: Vec<DMatrix<f64>>) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::Empty("mixture components"));
        }
        Error::check_dim(k, means.len(), "number of means")?;
        Error::check_dim(k, covariances.len(), "number of covariances")?;
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::BadWeights(format!("weight {w} is not positive")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::BadWeights(format!("weights sum to {total}")));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(Error::Empty("mixture dimension"));
        }

        let mut components = Vec::with_capacity(k);
        for (i, ((w, mean), cov)) in weights.iter().zip(means).zip(covariances).enumerate() {
            Error::check_dim(dim, mean.len(), "component mean")?;
            if cov.nrows() != dim || cov.ncols() != dim {
                return Err(Error::BadCovariance {
                    component: i,
                    reason: format!("shape {}x{}, expected {dim}x{dim}", cov.nrows(), cov.ncols()),
                });
            }
            if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
                return Err(Error::BadCovariance {
                    component: i,
                    reason: "non-finite entries".into(),
                });
            }
            let spectral = factorise(&cov).map_err(|reason| Error::BadCovariance { component: i, reason })?;
            let mean_coords = spectral.to_coords(&mean);
            components.push(Component {
                weight: w / total,
                mean,
                cov,
                spectral,
                mean_coords,
            });
        }
        Ok(GaussianMixture { dim, components })
    }

    pub fn isotropic(weights: Vec<f64>, means: Vec<DVector<f64>>, variances: &[f64]) -> Result<Self> {
        let d = means.first().map(|m| m.len()).unwrap_or(0);
        let covs = variances.iter().map(|&v| DMatrix::identity(d, d) * v).collect();
        Self::new(weights, means, covs)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    pub fn means(&self) -> Vec<&DVector<f64>> {
        self.components.iter().map(|c| &c.mean).collect()
    }

    pub fn mean(&self, k: usize) -> &DVector<f64> {
        &self.components[k].mean
    }

    pub fn covariance(&self, k: usize) -> &DMatrix<f64> {
        &self.components[k].cov
    }

    /// Mixture mean `sum_k pi_k mu_k`.
    pub fn overall_mean(&self) -> DVector<f64> {
        self.components
            .iter()
            .fold(DVector::zeros(self.dim), |acc, c| acc + &c.mean * c.weight)
    }

    /// Same mixture with components reordered: new component `i` is old
    /// component `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        Error::check_dim(self.len(), perm.len(), "permutation length")?;
        let mut seen = vec![false; self.len()];
        for &p in perm {
            if p >= self.len() || std::mem::replace(&mut seen[p], true) {
                return Err(Error::InvalidParameter(format!("{perm:?} is not a permutation")));
            }
        }
        Ok(GaussianMixture {
            dim: self.dim,
            components: perm.iter().map(|&p| self.components[p].clone()).collect(),
        })
    }

    /// `log pi_k + log N(x; mu_k, Sigma_k)` for every component.
    pub fn component_log_densities(&self, x: &DVector<f64>) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| c.weight.ln() + c.spectral.log_normal(x, &c.mean, false).0)
            .collect()
    }

    /// `log sum_k pi_k N(x; mu_k, Sigma_k)`.
    pub fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        Error::check_dim(self.dim, x.len(), "prior_log_density")?;
        Ok(log_sum_exp(&self.component_log_densities(x)))
    }

    /// Log density and its gradient (the prior score).
    pub fn log_density_and_grad(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        Error::check_dim(self.dim, x.len(), "prior_log_density")?;
        let parts: Vec<(f64, DVector<f64>)> = self
            .components
            .iter()
            .map(|c| {
                let (lp, g) = c.spectral.log_normal(x, &c.mean, true);
                (c.weight.ln() + lp, g.expect("gradient requested"))
            })
            .collect();
        Ok(mix_log_parts(parts, self.dim))
    }

    /// Categorical draw of the component, then a Gaussian draw from it.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = self.len() - 1;
        for (i, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                pick = i;
                break;
            }
        }
        let c = &self.components[pick];
        let z = standard_normal(rng, self.dim).component_mul(&c.spectral.values.map(f64::sqrt));
        &c.mean + c.spectral.from_coords(z)
    }

    /// Posterior `p(x0 | x_t)` under the forward kernel
    /// `N(x_t; alpha_t x0, sigma_t^2 I)`.
    ///
    /// At `t = 0` the posterior is a point mass at `x_t`; responsibilities are
    /// one-hot on the component with the largest weighted density there and
    /// all component covariances are zero.
    pub fn condition(&self, x_t: &StateVector, sched: &NoiseSchedule) -> Result<ConditionalPosterior> {
        Error::check_dim(self.dim, x_t.dim(), "condition x_t")?;
        let t = x_t.time_index;
        if t > sched.steps() {
            return Err(Error::InvalidParameter(format!("time index {t} beyond N = {}", sched.steps())));
        }
        if t == 0 {
            return Ok(self.condition_clean(&x_t.values));
        }
        let a = sched.alpha(t);
        let s2 = sched.sigma(t).powi(2);
        let half_log_2pi = 0.5 * (2.0 * PI).ln();

        let mut log_marg = Vec::with_capacity(self.len());
        let mut means = Vec::with_capacity(self.len());
        let mut spectra = Vec::with_capacity(self.len());
        for c in &self.components {
            let lambda = &c.spectral.values;
            let coords = c.spectral.to_coords(&x_t.values);
            let mut lp = c.weight.ln();
            let mut post = DVector::zeros(self.dim);
            let mut m = DVector::zeros(self.dim);
            for i in 0..self.dim {
                let l = lambda[i];
                let denom = s2 + a * a * l;
                let z = coords[i] - a * c.mean_coords[i];
                lp -= 0.5 * z * z / denom + 0.5 * denom.ln() + half_log_2pi;
                post[i] = l * s2 / denom;
                m[i] = (s2 * c.mean_coords[i] + a * l * coords[i]) / denom;
            }
            log_marg.push(lp);
            means.push(c.spectral.from_coords(m));
            spectra.push(Spectral {
                basis: c.spectral.basis.clone(),
                values: post,
            });
        }
        let norm = log_sum_exp(&log_marg);
        let log_resp: Vec<f64> = log_marg.iter().map(|l| l - norm).collect();
        Ok(ConditionalPosterior {
            responsibilities: log_resp.iter().map(|l| l.exp()).collect(),
            log_responsibilities: log_resp,
            component_means: means,
            spectra,
            time_index: t,
        })
    }

    fn condition_clean(&self, x: &DVector<f64>) -> ConditionalPosterior {
        let scores = self.component_log_densities(x);
        let best = argmax_first(&scores);
        let k = self.len();
        let mut log_resp = vec![f64::NEG_INFINITY; k];
        log_resp[best] = 0.0;
        ConditionalPosterior {
            responsibilities: log_resp.iter().map(|l| l.exp()).collect(),
            log_responsibilities: log_resp,
            component_means: vec![x.clone(); k],
            spectra: self
                .components
                .iter()
                .map(|c| Spectral {
                    basis: c.spectral.basis.clone(),
                    values: DVector::zeros(self.dim),
                })
                .collect(),
            time_index: 0,
        }
    }
}

fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn mix_log_parts(parts: Vec<(f64, DVector<f64>)>, dim: usize) -> (f64, DVector<f64>) {
    let logs: Vec<f64> = parts.iter().map(|p| p.0).collect();
    let total = log_sum_exp(&logs);
    let grad = parts.into_iter().fold(DVector::zeros(dim), |acc, (lp, g)| {
        let w = (lp - total).exp();
        if w > 0.0 {
            acc + g * w
        } else {
            acc
        }
    });
    (total, grad)
}

fn factorise(cov: &DMatrix<f64>) -> std::result::Result<Spectral, String> {
    let d = cov.nrows();
    let scale = cov.amax().max(f64::MIN_POSITIVE);
    let asym = (cov - cov.transpose()).amax();
    if asym > 1e-10 * scale {
        return Err(format!("not symmetric (max asymmetry {asym:e})"));
    }
    let is_diagonal = (0..d).all(|i| (0..d).all(|j| i == j || cov[(i, j)] == 0.0));
    let spectral = if is_diagonal {
        Spectral {
            basis: None,
            values: cov.diagonal(),
        }
    } else {
        let sym = (cov + cov.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        Spectral {
            basis: Some(Arc::new(eig.eigenvectors)),
            values: eig.eigenvalues,
        }
    };
    let min = spectral.values.min();
    let max = spectral.values.max();
    if !(min > 0.0) {
        return Err(format!("minimum eigenvalue {min:e} is not positive"));
    }
    if max / min > MAX_CONDITION {
        return Err(format!("condition number {:e} exceeds {MAX_CONDITION:e}", max / min));
    }
    Ok(spectral)
}

/// `p(x0 | x_t) = sum_k r_k N(x0; m_k, S_k)`.
#[derive(Debug, Clone)]
pub struct ConditionalPosterior {
    responsibilities: Vec<f64>,
    log_responsibilities: Vec<f64>,
    component_means: Vec<DVector<f64>>,
    spectra: Vec<Spectral>,
    time_index: usize,
}

impl ConditionalPosterior {
    pub fn responsibilities(&self) -> &[f64] {
        &self.responsibilities
    }

    pub fn log_responsibilities(&self) -> &[f64] {
        &self.log_responsibilities
    }

    pub fn component_means(&self) -> &[DVector<f64>] {
        &self.component_means
    }

    pub fn time_index(&self) -> usize {
        self.time_index
    }

    pub fn len(&self) -> usize {
        self.component_means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.component_means.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.component_means[0].len()
    }

    /// Dense `S_k`.
    pub fn component_cov(&self, k: usize) -> DMatrix<f64> {
        self.spectra[k].dense()
    }

    /// Smallest eigenvalue over all `S_k`.
    pub fn min_component_variance(&self) -> f64 {
        self.spectra.iter().map(|s| s.values.min()).fold(f64::INFINITY, f64::min)
    }

    /// Largest eigenvalue over all `S_k`.
    pub fn max_component_variance(&self) -> f64 {
        self.spectra.iter().map(|s| s.values.max()).fold(0.0, f64::max)
    }

    /// The ideal denoiser `E[x0 | x_t] = sum_k r_k m_k` (mode-averaging).
    pub fn posterior_mean(&self) -> DVector<f64> {
        self.component_means
            .iter()
            .zip(&self.responsibilities)
            .fold(DVector::zeros(self.dim()), |acc, (m, r)| {
                if *r > 0.0 {
                    acc + m * *r
                } else {
                    acc
                }
            })
    }

    /// `Cov[x0 | x_t] = sum_k r_k (S_k + m_k m_k^T) - m m^T`, evaluated in the
    /// centred form `sum_k r_k S_k + sum_k r_k (m_k - m)(m_k - m)^T`.
    pub fn conditional_covariance(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mean = self.posterior_mean();
        let mut cov = DMatrix::zeros(d, d);
        for ((r, mk), spec) in self.responsibilities.iter().zip(&self.component_means).zip(&self.spectra) {
            if *r == 0.0 {
                continue;
            }
            cov += spec.dense() * *r;
            let dev = mk - &mean;
            cov.ger(*r, &dev, &dev, 1.0);
        }
        (&cov + cov.transpose()) * 0.5
    }

    /// `Cov[x0 | x_t] v` without forming the matrix.
    pub fn covariance_apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let mean = self.posterior_mean();
        let mut out = DVector::zeros(self.dim());
        for ((r, mk), spec) in self.responsibilities.iter().zip(&self.component_means).zip(&self.spectra) {
            if *r == 0.0 {
                continue;
            }
            out += spec.apply(v) * *r;
            let dev = mk - &mean;
            let proj = dev.dot(v);
            out += dev * (*r * proj);
        }
        out
    }

    /// Component with the highest posterior peak density
    /// `r_k / sqrt((2 pi)^d det S_k)`; ties go to the lowest index.
    pub fn local_map_component(&self) -> (usize, DVector<f64>) {
        let d = self.dim() as f64;
        let scores: Vec<f64> = self
            .log_responsibilities
            .iter()
            .zip(&self.spectra)
            .map(|(lr, s)| {
                if self.time_index == 0 {
                    *lr
                } else {
                    lr - 0.5 * s.log_det() - 0.5 * d * (2.0 * PI).ln()
                }
            })
            .collect();
        let k = argmax_first(&scores);
        (k, self.component_means[k].clone())
    }

    /// `log sum_k r_k N(x0; m_k, S_k)` and its gradient in `x0`.
    /// Undefined for the point-mass posterior at `t = 0`.
    pub fn log_density_and_grad(&self, x0: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        Error::check_dim(self.dim(), x0.len(), "conditional_log_density")?;
        if self.time_index == 0 {
            return Err(Error::InvalidParameter(
                "conditional density at t = 0 is a point mass".into(),
            ));
        }
        let parts: Vec<(f64, DVector<f64>)> = self
            .log_responsibilities
            .iter()
            .zip(&self.component_means)
            .zip(&self.spectra)
            .filter(|((lr, _), _)| lr.is_finite())
            .map(|((lr, m), s)| {
                let (lp, g) = s.log_normal(x0, m, true);
                (lr + lp, g.expect("gradient requested"))
            })
            .collect();
        Ok(mix_log_parts(parts, self.dim()))
    }
}
