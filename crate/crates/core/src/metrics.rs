//! Reconstruction quality and mode-structure statistics.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::gmm::GaussianMixture;
use crate::operators::{ForwardOperator, Measurement};
use crate::rng::seeded;
use crate::solvers::RunResult;

/// Reported PSNR when the two signals are identical.
pub const PSNR_CAP_DB: f64 = 99.0;

/// Prior draws used to estimate the density threshold.
pub const THRESHOLD_DRAWS: usize = 100_000;

pub fn psnr(x: &DVector<f64>, x_ref: &DVector<f64>, max_val: f64) -> Result<f64> {
    Error::check_dim(x_ref.len(), x.len(), "psnr")?;
    if !(max_val > 0.0) {
        return Err(Error::InvalidParameter(format!("max_val {max_val} must be positive")));
    }
    if x.is_empty() {
        return Err(Error::Empty("psnr input"));
    }
    let mse = (x - x_ref).norm_squared() / x.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok(10.0 * (max_val * max_val / mse).log10())
}

/// Log-density level below which a point counts as lying in a low-density
/// region: the `quantile` quantile of `log p(x)` over fresh prior draws.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityThreshold {
    pub quantile: f64,
    pub log_density: f64,
}

impl DensityThreshold {
    pub fn estimate(prior: &GaussianMixture, quantile: f64, draws: usize, seed: u64) -> Result<Self> {
        if !(quantile > 0.0 && quantile < 1.0) {
            return Err(Error::InvalidParameter(format!("quantile {quantile} outside (0, 1)")));
        }
        if draws == 0 {
            return Err(Error::Empty("threshold draws"));
        }
        let mut rng = seeded(seed);
        let mut values: Vec<f64> = (0..draws)
            .map(|_| {
                let x = prior.sample(&mut rng);
                prior.log_density(&x).expect("prior draw has prior dimension")
            })
            .collect();
        values.sort_by(f64::total_cmp);
        let pos = quantile * (draws - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        let frac = pos - lo as f64;
        let log_density = values[lo] + frac * (values[hi] - values[lo]);
        Ok(DensityThreshold { quantile, log_density })
    }
}

/// Fraction of samples whose prior log-density is below the threshold.
pub fn low_density_fraction(samples: &[DVector<f64>], prior: &GaussianMixture, threshold: &DensityThreshold) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("sample list"));
    }
    let mut below = 0usize;
    for s in samples {
        if prior.log_density(s)? < threshold.log_density {
            below += 1;
        }
    }
    Ok(below as f64 / samples.len() as f64)
}

/// Normalised histogram of `argmax_k pi_k N(x; mu_k, Sigma_k)`.
pub fn mode_assignment(samples: &[DVector<f64>], prior: &GaussianMixture) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::Empty("sample list"));
    }
    let mut counts = vec![0usize; prior.len()];
    for s in samples {
        Error::check_dim(prior.dim(), s.len(), "mode assignment sample")?;
        let dens = prior.component_log_densities(s);
        let mut best = 0;
        for (k, v) in dens.iter().enumerate() {
            if *v > dens[best] {
                best = k;
            }
        }
        counts[best] += 1;
    }
    Ok(counts.iter().map(|&c| c as f64 / samples.len() as f64).collect())
}

/// Pooled two-proportion z statistic for `p1 > p2`.
pub fn two_proportion_z(p1: f64, n1: usize, p2: f64, n2: usize) -> f64 {
    let (n1f, n2f) = (n1 as f64, n2 as f64);
    let pooled = (p1 * n1f + p2 * n2f) / (n1f + n2f);
    let se = (pooled * (1.0 - pooled) * (1.0 / n1f + 1.0 / n2f)).sqrt();
    if se == 0.0 {
        return if p1 > p2 {
            f64::INFINITY
        } else if p1 < p2 {
            f64::NEG_INFINITY
        } else {
            0.0
        };
    }
    (p1 - p2) / se
}

pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub solver: String,
    pub psnr_db: f64,
    pub misfit: f64,
    pub low_density_fraction: f64,
    pub mode_histogram: Vec<f64>,
    pub prior_logdensity_mean: f64,
    pub n_samples: usize,
}

/// One report per solver, in input order.
pub fn compare_solvers(
    results: &[(String, Vec<RunResult>)],
    prior: &GaussianMixture,
    x_true: &DVector<f64>,
    op: &ForwardOperator,
    y: &Measurement,
    threshold: &DensityThreshold,
    max_val: f64,
) -> Result<Vec<MetricReport>> {
    let mut rows = Vec::with_capacity(results.len());
    for (solver, runs) in results {
        if runs.is_empty() {
            return Err(Error::Empty("solver results"));
        }
        let samples: Vec<DVector<f64>> = runs.iter().map(|r| r.x0_hat.values.clone()).collect();
        let n = samples.len() as f64;
        let mut psnr_sum = 0.0;
        let mut misfit_sum = 0.0;
        let mut logp_sum = 0.0;
        for s in &samples {
            psnr_sum += psnr(s, x_true, max_val)?;
            misfit_sum += op.misfit(s, y)?;
            logp_sum += prior.log_density(s)?;
        }
        rows.push(MetricReport {
            solver: solver.clone(),
            psnr_db: psnr_sum / n,
            misfit: misfit_sum / n,
            low_density_fraction: low_density_fraction(&samples, prior, threshold)?,
            mode_histogram: mode_assignment(&samples, prior)?,
            prior_logdensity_mean: logp_sum / n,
            n_samples: samples.len(),
        });
    }
    Ok(rows)
}
