use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::Rng;

use super::{finish, guard, prepare, Family, Recorder, RunResult, SolverConfig};
use crate::error::Result;
use crate::gmm::GaussianMixture;
use crate::operators::{ForwardOperator, Measurement};
use crate::rng::standard_normal;
use crate::schedule::{ddim_transition, initial_state, NoiseSchedule};

pub(crate) const WEIGHT_EPS: f64 = 1e-6;

/// `r = sigma^2 / (sigma^2 + k1^2 + 1e-6)`.
pub fn lmaps_weight(sigma_t: f64, k1: f64) -> f64 {
    let s2 = sigma_t * sigma_t;
    s2 / (s2 + k1 * k1 + WEIGHT_EPS)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerLoopOutcome {
    pub x: DVector<f64>,
    pub iterations: usize,
    pub misfit_start: f64,
    pub misfit_end: f64,
    /// Reformulated objective after each update, when requested.
    pub loss_curve: Option<Vec<f64>>,
}

/// Plain gradient descent on `(1-r)/2 ||x - x_hat||^2 + r k2 ||y - H(x)||^2`
/// started at `x_hat`.
#[allow(clippy::too_many_arguments)]
pub fn lmaps_inner_loop(
    x_hat: &DVector<f64>,
    op: &ForwardOperator,
    y: &Measurement,
    r: f64,
    k2: f64,
    learning_rate: f64,
    max_iters: usize,
    tol: Option<f64>,
    record: bool,
) -> Result<InnerLoopOutcome> {
    let mut x = x_hat.clone();
    let misfit_start = op.misfit(&x, y)?;
    let mut curve = record.then(Vec::new);
    let mut iterations = 0;
    let mut misfit = misfit_start;
    for it in 0..max_iters {
        let grad = (&x - x_hat) * (1.0 - r) + op.misfit_gradient(&x, y)? * (r * k2);
        if let Some(tol) = tol {
            if grad.norm() <= tol {
                break;
            }
        }
        x.axpy(-learning_rate, &grad, 1.0);
        guard("lmaps", 0, it + 1, &x)?;
        iterations = it + 1;
        if curve.is_some() || it + 1 == max_iters {
            misfit = op.misfit(&x, y)?;
        }
        if let Some(c) = curve.as_mut() {
            c.push(0.5 * (1.0 - r) * (&x - x_hat).norm_squared() + r * k2 * misfit);
        }
    }
    if iterations != max_iters {
        misfit = op.misfit(&x, y)?;
    }
    Ok(InnerLoopOutcome {
        x,
        iterations,
        misfit_start,
        misfit_end: misfit,
        loss_curve: curve,
    })
}

/// Local MAP approximate sampling: denoise, refine the estimate with `K`
/// gradient steps on the reformulated objective, then move to the next
/// level with the configured transition (pure re-noising by default).
pub fn run_lmaps<R: Rng + ?Sized>(
    prior: &GaussianMixture,
    sched: &NoiseSchedule,
    op: &ForwardOperator,
    y: &Measurement,
    cfg: &SolverConfig,
    rng: &mut R,
) -> Result<RunResult> {
    let sched = prepare(prior, sched, Some((op, y)), cfg, Family::Lmaps)?;
    let n = sched.steps();
    let mut x = initial_state(&sched, prior.dim(), rng);
    let mut recorder = Recorder::new(cfg, n);
    recorder.observe(&x);
    let mut curves = cfg.record_inner_loss.then(Vec::new);
    let mut non_increasing = 0usize;
    for step in (1..=n).rev() {
        let x_hat = prior.condition(&x, &sched)?.posterior_mean();
        let r = lmaps_weight(sched.sigma(step), cfg.k1);
        let inner = lmaps_inner_loop(
            &x_hat,
            op,
            y,
            r,
            cfg.k2,
            cfg.learning_rate,
            cfg.inner_steps,
            cfg.inner_tol,
            cfg.record_inner_loss,
        )
        .map_err(|e| match e {
            crate::Error::NonFinite { iteration, .. } => crate::Error::NonFinite {
                solver: "lmaps",
                step,
                iteration,
            },
            crate::Error::Diverged { norm, .. } => crate::Error::Diverged {
                solver: "lmaps",
                step,
                norm,
            },
            other => other,
        })?;
        if inner.misfit_end <= inner.misfit_start {
            non_increasing += 1;
        }
        if let (Some(all), Some(c)) = (curves.as_mut(), inner.loss_curve) {
            all.push(c);
        }
        let eps = standard_normal(rng, prior.dim());
        x = ddim_transition(&inner.x, &x, &eps, &sched)?;
        guard("lmaps", step, 0, &x.values)?;
        recorder.observe(&x);
    }
    let mut metrics = BTreeMap::new();
    metrics.insert("inner_misfit_nonincrease_fraction".to_string(), non_increasing as f64 / n as f64);
    Ok(finish(x, recorder, curves, metrics, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_properties() {
        assert!((lmaps_weight(0.22, 0.22) - 0.5).abs() < 1e-4);
        let sigmas = [0.001, 0.01, 0.1, 1.0, 10.0, 100.0];
        let weights: Vec<f64> = sigmas.iter().map(|&s| lmaps_weight(s, 0.5)).collect();
        assert!(weights.iter().all(|&w| w > 0.0 && w < 1.0));
        assert!(weights.windows(2).all(|w| w[0] < w[1]));
    }
}
