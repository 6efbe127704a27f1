use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::closed_form::{solve_local_map_closed_form, CovarianceSpec};
use super::{finish, guard, prepare, Family, Recorder, RunResult, SolverConfig};
use crate::error::{Error, Result};
use crate::gmm::{ConditionalPosterior, GaussianMixture};
use crate::operators::{ForwardOperator, Measurement};
use crate::rng::standard_normal;
use crate::schedule::{ddim_transition, initial_state, NoiseSchedule, StateVector};

/// Generic reverse loop: `xi_t = denoise(t, x_t)`, then the DDIM kernel.
fn reverse_loop<R: Rng + ?Sized>(
    prior: &GaussianMixture,
    sched: &NoiseSchedule,
    cfg: &SolverConfig,
    solver: &'static str,
    rng: &mut R,
    mut denoise: impl FnMut(usize, &StateVector, &ConditionalPosterior, &mut R) -> Result<DVector<f64>>,
) -> Result<RunResult> {
    let n = sched.steps();
    let mut x = initial_state(sched, prior.dim(), rng);
    let mut recorder = Recorder::new(cfg, n);
    recorder.observe(&x);
    for step in (1..=n).rev() {
        let cond = prior.condition(&x, sched)?;
        let xi = denoise(step, &x, &cond, rng)?;
        guard(solver, step, 0, &xi)?;
        let eps = standard_normal(rng, prior.dim());
        x = ddim_transition(&xi, &x, &eps, sched)?;
        guard(solver, step, 0, &x.values)?;
        recorder.observe(&x);
    }
    Ok(finish(x, recorder, None, BTreeMap::new(), cfg))
}

/// Ancestral/DDIM sampling of the prior with the exact denoiser.
pub fn run_unconditional<R: Rng + ?Sized>(
    prior: &GaussianMixture,
    sched: &NoiseSchedule,
    cfg: &SolverConfig,
    rng: &mut R,
) -> Result<RunResult> {
    let sched = prepare(prior, sched, None, cfg, Family::Unconditional)?;
    reverse_loop(prior, &sched, cfg, "unconditional", rng, |_, _, cond, _| Ok(cond.posterior_mean()))
}

/// Diffusion posterior sampling. The chain rule through the denoiser uses
/// `d m / d x_t = (alpha_t / sigma_t^2) Cov[x0 | x_t]`, so the guided
/// estimate is `m - scale Cov grad ||y - H(m)||^2 / (2 sigma_y^2)`.
pub fn run_dps<R: Rng + ?Sized>(
    prior: &GaussianMixture,
    sched: &NoiseSchedule,
    op: &ForwardOperator,
    y: &Measurement,
    cfg: &SolverConfig,
    rng: &mut R,
) -> Result<RunResult> {
    let sched = prepare(prior, sched, Some((op, y)), cfg, Family::Dps)?;
    let sy2 = op.noise_std().powi(2);
    reverse_loop(prior, &sched, cfg, "dps", rng, |step, _, cond, _| {
        let m = cond.posterior_mean();
        if cfg.guidance_scale == 0.0 {
            return Ok(m);
        }
        let g = op.misfit_gradient(&m, y)?;
        guard("dps", step, 0, &g)?;
        let push = cond.covariance_apply(&g);
        Ok(m - push * (cfg.guidance_scale / (2.0 * sy2)))
    })
}

/// Langevin step for level `t`: the configured multiplier times the
/// stability bound `1 / L` of the potential, with `L` bounded by
/// `1 / s_min + ||J||^2 / sigma_y^2`.
fn langevin_step(cond: &ConditionalPosterior, op: &ForwardOperator, cfg: &SolverConfig) -> f64 {
    let s_min = cond.min_component_variance();
    let sy2 = op.noise_std().powi(2);
    cfg.langevin_step_size * s_min / (1.0 + s_min * op.jacobian_norm_sq() / sy2)
}

/// Decoupled annealing: unadjusted Langevin on
/// `-log p(x0 | x_t) + ||y - H(x0)||^2 / (2 sigma_y^2)` from the posterior
/// mean, then re-noise the endpoint.
pub fn run_daps<R: Rng + ?Sized>(
    prior: &GaussianMixture,
    sched: &NoiseSchedule,
    op: &ForwardOperator,
    y: &Measurement,
    cfg: &SolverConfig,
    rng: &mut R,
) -> Result<RunResult> {
    let sched = prepare(prior, sched, Some((op, y)), cfg, Family::Daps)?;
    reverse_loop(prior, &sched, cfg, "daps", rng, |step, _, cond, rng| {
        daps_langevin(cond, op, y, cfg, rng).map_err(|e| match e {
            Error::NonFinite { iteration, .. } => Error::NonFinite {
                solver: "daps",
                step,
                iteration,
            },
            Error::Diverged { norm, .. } => Error::Diverged {
                solver: "daps",
                step,
                norm,
            },
            other => other,
        })
    })
}

/// The Langevin stage of one DAPS step: `langevin_steps` unadjusted updates
/// targeting `p(x0 | x_t, y)`, started at the posterior mean.
pub fn daps_langevin<R: Rng + ?Sized>(
    cond: &ConditionalPosterior,
    op: &ForwardOperator,
    y: &Measurement,
    cfg: &SolverConfig,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let sy2 = op.noise_std().powi(2);
    let mut x0 = cond.posterior_mean();
    let h = langevin_step(cond, op, cfg);
    if cfg.langevin_steps == 0 || h == 0.0 {
        return Ok(x0);
    }
    let noise_scale = (2.0 * h).sqrt();
    for it in 0..cfg.langevin_steps {
        let (_, score) = cond.log_density_and_grad(&x0)?;
        let grad_u = op.misfit_gradient(&x0, y)? / (2.0 * sy2) - score;
        let xi = standard_normal(rng, x0.len());
        x0.axpy(-h, &grad_u, 1.0);
        x0.axpy(noise_scale, &xi, 1.0);
        guard("daps", 0, it + 1, &x0)?;
    }
    Ok(x0)
}

/// Exact-covariance closed-form local MAP for one level.
pub fn tmpd_denoise(cond: &ConditionalPosterior, h: &DMatrix<f64>, y: &DVector<f64>, sigma_y: f64) -> Result<DVector<f64>> {
    let cov = CovarianceSpec::Dense(cond.conditional_covariance());
    solve_local_map_closed_form(&cond.posterior_mean(), &cov, h, y, sigma_y)
}

/// Tweedie moment projection: per level, the Gaussian-conditioned estimate
/// with the exact conditional covariance, then the DDIM kernel.
pub fn run_tmpd<R: Rng + ?Sized>(
    prior: &GaussianMixture,
    sched: &NoiseSchedule,
    op: &ForwardOperator,
    y: &Measurement,
    cfg: &SolverConfig,
    rng: &mut R,
) -> Result<RunResult> {
    let sched = prepare(prior, sched, Some((op, y)), cfg, Family::Tmpd)?;
    let h = op.linear_matrix()?;
    if h.nrows() != y.dim() {
        return Err(Error::DimensionMismatch {
            expected: h.nrows(),
            actual: y.dim(),
            context: "tmpd measurement",
        });
    }
    let sigma_y = op.noise_std();
    reverse_loop(prior, &sched, cfg, "tmpd", rng, |_, _, cond, _| {
        tmpd_denoise(cond, &h, &y.values, sigma_y)
    })
}
