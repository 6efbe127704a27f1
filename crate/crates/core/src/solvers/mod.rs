//! The inference procedures: unconditional DDIM, DPS, DAPS, LMAPS, the
//! closed-form linear local MAP (TMPD) and global MAP.

mod closed_form;
mod global_map;
mod lmaps;
mod sampling;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rand::Rng;

use crate::error::{Error, Result};
use crate::gmm::GaussianMixture;
use crate::operators::{ForwardOperator, Measurement};
use crate::schedule::{NoiseSchedule, RhoPolicy, StateVector};

pub use closed_form::{
    fidelity_weight, isotropic_from_k, k_from_reformulated, k2_for_isotropic, map_lambda, objective_isotropic,
    objective_local_map, objective_reformulated, objective_regularised, quadratic_minimiser,
    solve_local_map_closed_form, CovarianceSpec,
};
pub use global_map::{global_map_objective, run_global_map};
pub use lmaps::{lmaps_inner_loop, lmaps_weight, run_lmaps, InnerLoopOutcome};
pub use sampling::{daps_langevin, run_daps, run_dps, run_tmpd, run_unconditional, tmpd_denoise};

/// Norm beyond which an iterate is treated as diverged.
pub const DIVERGENCE_NORM: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Family {
    Unconditional,
    Dps,
    Daps,
    Lmaps,
    Tmpd,
    GlobalMap,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::Unconditional,
        Family::Dps,
        Family::Daps,
        Family::Lmaps,
        Family::Tmpd,
        Family::GlobalMap,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Unconditional => "unconditional",
            Family::Dps => "dps",
            Family::Daps => "daps",
            Family::Lmaps => "lmaps",
            Family::Tmpd => "tmpd-closed-form",
            Family::GlobalMap => "global-map",
        }
    }

    /// Default reverse-step noise: pure re-noising for the methods that
    /// re-noise an estimate of `x0`, ancestral sampling otherwise.
    pub fn default_rho(self) -> RhoPolicy {
        match self {
            Family::Lmaps | Family::Daps => RhoPolicy::Constant(1.0),
            _ => RhoPolicy::Ddpm,
        }
    }

    pub fn needs_measurement(self) -> bool {
        !matches!(self, Family::Unconditional)
    }

    pub fn uses_schedule(self) -> bool {
        !matches!(self, Family::GlobalMap)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "unconditional" | "ddim" => Ok(Family::Unconditional),
            "dps" => Ok(Family::Dps),
            "daps" => Ok(Family::Daps),
            "lmaps" => Ok(Family::Lmaps),
            "tmpd" | "tmpd-closed-form" => Ok(Family::Tmpd),
            "global-map" | "global_map" | "map" => Ok(Family::GlobalMap),
            other => Err(Error::Unknown {
                what: "solver family",
                name: other.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub family: Family,
    /// Diffusion steps `N`.
    pub steps: usize,
    /// Gradient updates per step (LMAPS) or maximum ascent iterations
    /// (global MAP).
    pub inner_steps: usize,
    pub learning_rate: f64,
    pub k1: f64,
    pub k2: f64,
    pub guidance_scale: f64,
    pub langevin_steps: usize,
    /// Multiplier on the per-step stability bound of the Langevin step.
    pub langevin_step_size: f64,
    /// Prior draws added to the component means as ascent starts.
    pub multistart_count: usize,
    /// `None` selects [`Family::default_rho`].
    pub rho: Option<RhoPolicy>,
    pub seed: u64,
    /// Early exit for the LMAPS inner loop once `||grad|| <= tol`.
    pub inner_tol: Option<f64>,
    pub record_inner_loss: bool,
    /// Keep every `stride`-th state of the reverse trajectory.
    pub trajectory_stride: Option<usize>,
}

impl SolverConfig {
    pub fn new(family: Family) -> Self {
        SolverConfig {
            family,
            steps: 200,
            inner_steps: if family == Family::GlobalMap { 2000 } else { 20 },
            learning_rate: 0.01,
            k1: 0.22,
            k2: 100.0,
            guidance_scale: 1.0,
            langevin_steps: 50,
            langevin_step_size: 0.5,
            multistart_count: 8,
            rho: None,
            seed: 0,
            inner_tol: None,
            record_inner_loss: false,
            trajectory_stride: None,
        }
    }

    /// The Gaussian deblurring row of the reference hyper-parameters.
    pub fn lmaps_reference() -> Self {
        SolverConfig {
            steps: 200,
            inner_steps: 100,
            learning_rate: 0.01,
            k1: 0.22,
            k2: 100.0,
            ..SolverConfig::new(Family::Lmaps)
        }
    }

    pub fn rho_policy(&self) -> RhoPolicy {
        self.rho.unwrap_or_else(|| self.family.default_rho())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.family.uses_schedule() && self.steps == 0 {
            return bad(format!("{}: steps must be >= 1", self.family));
        }
        match self.family {
            Family::Lmaps => {
                if self.inner_steps == 0 {
                    return bad("lmaps: inner_steps must be >= 1".into());
                }
                if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
                    return bad(format!("lmaps: learning_rate {} must be > 0", self.learning_rate));
                }
                if !(self.k1 >= 0.0 && self.k1.is_finite()) {
                    return bad(format!("lmaps: k1 {} must be >= 0", self.k1));
                }
                if !(self.k2 >= 0.0 && self.k2.is_finite()) {
                    return bad(format!("lmaps: k2 {} must be >= 0", self.k2));
                }
            }
            Family::Daps => {
                if self.inner_steps == 0 {
                    return bad("daps: inner_steps must be >= 1".into());
                }
                if !(self.langevin_step_size >= 0.0 && self.langevin_step_size.is_finite()) {
                    return bad(format!("daps: langevin_step_size {} must be >= 0", self.langevin_step_size));
                }
            }
            Family::Dps => {
                if !self.guidance_scale.is_finite() {
                    return bad("dps: guidance_scale must be finite".into());
                }
            }
            Family::GlobalMap => {
                if self.inner_steps == 0 {
                    return bad("global-map: inner_steps must be >= 1".into());
                }
            }
            Family::Unconditional | Family::Tmpd => {}
        }
        if let Some(RhoPolicy::Constant(r)) = self.rho {
            if !(0.0..=1.0).contains(&r) {
                return bad(format!("rho {r} outside [0, 1]"));
            }
        }
        if self.trajectory_stride == Some(0) {
            return bad("trajectory stride must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub x0_hat: StateVector,
    pub trajectory: Option<Vec<StateVector>>,
    pub inner_loss_curves: Option<Vec<Vec<f64>>>,
    pub metrics: BTreeMap<String, f64>,
    pub config_hash: String,
    pub seed: u64,
}

/// Runs any family. `sched` is ignored by global MAP; `op` and `y` are
/// ignored by unconditional DDIM.
pub fn run<R: Rng + ?Sized>(
    prior: &GaussianMixture,
    sched: &NoiseSchedule,
    op: Option<&ForwardOperator>,
    y: Option<&Measurement>,
    cfg: &SolverConfig,
    rng: &mut R,
) -> Result<RunResult> {
    if cfg.family == Family::Unconditional {
        return run_unconditional(prior, sched, cfg, rng);
    }
    let (op, y) = match (op, y) {
        (Some(op), Some(y)) => (op, y),
        _ => {
            return Err(Error::InvalidParameter(format!(
                "{} needs an operator and a measurement",
                cfg.family
            )))
        }
    };
    match cfg.family {
        Family::Dps => run_dps(prior, sched, op, y, cfg, rng),
        Family::Daps => run_daps(prior, sched, op, y, cfg, rng),
        Family::Lmaps => run_lmaps(prior, sched, op, y, cfg, rng),
        Family::Tmpd => run_tmpd(prior, sched, op, y, cfg, rng),
        Family::GlobalMap => run_global_map(prior, op, y, cfg, rng),
        Family::Unconditional => unreachable!(),
    }
}

/// Shared pre-flight checks for the diffusion-based families.
fn prepare(
    prior: &GaussianMixture,
    sched: &NoiseSchedule,
    problem: Option<(&ForwardOperator, &Measurement)>,
    cfg: &SolverConfig,
    expected: Family,
) -> Result<NoiseSchedule> {
    if cfg.family != expected {
        return Err(Error::InvalidParameter(format!(
            "configuration is for {}, not {expected}",
            cfg.family
        )));
    }
    cfg.validate()?;
    Error::check_dim(cfg.steps, sched.steps(), "schedule steps")?;
    if let Some((op, y)) = problem {
        check_problem(prior, op, y)?;
    }
    Ok(sched.clone().with_rho(cfg.rho_policy()))
}

fn check_problem(prior: &GaussianMixture, op: &ForwardOperator, y: &Measurement) -> Result<()> {
    Error::check_dim(prior.dim(), op.input_dim(), "operator input vs prior")?;
    Error::check_dim(op.output_dim(), y.dim(), "measurement vs operator output")?;
    if !(op.noise_std() > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "{} needs sigma_y > 0 to weight the measurement",
            op.name()
        )));
    }
    Ok(())
}

/// Collects trajectory snapshots every `stride` levels plus the endpoint.
struct Recorder {
    stride: Option<usize>,
    steps: usize,
    states: Vec<StateVector>,
}

impl Recorder {
    fn new(cfg: &SolverConfig, steps: usize) -> Self {
        Recorder {
            stride: cfg.trajectory_stride,
            steps,
            states: Vec::new(),
        }
    }

    fn observe(&mut self, x: &StateVector) {
        if let Some(stride) = self.stride {
            let elapsed = self.steps - x.time_index;
            if elapsed.is_multiple_of(stride) || x.time_index == 0 {
                self.states.push(x.clone());
            }
        }
    }

    fn finish(self) -> Option<Vec<StateVector>> {
        self.stride.map(|_| self.states)
    }
}

fn guard(solver: &'static str, step: usize, iteration: usize, x: &DVector<f64>) -> Result<()> {
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite {
            solver,
            step,
            iteration,
        });
    }
    let norm = x.norm();
    if norm > DIVERGENCE_NORM {
        return Err(Error::Diverged { solver, step, norm });
    }
    Ok(())
}

fn finish(
    x0: StateVector,
    recorder: Recorder,
    inner_loss_curves: Option<Vec<Vec<f64>>>,
    metrics: BTreeMap<String, f64>,
    cfg: &SolverConfig,
) -> RunResult {
    RunResult {
        x0_hat: StateVector::new(x0.values, 0),
        trajectory: recorder.finish(),
        inner_loss_curves,
        metrics,
        config_hash: String::new(),
        seed: cfg.seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn family_names_round_trip() {
        for f in Family::ALL {
            assert_eq!(f.as_str().parse::<Family>().unwrap(), f);
        }
        assert!("sitcom".parse::<Family>().is_err());
    }

    #[test]
    fn validation() {
        let mut cfg = SolverConfig::new(Family::Lmaps);
        assert!(cfg.validate().is_ok());
        cfg.inner_steps = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = SolverConfig::new(Family::Lmaps);
        cfg.learning_rate = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = SolverConfig::new(Family::Dps);
        cfg.steps = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = SolverConfig::new(Family::Tmpd);
        cfg.rho = Some(RhoPolicy::Constant(1.5));
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn reference_hyper_parameters() {
        let cfg = SolverConfig::lmaps_reference();
        assert_eq!((cfg.steps, cfg.inner_steps), (200, 100));
        assert_eq!((cfg.learning_rate, cfg.k1, cfg.k2), (0.01, 0.22, 100.0));
        assert_eq!(cfg.rho_policy(), RhoPolicy::Constant(1.0));
        assert_eq!(SolverConfig::new(Family::Dps).rho_policy(), RhoPolicy::Ddpm);
    }
}
