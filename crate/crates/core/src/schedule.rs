//! Discrete diffusion schedules and the reverse transition kernel shared by
//! every solver.
//!
//! Time is an integer index `t` in `0..=N`. Index 0 is the clean endpoint
//! (`alpha = 1`, `sigma = 0`); index `N` is the noisiest level. A forward
//! marginal at level `t` is `N(alpha_t x0, sigma_t^2 I)`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::standard_normal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScheduleKind {
    /// Variance preserving, `alpha = cos(theta)`, `sigma = sin(theta)` with
    /// `theta` linear between `atan(sigma_min)` and `atan(sigma_max)`.
    Cosine,
    /// Variance exploding, `alpha = 1`, `sigma` geometric.
    Geometric,
    /// Variance preserving with a linear `beta` ramp (DDPM style).
    LinearBeta,
}

impl ScheduleKind {
    pub fn is_variance_preserving(self) -> bool {
        !matches!(self, ScheduleKind::Geometric)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ScheduleKind::Cosine => "cosine",
            ScheduleKind::Geometric => "geometric",
            ScheduleKind::LinearBeta => "linear-beta",
        }
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" | "vp-cosine" => Ok(ScheduleKind::Cosine),
            "geometric" | "ve" | "geometric-sigma" => Ok(ScheduleKind::Geometric),
            "linear-beta" | "linear" => Ok(ScheduleKind::LinearBeta),
            other => Err(Error::Unknown {
                what: "schedule kind",
                name: other.to_string(),
            }),
        }
    }
}

/// How the stochasticity coefficient `rho_t` of the reverse kernel is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RhoPolicy {
    /// The same `rho` at every step. `0` is deterministic DDIM, `1` re-noises
    /// the clean estimate from scratch.
    Constant(f64),
    /// `rho_t = sqrt(1 - SNR_t / SNR_{t-1})`, the ancestral (DDPM) choice.
    Ddpm,
}

impl FromStr for RhoPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "ddpm" || s == "ancestral" {
            return Ok(RhoPolicy::Ddpm);
        }
        let v: f64 = s.parse().map_err(|_| Error::Unknown {
            what: "rho policy",
            name: s.to_string(),
        })?;
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidParameter(format!("rho {v} outside [0, 1]")));
        }
        Ok(RhoPolicy::Constant(v))
    }
}

impl fmt::Display for RhoPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RhoPolicy::Constant(v) => write!(f, "{v}"),
            RhoPolicy::Ddpm => f.write_str("ddpm"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    alpha: Vec<f64>,
    sigma: Vec<f64>,
    /// `rho[t - 1]` is the coefficient used by the step out of level `t`.
    rho: Vec<f64>,
}

impl NoiseSchedule {
    /// Builds a schedule whose noise-to-signal ratio `sigma_t / alpha_t` runs
    /// from `sigma_min` at `t = 1` to `sigma_max` at `t = N`. All kinds start
    /// with `rho = 1`; solvers swap in their own policy via [`Self::with_rho`].
    pub fn build(kind: ScheduleKind, steps: usize, sigma_min: f64, sigma_max: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidParameter("schedule needs at least one step".into()));
        }
        if !(sigma_min >= 0.0 && sigma_min < sigma_max && sigma_max.is_finite()) {
            return Err(Error::NonMonotone(format!(
                "need 0 <= sigma_min < sigma_max, got [{sigma_min}, {sigma_max}]"
            )));
        }
        if steps >= 2 && sigma_min <= 0.0 {
            return Err(Error::NonMonotone(
                "sigma_min must be positive when N >= 2 (level 1 would be noiseless)".into(),
            ));
        }
        let frac = |t: usize| -> f64 {
            if steps == 1 {
                1.0
            } else {
                (t - 1) as f64 / (steps - 1) as f64
            }
        };

        let mut alpha = vec![1.0; steps + 1];
        let mut sigma = vec![0.0; steps + 1];
        match kind {
            ScheduleKind::Geometric => {
                for t in 1..=steps {
                    sigma[t] = if steps == 1 {
                        sigma_max
                    } else {
                        sigma_min * (sigma_max / sigma_min).powf(frac(t))
                    };
                }
            }
            ScheduleKind::Cosine => {
                let lo = sigma_min.atan();
                let hi = sigma_max.atan();
                for t in 1..=steps {
                    let theta = lo + frac(t) * (hi - lo);
                    alpha[t] = theta.cos();
                    sigma[t] = theta.sin();
                }
            }
            ScheduleKind::LinearBeta => {
                let target = -(1.0 + sigma_max * sigma_max).ln();
                let betas = if steps == 1 {
                    vec![sigma_max * sigma_max / (1.0 + sigma_max * sigma_max)]
                } else {
                    let first = sigma_min * sigma_min / (1.0 + sigma_min * sigma_min);
                    let log_abar = |last: f64| -> f64 {
                        (1..=steps)
                            .map(|t| (1.0 - (first + (last - first) * frac(t))).ln())
                            .sum()
                    };
                    if log_abar(first) < target {
                        return Err(Error::NonMonotone(format!(
                            "sigma_max {sigma_max} unreachable from sigma_min {sigma_min} in {steps} steps"
                        )));
                    }
                    let (mut lo, mut hi) = (first, 1.0);
                    for _ in 0..200 {
                        let mid = 0.5 * (lo + hi);
                        if log_abar(mid) > target {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    let last = 0.5 * (lo + hi);
                    (1..=steps).map(|t| first + (last - first) * frac(t)).collect()
                };
                let mut log_abar = 0.0;
                for t in 1..=steps {
                    log_abar += (1.0 - betas[t - 1]).ln();
                    let abar = log_abar.exp();
                    alpha[t] = abar.sqrt();
                    sigma[t] = (1.0 - abar).sqrt();
                }
            }
        }
        Self::from_parts(kind, alpha, sigma, vec![1.0; steps])
    }

    /// Validates user-supplied arrays against the schedule invariants.
    pub fn from_parts(kind: ScheduleKind, alpha: Vec<f64>, sigma: Vec<f64>, rho: Vec<f64>) -> Result<Self> {
        let sched = NoiseSchedule {
            kind,
            alpha,
            sigma,
            rho,
        };
        sched.validate()?;
        Ok(sched)
    }

    fn validate(&self) -> Result<()> {
        let n = self.rho.len();
        if n == 0 || self.alpha.len() != n + 1 || self.sigma.len() != n + 1 {
            return Err(Error::InvalidParameter(format!(
                "schedule arrays have lengths alpha={}, sigma={}, rho={}",
                self.alpha.len(),
                self.sigma.len(),
                n
            )));
        }
        if self.alpha[0] != 1.0 || self.sigma[0] != 0.0 {
            return Err(Error::NonMonotone("level 0 must be alpha=1, sigma=0".into()));
        }
        for t in 1..=n {
            let (a, s) = (self.alpha[t], self.sigma[t]);
            if !(a > 0.0 && a <= 1.0) || !(s > 0.0 && s.is_finite()) {
                return Err(Error::NonMonotone(format!("level {t}: alpha={a}, sigma={s}")));
            }
            if a > self.alpha[t - 1] || s < self.sigma[t - 1] {
                return Err(Error::NonMonotone(format!("alpha/sigma not monotone at level {t}")));
            }
            if t >= 2 && self.snr(t) >= self.snr(t - 1) {
                return Err(Error::NonMonotone(format!("SNR not strictly decreasing at level {t}")));
            }
        }
        if let Some(r) = self.rho.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::InvalidParameter(format!("rho {r} outside [0, 1]")));
        }
        Ok(())
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn steps(&self) -> usize {
        self.rho.len()
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t]
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigma
    }

    /// Coefficient of the step out of level `t` (`1 <= t <= N`).
    pub fn rho(&self, t: usize) -> f64 {
        self.rho[t - 1]
    }

    /// `alpha_t^2 / sigma_t^2`; infinite at the clean endpoint.
    pub fn snr(&self, t: usize) -> f64 {
        let (a, s) = (self.alpha[t], self.sigma[t]);
        if s == 0.0 {
            f64::INFINITY
        } else {
            a * a / (s * s)
        }
    }

    pub fn snrs(&self) -> Vec<f64> {
        (0..=self.steps()).map(|t| self.snr(t)).collect()
    }

    /// Whether the noisiest level is dominated by the prior-free start
    /// distribution (`alpha_N / sigma_N <= 1e-2`).
    pub fn is_prior_dominated(&self) -> bool {
        let n = self.steps();
        self.alpha[n] / self.sigma[n] <= 1e-2
    }

    /// Standard deviation of the initial draw `x_N`: `sigma_N` for variance
    /// exploding schedules, 1 for variance preserving ones.
    pub fn initial_std(&self) -> f64 {
        if self.kind.is_variance_preserving() {
            1.0
        } else {
            self.sigma[self.steps()]
        }
    }

    pub fn with_rho(mut self, policy: RhoPolicy) -> Self {
        for t in 1..=self.steps() {
            self.rho[t - 1] = match policy {
                RhoPolicy::Constant(v) => v,
                RhoPolicy::Ddpm => {
                    if t == 1 {
                        1.0
                    } else {
                        (1.0 - self.snr(t) / self.snr(t - 1)).clamp(0.0, 1.0).sqrt()
                    }
                }
            };
        }
        self
    }
}

/// A point in data space tagged with the diffusion level it lives at.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub values: DVector<f64>,
    pub time_index: usize,
}

impl StateVector {
    pub fn new(values: DVector<f64>, time_index: usize) -> Self {
        StateVector { values, time_index }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Draws the starting state `x_N` for a reverse trajectory.
pub fn initial_state<R: Rng + ?Sized>(sched: &NoiseSchedule, dim: usize, rng: &mut R) -> StateVector {
    let n = sched.steps();
    StateVector::new(standard_normal(rng, dim) * sched.initial_std(), n)
}

/// The reverse kernel `g(xi, x_t, eps)`:
///
/// `x_{t-1} = alpha_{t-1} xi + sigma_{t-1} (sqrt(1 - rho_t^2) (x_t - alpha_t xi) / sigma_t + rho_t eps)`
pub fn ddim_transition(
    xi: &DVector<f64>,
    x_t: &StateVector,
    eps: &DVector<f64>,
    sched: &NoiseSchedule,
) -> Result<StateVector> {
    let t = x_t.time_index;
    if t == 0 || t > sched.steps() {
        return Err(Error::NoTransition(t));
    }
    Error::check_dim(x_t.dim(), xi.len(), "ddim_transition xi")?;
    Error::check_dim(x_t.dim(), eps.len(), "ddim_transition eps")?;
    let sigma_t = sched.sigma(t);
    if sigma_t == 0.0 {
        return Err(Error::InvalidParameter(format!("sigma_{t} = 0")));
    }
    let (alpha_prev, sigma_prev) = (sched.alpha(t - 1), sched.sigma(t - 1));
    let alpha_t = sched.alpha(t);
    let rho = sched.rho(t);
    let keep = (1.0 - rho * rho).sqrt();

    let values = DVector::from_iterator(
        xi.len(),
        xi.iter()
            .zip(x_t.values.iter())
            .zip(eps.iter())
            .map(|((&xi, &xt), &e)| {
                alpha_prev * xi + sigma_prev * (keep * (xt - alpha_t * xi) / sigma_t + rho * e)
            }),
    );
    Ok(StateVector::new(values, t - 1))
}

/// Samples `N(alpha_t x0, sigma_t^2 I)` at `t_target`.
pub fn renoise<R: Rng + ?Sized>(
    x0: &DVector<f64>,
    t_target: usize,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<StateVector> {
    if t_target > sched.steps() {
        return Err(Error::InvalidParameter(format!(
            "target level {t_target} beyond N = {}",
            sched.steps()
        )));
    }
    let (a, s) = (sched.alpha(t_target), sched.sigma(t_target));
    let eps = standard_normal(rng, x0.len());
    let values = if s == 0.0 { x0 * a } else { x0 * a + eps * s };
    Ok(StateVector::new(values, t_target))
}
