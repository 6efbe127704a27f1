//! Diffusion inverse-problem solvers over an analytic Gaussian-mixture prior.
//!
//! The mixture prior makes the denoiser, its Jacobian and the conditional
//! density `p(x0 | x_t)` exact, so every solver in [`solvers`] can be checked
//! against closed-form answers instead of a trained network.

pub mod error;
pub mod gmm;
pub mod metrics;
pub mod operators;
pub mod rng;
pub mod schedule;
pub mod solvers;
pub mod verify;

pub use error::{Error, Result};
pub use gmm::{ConditionalPosterior, GaussianMixture};
pub use operators::{build_operator, ForwardOperator, Measurement, OperatorConfig, OperatorSpec};
pub use schedule::{ddim_transition, renoise, NoiseSchedule, RhoPolicy, ScheduleKind, StateVector};
pub use solvers::{Family, RunResult, SolverConfig};
