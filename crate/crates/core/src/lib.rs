//! Recursive maximum-likelihood smoothing for state-space models.
//!
//! The crate estimates latent state trajectories from a full observation
//! record by solving, backwards in time, the score equation of the
//! incomplete data `(x_k, x_{k+1}, y_{0:n})`. Two backends are provided:
//!
//! * an exact linear-Gaussian path (Kalman filter, RTS smoother, closed-form
//!   score and information blocks) in [`kalman`], used as ground truth, and
//! * a sequential-Monte-Carlo path ([`particle`], [`inference`], [`smoother`])
//!   that evaluates the same score/information quantities from a particle
//!   representation of the filtering distributions, so the smoother applies
//!   to nonlinear models as well.
//!
//! Standard errors of the smoothed states come from a repeated-sampling
//! estimate of the expected information blocks and a backward covariance
//! recursion ([`covariance`]).

pub mod covariance;
pub mod error;
pub mod inference;
pub mod kalman;
pub mod model;
pub mod numerics;
pub mod particle;
pub mod rng;
pub mod smoother;

pub use error::{Error, Result};
