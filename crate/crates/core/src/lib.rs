//! Rare-event Monte Carlo for slow-fast diffusions with small noise.
//!
//! This crate estimates functionals of the form
//!
//! ```text
//!     theta(eps) = E[ exp( -h^2(eps) * H(eta_T) ) ]
//! ```
//!
//! where `eta_t = (X_t - Xbar_t) / (sqrt(eps) h(eps))` is the moderate-deviations
//! rescaling of the slow component of a two-scale diffusion
//!
//! ```text
//!     dX = [ (eps/delta) b(X,Y) + c(X,Y) ] dt + sqrt(eps) sigma(X,Y) dW
//!     dY = (1/delta) [ (eps/delta) f(X,Y) + g(X,Y) ] dt
//!          + (sqrt(eps)/delta) [ tau1(X,Y) dW + tau2(X,Y) dB ]
//! ```
//!
//! and `Xbar` solves the averaged ODE. Estimation is by Euler-Maruyama
//! simulation under an exponential change of measure driven by a feedback
//! control `u = (-alpha1' grad U, -alpha2' grad U)` built from a classical
//! subsolution `U` of the limiting Hamilton-Jacobi-Bellman equation; the
//! Girsanov weight makes every estimator unbiased, and a good subsolution
//! collapses its variance. The zero subsolution reproduces naive Monte Carlo,
//! and for the rough-potential system a large-deviations control is available
//! in closed form as the `h = eps^(-1/2)` embedding of the same machinery.
//!
//! Module map:
//!
//! * [`model`] — coefficient bundles for the SDE, scaling parameters, and the
//!   bundled example systems (double-well slow-fast pair, rough periodic
//!   potential).
//! * [`averaging`] — the averaged ODE solver and the homogenization constants
//!   `L`, `Lhat`, `kappa = 4 pi^2 / (L Lhat)` of the periodic cell problem.
//! * [`control`] — HJB coefficient bindings, closed-form subsolutions, a
//!   numerical subsolution verifier, and the feedback controls.
//! * [`sampler`] — controlled trajectory simulation, Girsanov log-weights,
//!   and the deterministic parallel estimator.
//! * [`experiment`] — ready-to-run bindings of the three bundled studies
//!   (model + averaged path + subsolution + control + payoff).
//!
//! The crate is `no_std`-compatible (with `alloc`) when built with
//! `--no-default-features --features libm`; the `std` feature (default)
//! additionally enables the multi-threaded estimator driver.

#![cfg_attr(not(feature = "std"), no_std)]
#![deny(unsafe_code)]

extern crate alloc;

#[cfg(not(any(feature = "std", feature = "libm")))]
compile_error!("mdis-core requires either the `std` or the `libm` feature");

pub(crate) mod math;

pub mod averaging;
pub mod control;
pub mod experiment;
pub mod model;
pub mod sampler;

pub use averaging::{AveragedPath, RoughPotentialConstants};
pub use control::{FeedbackControl, HjbCoefficients, Subsolution, SubsolutionReport};
pub use experiment::{ExampleId, ExperimentSpec, Method};
pub use model::{FastKind, MultiscaleModel, Regime, ScalingParams};
pub use sampler::{EstimatorOutput, TrajectoryOutcome};
