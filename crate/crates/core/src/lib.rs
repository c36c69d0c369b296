//! Strong approximation of stochastic differential equations driven by an
//! inverse subordinator clock.
//!
//! The SDE under study is
//!
//! ```text
//! X_t = x0 + ∫ H(E_r) dr + ∫ F(E_r, X_r) dE_r + ∫ G(E_r, X_r) dB_{E_r}
//! ```
//!
//! where `E` is the first-passage process of a driftless subordinator `D` with
//! infinite Lévy measure and `B` is an independent Brownian motion.
//! Simulation happens on two clocks: the inner clock (the `E` axis, sampled
//! at equidistant multiples of `δ`) and the outer clock (physical time, where
//! the grid points `τ_n = D_{nδ}` are random).
//!
//! Module map:
//!
//! * [`noise`]: counter-based random streams, Brownian increments and
//!   subordinator increment samplers.
//! * [`time_change`]: the discretized inverse `E^δ`, the random partition
//!   `τ_n` and pathwise coarsening.
//! * [`coefficients`]: coefficient sets with their derivative suite, the
//!   multi-index algebra and the `L^0`/`L^1` operators.
//! * [`schemes`]: Euler–Maruyama-, Milstein- and Itô–Taylor-type stepping.
//! * [`diagnostics`]: moment classifiers and Monte Carlo probes of `E_t`.
//! * [`convergence`]: coupled strong-error experiments and order fitting.
//!
//! The crate is `no_std` and only needs `alloc`. Path-level parallelism is
//! injected through [`executor::PathExecutor`].

#![no_std]
#![deny(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod coefficients;
pub mod convergence;
pub mod diagnostics;
pub mod executor;
pub mod noise;
pub mod schemes;
pub mod special;
pub mod stats;
pub mod time_change;

pub use coefficients::{CoefficientSet, MultiIndex};
pub use noise::{NoiseStream, SubordinatorSpec};
pub use schemes::{SchemeConfig, SolutionPath};
pub use time_change::DiscretizedTimeChange;
