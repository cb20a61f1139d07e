//! Detection of quasi-stationary states in high-dimensional multivariate
//! time series.
//!
//! The pipeline implemented by this crate works in four stages:
//!
//! 1. **Returns** ([`ingest`]): load a panel of prices, compute returns and
//!    locally normalized returns.
//! 2. **Correlation states** ([`correlation`]): rolling Pearson correlation
//!    matrices, compressed to sector averages and embedded as points in
//!    `R^d` with `d = S(S+1)/2`.
//! 3. **Clustering and stochastic analysis** ([`clustering`], [`langevin`]):
//!    bisecting k-means over the embedded states yields discrete "system
//!    states"; the distance of the trajectory to a cluster center is treated
//!    as a one-dimensional Langevin process whose drift and potential are
//!    estimated nonparametrically. Potential minima are quasi-stable fixed
//!    points and guide merging of over-split clusters.
//! 4. **Fixed-point recovery** ([`fixedpoint`]): the high-dimensional fixed
//!    point is recovered as the minimizer of the sum of distances to the
//!    trajectory, constrained to a hypersphere around a reference center.
//!
//! [`synth`] provides a seeded regime-switching generator used for testing
//! and demos, and [`eval`] holds small evaluation utilities.

pub mod clustering;
pub mod correlation;
pub mod eval;
pub mod fixedpoint;
pub mod ingest;
pub mod langevin;
pub mod synth;

pub use correlation::{StatePoint, TimeWindow};
