//! Shared numerical machinery: smoothing kernels, bandwidth rules, a
//! multistart quasi-Newton optimizer, seedable sampling, and small dense
//! linear-algebra helpers.

mod bandwidth;
mod kernel;
pub mod linalg;
mod optimize;
pub mod pairs;
mod random;

pub use bandwidth::{bandwidth, sample_std, BandwidthRule, ScaleSource, RATE_EXPONENT};
pub use kernel::{
    gaussian_kernel, inverse_mills, log_normal_cdf, inverse_mills_derivative, normal_cdf, normal_pdf, INV_SQRT_2PI,
};
pub use optimize::{
    bfgs_ascent, central_difference_gradient, maximize, maximize_sequential, FnObjective, Objective,
    OptimizerOptions, OptimizerReport,
};
pub use random::{multistart_draws, stream_rng, SimRng};

/// Floor applied to probabilities inside logarithms in place of trimming.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

/// Clamp a probability to `[PROBABILITY_FLOOR, 1 - PROBABILITY_FLOOR]`.
#[inline]
pub fn clamp_probability(p: f64) -> f64 {
    p.clamp(PROBABILITY_FLOOR, 1.0 - PROBABILITY_FLOOR)
}
