//! Epanechnikov variational autoencoder.
//!
//! The crate is split along the lines of the model:
//!
//! - [`numeric`]: tensors, reverse-mode gradients and Adam.
//! - [`kernels`]: kernel densities, quadrature and the `I(K)`/`J(K)` functionals.
//! - [`sampling`]: the median-of-three Epanechnikov sampler, the minibatch
//!   resampling step and Gaussian reparametrization.
//! - [`divergences`]: Gaussian KL, Monte Carlo chi-square and KL estimators,
//!   the Epanechnikov penalty and the integrated squared KDE error statistic.
//! - [`models`]: encoder/decoder networks, both training objectives, training
//!   loop and checkpoints.
//! - [`data`]: IDX files, synthetic datasets, sharpness, the Fréchet
//!   distance proxy and the binomial test.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod divergences;
pub mod error;
pub mod kernels;
pub mod models;
pub mod numeric;
pub mod sampling;
pub mod stats;

pub use error::{Error, Result};

/// Environment variable capping the worker threads used by the lab simulations.
pub const THREADS_ENV: &str = "EVAE_LAB_THREADS";

/// Runs `f` on a rayon pool sized by [`THREADS_ENV`], or on the global pool
/// when the variable is unset or invalid.
pub(crate) fn with_thread_pool<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    let cap = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0);
    match cap.and_then(|n| rayon::ThreadPoolBuilder::new().num_threads(n).build().ok()) {
        Some(pool) => pool.install(f),
        None => f(),
    }
}
