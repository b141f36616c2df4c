//! Factored temporal variational autoencoder.
//!
//! Latent state splits into factors that each evolve under their own
//! transition network; a filtering-style inference network conditions on the
//! previous state's prediction and the current frame. Training maximizes a
//! per-timestep evidence lower bound. Alongside the model live its
//! evaluation tools (nearest-neighbor mutual information, correlation
//! structure, independent generations) and a linear-Gaussian oracle that
//! certifies the bound against an exact Kalman log-likelihood.

pub mod data;
pub mod elbo;
pub mod error;
pub mod evaluation;
pub mod gaussian;
pub mod model;
pub mod numerics;
pub mod oracle;
pub mod render;
pub mod rng;
pub mod training;

pub use error::{Error, Result};

use std::sync::OnceLock;

/// Caps internal parallelism from the `FACSEQ_THREADS` environment variable.
/// Safe to call more than once; only the first call takes effect.
pub fn init_threads() {
    static INIT: OnceLock<()> = OnceLock::new();
    INIT.get_or_init(|| {
        if let Ok(n) = std::env::var("FACSEQ_THREADS") {
            if let Ok(n) = n.parse::<usize>() {
                if n > 0 {
                    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
                }
            }
        }
    });
}
