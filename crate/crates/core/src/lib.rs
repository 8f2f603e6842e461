//! Subgroup-level perturbation robustness analysis for human and machine readers.
//!
//! The crate is organized along the pipeline:
//!
//! - [`data`]: cases, predictions, ROI annotations and their JSON-lines files.
//! - [`filter`]: Gaussian low-pass filtering in the frequency domain with
//!   severities expressed in cycles per millimeter.
//! - [`calibrate`]: binary Dirichlet calibration and classwise ECE.
//! - [`model`]: the four-latent Bernoulli prediction model and its log joint.
//! - [`autodiff`]: the reverse-mode tape used for ELBO gradients.
//! - [`advi`]: mean-field Gaussian variational inference and model comparison.
//! - [`analysis`]: predictive-confidence summaries, KS separability and the
//!   subgroup-vs-pooled aggregation report.
//! - [`synth`]: phantoms and generative recovery experiments.
//! - [`study`]: reader-study designs, task flow and the append-only store.
//! - [`manifest`]: run manifests and content hashing.

pub mod advi;
pub mod analysis;
pub mod autodiff;
pub mod calibrate;
pub mod data;
pub mod filter;
pub mod io;
pub mod manifest;
pub mod model;
pub mod stats;
pub mod study;
pub mod synth;

mod error;

pub use error::{Error, Result};

/// Standard logistic function.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln σ(x)` without overflow for large `|x|`.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}
