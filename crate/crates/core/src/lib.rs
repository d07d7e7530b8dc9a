//! Missing-value imputation by a kernelized Wasserstein gradient flow driven
//! by a denoising-score-matching network.

pub mod assignment;
pub mod error;
pub mod experiment;
pub mod kernel;
pub mod metrics;
pub mod missingness;
pub mod score_net;
pub mod sinkhorn;
pub mod tabular;
pub mod wgf;

pub use error::{Error, Result};
