//! Multicoil MRI reconstruction: forward model, sampling masks, unrolled
//! recurrent and variational reconstructors, a compressed-sensing baseline,
//! image-quality metrics and a synthetic phantom pipeline.

pub mod baselines;
pub mod diffmath;
pub mod error;
pub mod io;
pub mod metrics;
pub mod mri_model;
pub mod nets;
pub mod phantom;
pub mod sampling;
pub mod train;

pub use error::{Error, Result};
