//! Three-frame video splicing localization: tensors and autodiff, the
//! network, synthetic data, training, and evaluation.

pub mod attention;
pub mod backbone;
pub mod cli;
pub mod error;
pub mod gradsuite;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod synth;
pub mod tensor;
pub mod video;

pub use error::{Error, Result};
