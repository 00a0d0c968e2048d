mod binio;
pub mod cli;
pub mod dataset;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod model;
pub mod pipeline;
pub mod seed;
pub mod stats;
pub mod tensor;

pub use error::{Error, Result};
