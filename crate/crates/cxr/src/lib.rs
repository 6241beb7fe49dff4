//! File formats, shipped data, the end-to-end pipeline and the command line
//! for the `cxr` tools. The numerical work lives in `cxr-core`.

pub mod config;
pub mod dataset;
pub mod error;
pub mod files;
pub mod imageio;
pub mod pipeline;
pub mod shipped;
pub mod stages;

pub use error::{Error, Result};
