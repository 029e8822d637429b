pub mod alignment;
pub mod baseline;
pub mod config;
pub mod dataio;
pub mod emotion;
pub mod encoders;
mod error;
pub mod metrics;
pub mod mgr_head;
pub mod nn;
pub mod pipeline;
pub mod prompting;

pub use error::{Error, Result};
