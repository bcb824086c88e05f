//! Binary neural networks with channel-replicating convolution.

pub mod cli;
pub mod conv;
pub mod cost;
pub mod error;
pub mod graph;
pub mod reptran;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
