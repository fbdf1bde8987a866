pub mod cli;
pub mod data;
pub mod error;
pub mod graph;
pub mod harness;
pub mod gsn;
pub mod nn;
pub mod seq;
pub mod tensor;

pub use error::{Error, Result};
