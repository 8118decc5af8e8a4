pub mod dataset;
pub mod dictionary;
pub mod distill;
pub mod error;
pub mod harness;
pub mod koopman;
pub mod linalg;
pub mod preprocess;
pub mod rng;
pub mod teacher;

pub use error::{Error, Result};
