pub mod alignment;
pub mod cli;
pub mod dataset;
pub mod diffcore;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod gradcheck;
pub mod motiongan;
pub mod synthesis;

pub use error::{Error, ErrorClass, Result};
