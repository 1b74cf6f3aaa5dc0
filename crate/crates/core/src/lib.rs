pub mod delta;
pub mod dense;
pub mod error;
pub mod problem;
pub mod solver;
pub mod tt;

pub use error::{Error, Result};
