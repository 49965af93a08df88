pub mod conformal;
pub mod engine;
pub mod error;
pub mod estimator;
pub mod gradcheck;
pub mod probe;
pub mod qsim;

pub use error::{Error, Result};
