pub mod admm;
pub mod baselines;
pub mod dtrace;
pub mod error;
pub mod linalg;
pub mod pipeline;
pub mod simgen;
pub mod study_data;

pub use error::{Error, Result};
