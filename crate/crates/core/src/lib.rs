pub mod allocation;
pub mod analytic;
pub mod calibration;
pub mod chebyshev;
pub mod collocation;
pub mod error;
pub mod homogeneous;
pub mod simulator;
pub mod stability;
pub mod types;

pub use error::{CoreError, Result};
