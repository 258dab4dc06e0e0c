//! INS/DVL velocity-aided navigation with an error-state Kalman filter whose
//! process noise is constant, innovation-adaptive, or predicted by a small
//! convolutional regressor.

pub mod bench;
pub mod eskf;
pub mod error;
pub mod io;
pub mod pronet;
pub mod sim;
pub mod strapdown;

pub use error::{Error, Result};
