//! Helmholtz machines with distributed distributional codes (DDC).
//!
//! Deep directed exponential-family models are trained by wake-sleep: the
//! sleep phase fits linear readouts of random encoding functions on
//! ancestral samples, and the wake phase assembles free-energy gradients
//! from the recognition network's expectations.

pub mod cli;
pub mod ddc;
pub mod error;
pub mod eval;
pub mod expfam;
pub mod math;
pub mod models;
pub mod params;
pub mod wakesleep;

pub use error::{Error, Result};
