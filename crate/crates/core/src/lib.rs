//! Resilient setpoint bounds for automatic generation control.

pub mod attacks;
pub mod control;
pub mod error;
pub mod linalg;
pub mod model;
pub mod plot;
pub mod reachability;
pub mod scenario;
pub mod sdp;
pub mod synthesis;

pub use error::{Error, Result};
