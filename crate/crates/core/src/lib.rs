pub mod chain;
pub mod equilibrium;
pub mod error;
pub mod montecarlo;
pub mod values;
pub mod verify;
pub mod winner;

pub use error::{Error, Result};
