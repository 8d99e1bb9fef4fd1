//! Frequency locking of modulated waves under modulated external forcing.

pub mod cli;
pub mod config;
pub mod error;
pub mod integrate;
pub mod interp;
pub mod locking;
pub mod model;
pub mod orbit;
pub mod quadrature;
pub mod sim;

pub use error::{Error, Result};
