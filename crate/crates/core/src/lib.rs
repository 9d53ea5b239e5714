pub mod bath;
pub mod cli;
pub mod ensemble;
pub mod error;
pub mod hierarchy;
pub mod model;
mod quadrature;
pub mod stochastic;

pub use error::{Error, Result};
