pub mod cli;
pub mod error;
pub mod fill;
pub mod forward;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod psf;
pub mod registration;
pub mod simulator;
pub mod solver;

pub use error::{Error, Result, Warning};
