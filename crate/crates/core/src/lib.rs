pub mod cli;
pub mod design;
pub mod equilibrium;
pub mod error;
pub mod format;
mod linalg;
pub mod population;
pub mod sim;
pub mod values;

pub use error::{Error, Result};
