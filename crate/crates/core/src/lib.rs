pub mod analysis;
pub mod cli;
pub mod cnn;
pub mod error;
pub mod io;
pub mod rgc;
pub mod stimulus;
pub mod training;

pub use error::{Error, Result};
