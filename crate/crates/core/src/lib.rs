pub mod approx;
pub mod boxsimplex;
pub mod error;
pub mod flow;
pub mod generate;
pub mod graph;
pub mod minoragg;
pub mod oracle;
pub mod seed;
pub mod sparse;

pub use error::{Error, Result};
