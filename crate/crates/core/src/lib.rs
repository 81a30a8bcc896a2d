pub mod classifier;
pub mod container;
pub mod encoder;
pub mod error;
pub mod harness;
pub mod optim;
pub mod sphere;
pub mod style;
pub mod world;

pub use error::{Error, Result};
