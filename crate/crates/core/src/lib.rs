pub mod bayes;
pub mod calibration;
pub mod conic;
pub mod constraints;
pub mod error;
pub mod interval;
pub mod io;
pub mod linalg;
pub mod model;
pub mod simulation;
pub mod stats;
pub mod study;
pub mod validate;

pub use error::{Error, Result};
pub use nalgebra;
