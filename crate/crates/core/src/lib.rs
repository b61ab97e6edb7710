pub mod basis;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod instance;
pub mod io;
pub mod nrsfm;
pub mod prototype;
pub mod seed;
pub mod synth;

pub use error::{Error, ErrorClass, Result};
