pub mod encoders;
pub mod error;
pub mod fusion;
pub mod numeric;
pub mod scenegen;
pub mod textexp;
pub mod training;

pub use error::{Error, Result};
