pub mod attention;
pub mod data;
pub mod error;
pub mod features;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
