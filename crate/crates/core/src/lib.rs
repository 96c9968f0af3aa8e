pub mod control;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod predict;
pub mod scene;
pub mod service;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
