pub mod autodiff;
pub mod embedding;
pub mod eval;
pub mod error;
pub mod mapper;
pub mod mesh;
pub mod pipeline;
pub mod rng;
pub mod scene;
pub mod surrogate;
pub mod tensor;

pub use error::{Error, Result};
