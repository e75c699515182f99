pub mod autodiff;
pub mod checkpoint;
pub mod dca;
pub mod error;
pub mod grn;
pub mod harness;
pub mod linalg;
pub mod rng;
pub mod tensor;
pub mod theory;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::Tensor;
