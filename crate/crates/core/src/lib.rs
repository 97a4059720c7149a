pub mod data;
pub mod error;
pub mod eval;
pub mod median;
pub mod model;
pub mod optim;
pub mod rng;
pub mod saliency;
pub mod scalar;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

/// Concrete aliases for the two supported dtypes.
pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
