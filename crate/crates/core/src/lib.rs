pub mod ablation;
pub mod autograd;
pub mod checkpoint;
pub mod corpus;
pub mod diffusion;
pub mod encoders;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod kernels;
pub mod metrics;
pub mod objectives;
pub mod params;
pub mod pipeline;
pub mod sampling;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{ImageTensor, Scalar, Tensor};
