pub mod alignment;
pub mod analysis;
pub mod autodiff;
pub mod classifier;
pub mod data;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod losses;
pub mod params;
pub mod resize_net;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type TrialSet32 = data::TrialSet<f32>;
pub type TrialSet64 = data::TrialSet<f64>;
