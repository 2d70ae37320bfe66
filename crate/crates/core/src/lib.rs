pub mod controller;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod loss;
pub mod network;
pub mod optim;
pub mod ops;
pub mod param;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use network::{DisparityPyramid, Network, NetworkConfig, PyramidGrad, Scope};
pub use param::{LayerId, ModuleId, Parameter};
pub use scalar::Scalar;
pub use tensor::{Shape4, Tensor4};

pub use controller::{AdaptationMode, Controller, StepReport};
pub use data::StereoFrame;

pub type Tensor = Tensor4<f32>;
pub type Tensor64 = Tensor4<f64>;
pub type Network32 = Network<f32>;
pub type Network64 = Network<f64>;
pub type Frame = StereoFrame<f32>;
