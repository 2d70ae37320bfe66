//! Differentiable primitives. Each forward has a matching explicit backward.

mod activation;
mod conv;
mod correlation;
mod upsample;
mod warp;

pub use activation::{leaky_relu, leaky_relu_backward, leaky_relu_inplace, DEFAULT_LEAKY_SLOPE};
pub use conv::{conv2d, conv2d_backward, ConvGeometry};
pub use correlation::{correlation1d, correlation1d_backward};
pub use upsample::{bilinear_upsample, bilinear_upsample_backward};
pub use warp::{warp_horizontal, warp_horizontal_backward};
