//! Minimal CPU network engine: im2col convolutions on top of
//! `matrixmultiply`, explicit forward tapes and hand-written backward passes.

mod adam;
mod l2net;
mod layers;
mod tensor;
mod unet;

pub use adam::Adam;
pub use l2net::{ConvSpec, DescriptorArch, DescriptorNet, DescriptorTape};
pub use layers::{l2_normalize, l2_normalize_backward, Conv2d};
pub(crate) use tensor::dgemm;
pub use tensor::{Param, Tensor};
pub use unet::{UNet, UNetArch, UNetTape};
