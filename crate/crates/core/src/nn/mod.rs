//! Minimal deterministic convolutional network engine in double precision.

pub mod activation;
pub mod adam;
pub mod conv;
pub mod serialize;
pub mod tensor;

pub use activation::{leaky_relu_backward, leaky_relu_forward};
pub use adam::{adam_step, AdamConfig, AdamState};
pub use conv::{conv_backward, conv_backward_params, conv_forward, ConvMode, LayerGrads, LayerParams};
pub use serialize::{layers_from_bytes, layers_to_bytes};
pub use tensor::{Dims4, Tensor4};
