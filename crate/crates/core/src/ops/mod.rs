//! Forward and backward kernels. Gradients are wired by hand per layer.

pub mod activation;
pub mod conv;
pub mod init;
pub mod loss;
pub mod pool;
pub mod upsample;

pub use activation::{relu_backward, relu_forward};
pub use conv::{
    conv2d_backward, conv2d_forward, conv_transpose2d_backward, conv_transpose2d_forward,
    ConvGrads, ConvParams,
};
pub use init::xavier_init;
pub use loss::{softmax_xent_pixelwise, LossOutput};
pub use pool::{maxpool_backward, maxpool_forward, PoolIndices};
pub use upsample::{
    bilinear_upsample_params, resize_bilinear, resize_bilinear_backward, upsample,
    upsample_backward, UpsampleMode,
};
