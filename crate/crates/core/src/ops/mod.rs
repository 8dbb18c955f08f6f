//! Differentiable building blocks. Every op has a forward function and a
//! matching `*_backward` taking whatever context the forward produced.

pub mod activation;
pub mod adam;
pub mod batchnorm;
pub mod conv;
pub mod loss;
pub mod pool;

pub use activation::{relu, relu_backward};
pub use adam::{adam_step, AdamConfig, AdamState};
pub use batchnorm::{batchnorm, batchnorm_backward, batchnorm_forward, BnContext, BnGrads, Mode, RunningMoments};
pub use conv::{conv2d, conv2d_backward, deconv2, deconv2_backward, ConvGeometry, ConvGrads};
pub use loss::{softmax_xent, softmax_xent_masked};
pub use pool::{maxpool2, maxpool2_backward, Pooled};
