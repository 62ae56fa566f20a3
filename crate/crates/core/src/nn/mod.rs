//! A small CPU network engine with exact reverse-mode gradients.
//!
//! Tensors are NHWC and every computation runs in f64; checkpoints store
//! binary32.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod tensor;

pub use adam::{adam_update, AdamState};
pub use checkpoint::Checkpoint;
pub use layers::{Activation, GlobalPool};
pub use model::{
    loss_and_gradients, loss_only, model_backward, model_forward, update_running_stats, ForwardCache, Gradients,
    LossWeights, Mode, ModelConfig, NetworkParams, Param, Resolution,
};
pub use tensor::Tensor4;
