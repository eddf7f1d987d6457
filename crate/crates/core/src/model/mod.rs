//! The learnable pose regressor: a scene-shared MLP backbone with
//! per-scene linear heads, a homoscedastic pose loss, Adam, and bit-exact
//! checkpointing.

pub mod adam;
pub mod checkpoint;
pub mod loss;
pub mod mlp;
pub mod train;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use checkpoint::Checkpoint;
pub use loss::{pose_loss, pose_loss_grad, LossGrad};
pub use mlp::{add_head, forward, init_model, AprModel, Layer, ModelConfig, POSE_DIM};
pub use train::{
    batch_gradients, batch_step, compute_batch_loss, gradient_check, BatchGrads, FrameRef,
    GradCheck, LabelSource, TrainItem,
};
