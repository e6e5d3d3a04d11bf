//! Minimal differentiable network: dense layers with batch normalization,
//! ReLU, plain SGD and group-lasso-regularized sparse training.

pub mod grad;
pub mod loss;
pub mod mat;
pub mod model;
pub mod train;

pub use grad::{loss_and_grad, NetGrads};
pub use loss::{group_lasso_penalty, loss_with_group_lasso, softmax_cross_entropy, UnitGroup};
pub use mat::Mat;
pub use model::{
    BaseModel, BatchNorm, Dense, HiddenBlock, LayerKind, LayerSpec, ModelShape, Network,
};
pub use train::{sparse_train, TrainStats, WEIGHT_DECAY};
