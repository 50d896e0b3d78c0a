//! Convolutional network pieces and the training harness.

mod activation;
mod adam;
mod conv;
mod loss;
mod model;
mod norm;
mod pool;
mod train;

pub use activation::{dropout_mask, lrelu, lrelu_backward, Mode, LEAK};
pub use adam::{Adam, AdamConfig};
pub use conv::{conv2d_backward, conv2d_forward};
pub use loss::{accuracy, softmax_xent, softmax_xent_backward};
pub use norm::{
    batchnorm_eval, batchnorm_eval_backward, batchnorm_train, batchnorm_train_backward, update_running,
    BnCache, EPS as BN_EPS, MOMENTUM as BN_MOMENTUM,
};
pub use model::{DropoutConfig, Forward, HeadKind, Model, ModelConfig, ParamCounts, ParamRole};
pub use pool::{maxpool_backward, maxpool_forward};
pub use train::{
    evaluate, load_checkpoint, read_metrics, save_checkpoint, train, write_metrics, Check, EarlyStopping, MetricsRow,
    StopReason, TrainConfig, TrainData, TrainOutcome, TrainState,
};
