//! Training, evaluation, and model persistence.
//!
//! `loss` defines the combined cross-entropy/Dice objective, `train` runs
//! the optimization loop with scheduling and best-checkpoint tracking,
//! `metrics` scores binary masks, and `checkpoint` serializes parameters.

pub mod checkpoint;
pub mod loss;
pub mod metrics;
pub mod train;

pub use checkpoint::{load_params, load_params_into, save_params};
pub use loss::{bce_dice_taped, bce_dice_value, DICE_SMOOTH, PROB_EPS};
pub use metrics::{
    confusion_metrics, evaluate_masks, evaluate_model, ConfusionCounts, Metrics, MetricsReport,
};
pub use train::{
    train_model, update_learning_rate, write_history_csv, EpochStats, Optimizer, TrainConfig,
    TrainResult, TrainState,
};
