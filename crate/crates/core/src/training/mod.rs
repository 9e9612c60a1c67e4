//! The training objective, the optimization loop, transfer with a frozen
//! dictionary, and checkpoints.

mod checkpoint;
mod config;
mod loss;
mod trainer;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, MAGIC};
pub use config::TrainConfig;
pub use loss::{compute_loss, loss_on_tape, LossComponents};
pub use trainer::{fit, init_seed, is_transferred, transfer_fit, write_loss_log, EpochLoss, FitResult, Trainer};

use crate::data::DataError;
use crate::model::ModelError;
use crate::numerics::NumericsError;

#[derive(Debug, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("invalid train config `{key}`: {msg}")]
    Config { key: String, msg: String },
    #[error("source and target disagree on {key}: {source_value} vs {target_value}")]
    TransferMismatch {
        key: &'static str,
        source_value: usize,
        target_value: usize,
    },
    #[error("no training windows")]
    NoWindows,
    #[error("frozen tensor {0} changed during training")]
    FrozenChanged(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("io: {0}")]
    Io(String),
}
