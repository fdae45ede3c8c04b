//! MSE training of the gate with Adam, and the checkpoint format.

mod checkpoint;
mod config;
mod gradcheck;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{Precision, TrainConfig, TrainSettings};
pub use gradcheck::{composite_gradcheck, composite_gradcheck_seeds};
pub use train::{batch_loss, batch_seed, check_compatible, mean_baseline_loss, mse_loss, train};
