//! Training pipeline: configuration, data loading, degradation, loss,
//! optimizer, checkpoints and the training loop.

pub mod checkpoint;
pub mod config;
pub mod degrade;
pub mod loader;
pub mod optim;
pub mod train;

pub use checkpoint::{load_checkpoint, load_checkpoint_as, save_checkpoint, Checkpoint};
pub use config::TrainConfig;
pub use degrade::degrade_quality;
pub use loader::load_triples;
pub use optim::{lr_at_epoch, sgd_step};
pub use train::{bce_loss, train, Trainer};
