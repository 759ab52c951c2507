//! Training loop, checkpoints and hyperparameter grid search.

mod checkpoint;
mod config;
mod grid;
mod prepared;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointRecord};
pub use config::TrainConfig;
pub use grid::{config_hash, grid_search, rank_results, GridOptions, GridOutcome, GridResult, GridSpec};
pub use prepared::{infer_latents, LatentSet, PreparedData, Standardizer};
pub use train::{evaluate, log_to_csv, train, write_log, EpochLog, TrainOutcome, Trainer, LOG_HEADER};
