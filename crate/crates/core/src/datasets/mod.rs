//! Recordings, preprocessing, trial splits and the planted-latent generator.

mod preprocess;
mod recording;
mod split;
mod synthetic;

pub use preprocess::{
    bin_spikes, gaussian_kernel, gaussian_smooth, parse_event_list, read_event_list, smooth_series, SpikeEvent,
};
pub use recording::{Dataset, RegionRecording, TrialTargets, ValueKind};
pub use split::{complement, plain_folds, split_trials, stratified_folds};
pub use synthetic::{generate_synthetic, orthonormalize_rows, GroundTruth, Mixing, MixingMap, SyntheticSpec};
