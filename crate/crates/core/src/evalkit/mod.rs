//! Decoders and diagnostics for trained latents.

mod diagnostics;
mod features;
mod linear;
mod logistic;
mod recovery;
mod report;
mod timecourse;

pub use diagnostics::{
    alignment_diagnostics, gram_diagnostics, variance_per_latent, AlignmentDiagnostics, GramDiagnostics,
    VarianceReport, EFFECTIVE_DIM_THRESHOLD,
};
pub use features::{FeatureView, Subspace};
pub use linear::{cross_validated_r2, fit_linear_decoder, select_lambda, Ridge, INNER_FOLDS, RIDGE_GRID};
pub use logistic::{confusion_matrix, fit_logistic_decoder, fit_logistic_decoder_with, Logistic, LogisticOptions};
pub use recovery::{subspace_recovery, RecoveryReport, RECOVERY_FOLDS};
pub use report::{DecodeReport, TaskKind};
pub use timecourse::{time_resolved_decoding, time_resolved_decoding_with, TimeCurve};

/// Number of cross-validation folds used throughout.
pub const FOLDS: usize = 5;
