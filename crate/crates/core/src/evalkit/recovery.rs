use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::linear::cross_validated_r2;
use crate::datasets::{plain_folds, GroundTruth};
use crate::error::{CtaeError, Result};
use crate::seqmodel::MembershipMask;
use crate::trainer::LatentSet;

pub const RECOVERY_FOLDS: usize = 5;

/// Cross-validated R² of planted latents predicted from recovered blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    /// Planted shared rows from the recovered shared block.
    pub shared_recovery: f64,
    /// Planted shared rows from each region's recovered private block.
    pub shared_leakage: Vec<f64>,
    /// Each region's planted private rows from its recovered private block.
    pub private_recovery: Vec<f64>,
    /// Each region's planted private rows from the recovered shared block.
    pub private_leakage: Vec<f64>,
}

/// Time-flattened design: one row per `(trial, bin)`, columns are `rows`
/// of a `[K × D × T]` array.
fn design(values: &[f64], k: usize, d: usize, t: usize, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(k * t, rows.len(), |n, a| {
        let (kk, s) = (n / t, n % t);
        values[(kk * d + rows[a]) * t + s]
    })
}

/// Scores the fused latents of `set` against the planted latents. Each
/// regression pools every `(trial, bin)` sample, with ridge strength chosen
/// by inner validation and folds drawn over trials from `seed`.
pub fn subspace_recovery(set: &LatentSet, mask: &MembershipMask, truth: &GroundTruth, seed: u64) -> Result<RecoveryReport> {
    if set.trials != truth.trials || set.time_steps != truth.time_steps {
        return Err(CtaeError::Shape(format!(
            "recovered latents cover {}x{} trials/bins, planted {}x{}",
            set.trials, set.time_steps, truth.trials, truth.time_steps
        )));
    }
    if mask.regions() != truth.mask.regions() || mask.dims() != set.dims {
        return Err(CtaeError::Shape("recovered and planted masks disagree".into()));
    }
    let (k, t) = (set.trials, set.time_steps);
    let folds = plain_folds(k, RECOVERY_FOLDS, seed)?;
    let trial_of: Vec<usize> = (0..k * t).map(|n| n / t).collect();
    let recovered = |rows: &[usize]| design(&set.fused, k, set.dims, t, rows);
    let planted = |rows: &[usize]| design(&truth.latent, k, truth.dims(), t, rows);
    let score = |x: &DMatrix<f64>, y: &DMatrix<f64>| -> Result<f64> {
        if y.ncols() == 0 {
            return Ok(0.0);
        }
        cross_validated_r2(x, y, &trial_of, &folds)
    };

    let s_hat = recovered(&mask.shared_dims());
    let s = planted(&truth.shared_rows());
    let regions = mask.regions();
    let mut report = RecoveryReport {
        shared_recovery: score(&s_hat, &s)?,
        shared_leakage: Vec::with_capacity(regions),
        private_recovery: Vec::with_capacity(regions),
        private_leakage: Vec::with_capacity(regions),
    };
    for r in 0..regions {
        let p_hat = recovered(&mask.private_dims(r));
        let p = planted(&truth.private_rows(r));
        report.shared_leakage.push(score(&p_hat, &s)?);
        report.private_recovery.push(score(&p_hat, &p)?);
        report.private_leakage.push(score(&s_hat, &p)?);
    }
    Ok(report)
}
