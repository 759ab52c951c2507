use serde::{Deserialize, Serialize};

use super::features::FeatureView;
use super::logistic::{accuracy, fit_folds, LogisticOptions};
use super::report::mean_sd;
use crate::error::{CtaeError, Result};

/// Accuracy of a once-trained classifier when only a window of bins
/// around each center keeps its values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeCurve {
    pub window: usize,
    /// Mean over folds, one value per center bin.
    pub accuracy: Vec<f64>,
    /// Sample standard deviation over folds.
    pub sd: Vec<f64>,
    /// Centers whose window was clipped by a trial edge.
    pub truncated: Vec<bool>,
    /// Mean fold accuracy with every bin visible.
    pub full_accuracy: f64,
}

impl TimeCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin,accuracy,sd,truncated\n");
        for t in 0..self.accuracy.len() {
            s += &format!("{t},{},{},{}\n", self.accuracy[t], self.sd[t], self.truncated[t]);
        }
        s
    }
}

/// Sliding-window decoding. Each fold's classifier is trained once on all
/// bins; at test time standardized features outside `[c − w/2, c + w/2]`
/// are set to zero, which is the training mean. A window of `T` or more
/// bins keeps everything for every center.
pub fn time_resolved_decoding(features: &FeatureView, labels: &[usize], window: usize, folds: &[Vec<usize>]) -> Result<TimeCurve> {
    time_resolved_decoding_with(features, labels, window, folds, &LogisticOptions::default())
}

pub fn time_resolved_decoding_with(
    features: &FeatureView,
    labels: &[usize],
    window: usize,
    folds: &[Vec<usize>],
    opts: &LogisticOptions,
) -> Result<TimeCurve> {
    let t = features.time_steps;
    if window == 0 || (window < t && window % 2 == 0) {
        return Err(CtaeError::Config(format!("window must be odd or at least {t}, got {window}")));
    }
    let mut full = features.clone();
    full.window = None;
    let rows = full.flattened();
    let (_, fits) = fit_folds(&rows, labels, folds, opts)?;
    let half = window / 2;
    let dims = features.dims;

    let mut per_fold = vec![vec![0.0; t]; fits.len()];
    let mut full_scores = Vec::with_capacity(fits.len());
    for (f, fit) in fits.iter().enumerate() {
        let test_rows: Vec<Vec<f64>> = fit.test.iter().map(|&i| rows[i].clone()).collect();
        let truth: Vec<usize> = fit.test.iter().map(|&i| labels[i]).collect();
        let z = fit.model.standardized(&test_rows);
        full_scores.push(accuracy(&truth, &fit.model.predict_standardized(&z)));
        for c in 0..t {
            let mut zc = z.clone();
            if window < t {
                let (lo, hi) = (c.saturating_sub(half), (c + half).min(t - 1));
                for i in 0..dims {
                    for s in (0..lo).chain(hi + 1..t) {
                        zc.column_mut(i * t + s).fill(0.0);
                    }
                }
            }
            per_fold[f][c] = accuracy(&truth, &fit.model.predict_standardized(&zc));
        }
    }
    let mut accuracy_curve = Vec::with_capacity(t);
    let mut sd = Vec::with_capacity(t);
    for c in 0..t {
        let (m, s) = mean_sd(&per_fold.iter().map(|f| f[c]).collect::<Vec<_>>());
        accuracy_curve.push(m);
        sd.push(s);
    }
    let truncated = (0..t).map(|c| window < t && (c < half || c + half >= t)).collect();
    Ok(TimeCurve {
        window,
        accuracy: accuracy_curve,
        sd,
        truncated,
        full_accuracy: mean_sd(&full_scores).0,
    })
}
