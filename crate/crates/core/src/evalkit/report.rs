use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Continuous,
    Discrete,
}

/// Cross-validated decoding result. Scores are R² for continuous targets
/// and accuracy for labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeReport {
    pub kind: TaskKind,
    pub fold_scores: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation across folds.
    pub sd: f64,
    /// Row-normalized, pooled over the test folds (discrete tasks only).
    pub confusion: Option<Vec<Vec<f64>>>,
    /// Held-out predictions: `[K × q × bins]` values for continuous
    /// targets, predicted class ids for labels.
    pub predictions: Vec<f64>,
    /// SHA-256 of the fitted coefficients, hex.
    pub coefficients_digest: String,
    pub warnings: Vec<String>,
}

impl DecodeReport {
    pub(crate) fn new(
        kind: TaskKind,
        fold_scores: Vec<f64>,
        confusion: Option<Vec<Vec<f64>>>,
        predictions: Vec<f64>,
        coefficients_digest: String,
        warnings: Vec<String>,
    ) -> Self {
        let (mean, sd) = mean_sd(&fold_scores);
        Self {
            kind,
            fold_scores,
            mean,
            sd,
            confusion,
            predictions,
            coefficients_digest,
            warnings,
        }
    }
}

pub(crate) fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 {
        (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

pub(crate) fn digest(values: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
