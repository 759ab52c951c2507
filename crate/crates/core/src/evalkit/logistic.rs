use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::features::FeatureView;
use super::linear::check_folds;
use super::report::{digest, DecodeReport, TaskKind};
use crate::datasets::complement;
use crate::error::{CtaeError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticOptions {
    /// L2 penalty on the weights (not the intercepts); keeps separable
    /// problems bounded.
    pub l2: f64,
    /// Stop once the objective changes by less than this between steps.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        Self {
            l2: 1e-3,
            tol: 1e-6,
            max_iter: 5000,
        }
    }
}

/// Multinomial logistic regression on per-column standardized features.
#[derive(Debug, Clone)]
pub struct Logistic {
    pub classes: usize,
    mean: Vec<f64>,
    scale: Vec<f64>,
    active: Vec<bool>,
    weights: DMatrix<f64>,
    bias: Vec<f64>,
    pub iterations: usize,
}

struct Objective<'a> {
    z: &'a DMatrix<f64>,
    y: &'a [usize],
    l2: f64,
}

impl Objective<'_> {
    fn value_grad(&self, w: &DMatrix<f64>, b: &[f64], grad: bool) -> (f64, DMatrix<f64>, Vec<f64>) {
        let n = self.z.nrows() as f64;
        let c = w.ncols();
        let mut logits = self.z * w;
        let mut loss = 0.0;
        for (i, mut row) in logits.row_iter_mut().enumerate() {
            let mut mx = f64::NEG_INFINITY;
            for j in 0..c {
                row[j] += b[j];
                mx = mx.max(row[j]);
            }
            let mut s = 0.0;
            for j in 0..c {
                row[j] = (row[j] - mx).exp();
                s += row[j];
            }
            loss -= (row[self.y[i]] / s).ln();
            row /= s;
            if grad {
                row[self.y[i]] -= 1.0;
            }
        }
        let value = loss / n + 0.5 * self.l2 * w.norm_squared();
        if !grad {
            return (value, DMatrix::zeros(0, 0), Vec::new());
        }
        let gw = self.z.transpose() * &logits / n + w * self.l2;
        let gb = logits.column_iter().map(|col| col.sum() / n).collect();
        (value, gw, gb)
    }
}

impl Logistic {
    /// Fits on `rows` (one per trial) by accelerated gradient descent with
    /// backtracking and restarts.
    pub fn fit(rows: &[Vec<f64>], labels: &[usize], classes: usize, opts: &LogisticOptions) -> Result<Self> {
        if rows.len() != labels.len() || rows.is_empty() {
            return Err(CtaeError::Shape(format!("{} rows for {} labels", rows.len(), labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(CtaeError::Data(format!("label {bad} outside {classes} classes")));
        }
        let p = rows[0].len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; p];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; p];
        for r in rows {
            for j in 0..p {
                var[j] += (r[j] - mean[j]).powi(2) / n;
            }
        }
        let active: Vec<bool> = (0..p).map(|j| var[j].sqrt() > 1e-12 * (1.0 + mean[j].abs())).collect();
        let scale: Vec<f64> = (0..p).map(|j| if active[j] { var[j].sqrt() } else { 1.0 }).collect();
        let mut model = Self {
            classes,
            mean,
            scale,
            active,
            weights: DMatrix::zeros(p, classes),
            bias: vec![0.0; classes],
            iterations: 0,
        };
        let z = model.standardized(rows);
        let obj = Objective { z: &z, y: labels, l2: opts.l2 };

        let (mut w, mut b) = (model.weights.clone(), model.bias.clone());
        let (mut yw, mut yb) = (w.clone(), b.clone());
        let mut fx = obj.value_grad(&w, &b, false).0;
        let (mut t, mut lip) = (1.0f64, 1.0f64);
        for it in 0..opts.max_iter {
            model.iterations = it + 1;
            let (fy, gw, gb) = obj.value_grad(&yw, &yb, true);
            let (nw, nb, fnew) = loop {
                let nw = &yw - &gw / lip;
                let nb: Vec<f64> = yb.iter().zip(&gb).map(|(v, g)| v - g / lip).collect();
                let fnew = obj.value_grad(&nw, &nb, false).0;
                let step2 = (&nw - &yw).norm_squared() + nb.iter().zip(&yb).map(|(a, c)| (a - c).powi(2)).sum::<f64>();
                let lin = (&nw - &yw).dot(&gw) + nb.iter().zip(&yb).zip(&gb).map(|((a, c), g)| (a - c) * g).sum::<f64>();
                if fnew <= fy + lin + 0.5 * lip * step2 + 1e-12 * fy.abs() || lip > 1e12 {
                    break (nw, nb, fnew);
                }
                lip *= 2.0;
            };
            if fnew > fx {
                t = 1.0;
                yw = w.clone();
                yb = b.clone();
                continue;
            }
            let tn = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
            let beta = (t - 1.0) / tn;
            yw = &nw + (&nw - &w) * beta;
            yb = nb.iter().zip(&b).map(|(a, c)| a + beta * (a - c)).collect();
            let change = (fx - fnew).abs();
            w = nw;
            b = nb;
            fx = fnew;
            t = tn;
            lip *= 0.9;
            if change < opts.tol {
                break;
            }
        }
        if !fx.is_finite() {
            return Err(CtaeError::Data("logistic fit diverged".into()));
        }
        model.weights = w;
        model.bias = b;
        Ok(model)
    }

    /// Standardizes with the training statistics; constant columns become 0.
    pub fn standardized(&self, rows: &[Vec<f64>]) -> DMatrix<f64> {
        let p = self.mean.len();
        DMatrix::from_fn(rows.len(), p, |i, j| {
            if self.active[j] {
                (rows[i][j] - self.mean[j]) / self.scale[j]
            } else {
                0.0
            }
        })
    }

    /// Class with the largest logit for each standardized row; ties go to
    /// the lower class id.
    pub fn predict_standardized(&self, z: &DMatrix<f64>) -> Vec<usize> {
        let logits = z * &self.weights;
        logits
            .row_iter()
            .map(|row| {
                let mut best = (f64::NEG_INFINITY, 0);
                for j in 0..self.classes {
                    let v = row[j] + self.bias[j];
                    if v > best.0 {
                        best = (v, j);
                    }
                }
                best.1
            })
            .collect()
    }

    pub fn predict(&self, rows: &[Vec<f64>]) -> Vec<usize> {
        self.predict_standardized(&self.standardized(rows))
    }

    pub fn coefficients(&self) -> Vec<f64> {
        self.weights.iter().chain(&self.bias).copied().collect()
    }
}

pub(crate) fn class_count(labels: &[usize]) -> Result<usize> {
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let present = labels.iter().collect::<std::collections::BTreeSet<_>>().len();
    if present < 2 {
        return Err(CtaeError::Data(format!("need at least two classes, found {present}")));
    }
    Ok(classes)
}

/// Row-normalized confusion matrix (true class by row). Classes that never
/// occur get an all-zero row.
pub fn confusion_matrix(truth: &[usize], predicted: &[usize], classes: usize) -> Vec<Vec<f64>> {
    let mut m = vec![vec![0.0; classes]; classes];
    for (&a, &b) in truth.iter().zip(predicted) {
        m[a][b] += 1.0;
    }
    for row in &mut m {
        let s: f64 = row.iter().sum();
        if s > 0.0 {
            row.iter_mut().for_each(|v| *v /= s);
        }
    }
    m
}

pub(crate) fn accuracy(truth: &[usize], predicted: &[usize]) -> f64 {
    let hits = truth.iter().zip(predicted).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len() as f64
}

/// One fitted classifier per fold, with its train and test trials.
pub(crate) struct FoldFit {
    pub model: Logistic,
    pub test: Vec<usize>,
}

pub(crate) fn fit_folds(rows: &[Vec<f64>], labels: &[usize], folds: &[Vec<usize>], opts: &LogisticOptions) -> Result<(usize, Vec<FoldFit>)> {
    if rows.len() != labels.len() {
        return Err(CtaeError::Shape(format!("{} trials but {} labels", rows.len(), labels.len())));
    }
    check_folds(folds, rows.len())?;
    let classes = class_count(labels)?;
    let mut fits = Vec::with_capacity(folds.len());
    for test in folds {
        let train = complement(rows.len(), test);
        let tr_rows: Vec<Vec<f64>> = train.iter().map(|&i| rows[i].clone()).collect();
        let tr_labels: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
        let model = Logistic::fit(&tr_rows, &tr_labels, classes, opts)?;
        fits.push(FoldFit { model, test: test.clone() });
    }
    Ok((classes, fits))
}

/// Cross-validated multinomial classification of trials from their
/// time-flattened features.
pub fn fit_logistic_decoder(features: &FeatureView, labels: &[usize], folds: &[Vec<usize>]) -> Result<DecodeReport> {
    fit_logistic_decoder_with(features, labels, folds, &LogisticOptions::default())
}

pub fn fit_logistic_decoder_with(
    features: &FeatureView,
    labels: &[usize],
    folds: &[Vec<usize>],
    opts: &LogisticOptions,
) -> Result<DecodeReport> {
    let rows = features.flattened();
    let (classes, fits) = fit_folds(&rows, labels, folds, opts)?;
    let mut predictions = vec![0.0; rows.len()];
    let (mut truth, mut pred) = (Vec::new(), Vec::new());
    let mut scores = Vec::with_capacity(fits.len());
    let mut coefs = Vec::new();
    let mut warnings = Vec::new();
    for (f, fit) in fits.iter().enumerate() {
        let test_rows: Vec<Vec<f64>> = fit.test.iter().map(|&i| rows[i].clone()).collect();
        let p = fit.model.predict(&test_rows);
        let t: Vec<usize> = fit.test.iter().map(|&i| labels[i]).collect();
        scores.push(accuracy(&t, &p));
        for (&i, &c) in fit.test.iter().zip(&p) {
            predictions[i] = c as f64;
        }
        if fit.model.iterations >= opts.max_iter {
            warnings.push(format!("fold {f}: stopped at the iteration limit"));
        }
        coefs.extend(fit.model.coefficients());
        truth.extend(t);
        pred.extend(p);
    }
    Ok(DecodeReport::new(
        TaskKind::Discrete,
        scores,
        Some(confusion_matrix(&truth, &pred, classes)),
        predictions,
        digest(&coefs),
        warnings,
    ))
}
