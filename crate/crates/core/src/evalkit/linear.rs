use nalgebra::DMatrix;

use super::features::FeatureView;
use super::report::{digest, DecodeReport, TaskKind};
use crate::datasets::complement;
use crate::error::{CtaeError, Result};

/// Candidate ridge strengths, searched by inner cross-validation.
pub const RIDGE_GRID: [f64; 7] = [1e-4, 1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2];
pub const INNER_FOLDS: usize = 5;

/// Ridge regression on standardized inputs with an unpenalized intercept.
/// Minimizes `(1/n)‖Y − XW‖² + λ‖W‖²`.
#[derive(Debug, Clone)]
pub struct Ridge {
    pub lambda: f64,
    x_mean: Vec<f64>,
    x_scale: Vec<f64>,
    active: Vec<bool>,
    y_mean: Vec<f64>,
    coef: DMatrix<f64>,
}

fn column_stats(x: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>, Vec<bool>) {
    let n = x.nrows() as f64;
    let mut mean = Vec::with_capacity(x.ncols());
    let mut scale = Vec::with_capacity(x.ncols());
    let mut active = Vec::with_capacity(x.ncols());
    for c in x.column_iter() {
        let m = c.sum() / n;
        let sd = (c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
        let on = sd > 1e-12 * (1.0 + m.abs());
        mean.push(m);
        scale.push(if on { sd } else { 1.0 });
        active.push(on);
    }
    (mean, scale, active)
}

impl Ridge {
    pub fn fit(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> Result<Self> {
        if x.nrows() != y.nrows() || x.nrows() == 0 {
            return Err(CtaeError::Shape(format!("ridge with {} inputs and {} targets", x.nrows(), y.nrows())));
        }
        let n = x.nrows() as f64;
        let (x_mean, x_scale, active) = column_stats(x);
        let y_mean: Vec<f64> = y.column_iter().map(|c| c.sum() / n).collect();
        let xs = standardize(x, &x_mean, &x_scale, &active);
        let mut yc = y.clone();
        for (j, mut c) in yc.column_iter_mut().enumerate() {
            c.add_scalar_mut(-y_mean[j]);
        }
        let p = x.ncols();
        let mut a = xs.transpose() * &xs / n;
        for i in 0..p {
            a[(i, i)] += lambda;
        }
        let b = xs.transpose() * yc / n;
        let coef = if p == 0 {
            DMatrix::zeros(0, y.ncols())
        } else {
            a.cholesky()
                .ok_or_else(|| CtaeError::Data("ridge system is not positive definite".into()))?
                .solve(&b)
        };
        Ok(Self {
            lambda,
            x_mean,
            x_scale,
            active,
            y_mean,
            coef,
        })
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let xs = standardize(x, &self.x_mean, &self.x_scale, &self.active);
        let mut out = xs * &self.coef;
        for (j, mut c) in out.column_iter_mut().enumerate() {
            c.add_scalar_mut(self.y_mean[j]);
        }
        out
    }

    /// True when no input column varied in the training data.
    pub fn degenerate(&self) -> bool {
        !self.active.iter().any(|&a| a)
    }

    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.coef
    }
}

fn standardize(x: &DMatrix<f64>, mean: &[f64], scale: &[f64], active: &[bool]) -> DMatrix<f64> {
    let mut xs = x.clone();
    for (j, mut c) in xs.column_iter_mut().enumerate() {
        if active[j] {
            c.apply(|v| *v = (*v - mean[j]) / scale[j]);
        } else {
            c.fill(0.0);
        }
    }
    xs
}

fn sse(y: &DMatrix<f64>, yhat: &DMatrix<f64>) -> f64 {
    (y - yhat).norm_squared()
}

/// Sum of squares about the column means of `y`.
fn sst(y: &DMatrix<f64>) -> f64 {
    let n = y.nrows() as f64;
    y.column_iter()
        .map(|c| {
            let m = c.sum() / n;
            c.iter().map(|v| (v - m) * (v - m)).sum::<f64>()
        })
        .sum()
}

fn rows_where(groups: &[usize], keep: impl Fn(usize) -> bool) -> Vec<usize> {
    groups.iter().enumerate().filter(|(_, &g)| keep(g)).map(|(i, _)| i).collect()
}

/// Picks a ridge strength for several regression problems that share their
/// rows' grouping, by summed held-out error over `INNER_FOLDS` folds of the
/// groups. `groups` must be numbered `0..m`.
pub fn select_lambda(problems: &[(&DMatrix<f64>, &DMatrix<f64>)], groups: &[usize]) -> Result<f64> {
    let m = groups.iter().max().map_or(0, |g| g + 1);
    if m < 2 {
        return Ok(1.0);
    }
    let nf = INNER_FOLDS.min(m);
    let mut best = (f64::INFINITY, RIDGE_GRID[0]);
    for &lambda in &RIDGE_GRID {
        let mut err = 0.0;
        for f in 0..nf {
            let tr = rows_where(groups, |g| g % nf != f);
            let te = rows_where(groups, |g| g % nf == f);
            for (x, y) in problems {
                let fit = Ridge::fit(&x.select_rows(&tr), &y.select_rows(&tr), lambda)?;
                let yt = y.select_rows(&te);
                err += sse(&yt, &fit.predict(&x.select_rows(&te)));
            }
        }
        if err < best.0 {
            best = (err, lambda);
        }
    }
    Ok(best.1)
}

/// Out-of-fold R² of `y` regressed on `x`. Rows belong to trials given by
/// `trial_of`; `folds` partition the trials. Predictions from all folds are
/// pooled and scored against the overall column means.
pub fn cross_validated_r2(x: &DMatrix<f64>, y: &DMatrix<f64>, trial_of: &[usize], folds: &[Vec<usize>]) -> Result<f64> {
    if trial_of.len() != x.nrows() || x.nrows() != y.nrows() {
        return Err(CtaeError::Shape("regression rows do not line up".into()));
    }
    let k = trial_of.iter().max().map_or(0, |t| t + 1);
    let mut fold_of = vec![usize::MAX; k];
    for (f, fold) in folds.iter().enumerate() {
        for &t in fold {
            fold_of[t] = f;
        }
    }
    let mut pred = DMatrix::zeros(y.nrows(), y.ncols());
    for f in 0..folds.len() {
        let tr = rows_where(trial_of, |t| fold_of[t] != f);
        let te = rows_where(trial_of, |t| fold_of[t] == f);
        if te.is_empty() || tr.is_empty() {
            continue;
        }
        let (xt, yt) = (x.select_rows(&tr), y.select_rows(&tr));
        let groups = renumber(&tr.iter().map(|&i| trial_of[i]).collect::<Vec<_>>());
        let lambda = select_lambda(&[(&xt, &yt)], &groups)?;
        let p = Ridge::fit(&xt, &yt, lambda)?.predict(&x.select_rows(&te));
        for (a, &i) in te.iter().enumerate() {
            pred.set_row(i, &p.row(a));
        }
    }
    let total = sst(y);
    Ok(if total > 0.0 { 1.0 - sse(y, &pred) / total } else { 0.0 })
}

/// Maps arbitrary ids to `0..m` in order of first appearance.
fn renumber(ids: &[usize]) -> Vec<usize> {
    let mut seen = std::collections::HashMap::new();
    ids.iter()
        .map(|&i| {
            let next = seen.len();
            *seen.entry(i).or_insert(next)
        })
        .collect()
}

/// Per-time-point ridge decoding of continuous targets `[K × q × T]`.
/// One ridge strength is chosen per outer fold by inner validation; fold
/// scores are R² pooled over the window's bins and target dimensions.
pub fn fit_linear_decoder(features: &FeatureView, targets: &[f64], target_dims: usize, folds: &[Vec<usize>]) -> Result<DecodeReport> {
    let (k, p, t) = (features.trials, features.dims, features.time_steps);
    let q = target_dims;
    if targets.len() != k * q * t || q == 0 {
        return Err(CtaeError::Shape(format!("{} target values for {k} trials of {q}x{t}", targets.len())));
    }
    check_folds(folds, k)?;
    let window: Vec<usize> = features.window_range().collect();
    let x_at = |idx: &[usize], s: usize| DMatrix::from_fn(idx.len(), p, |a, i| features.get(idx[a], i, s));
    let y_at = |idx: &[usize], s: usize| DMatrix::from_fn(idx.len(), q, |a, j| targets[(idx[a] * q + j) * t + s]);

    let mut scores = Vec::with_capacity(folds.len());
    let mut predictions = vec![0.0; k * q * window.len()];
    let mut coefs = Vec::new();
    let mut warnings = Vec::new();
    for (f, test) in folds.iter().enumerate() {
        let train = complement(k, test);
        let xs: Vec<_> = window.iter().map(|&s| x_at(&train, s)).collect();
        let ys: Vec<_> = window.iter().map(|&s| y_at(&train, s)).collect();
        let groups: Vec<usize> = (0..train.len()).collect();
        let problems: Vec<_> = xs.iter().zip(&ys).collect();
        let lambda = select_lambda(&problems, &groups)?;
        let (mut err, mut tot, mut degenerate) = (0.0, 0.0, true);
        for (wi, &s) in window.iter().enumerate() {
            let fit = Ridge::fit(&xs[wi], &ys[wi], lambda)?;
            degenerate &= fit.degenerate();
            coefs.extend(fit.coefficients().iter().copied());
            let yt = y_at(test, s);
            let yhat = fit.predict(&x_at(test, s));
            err += sse(&yt, &yhat);
            tot += sst(&yt);
            for (a, &kk) in test.iter().enumerate() {
                for j in 0..q {
                    predictions[(kk * q + j) * window.len() + wi] = yhat[(a, j)];
                }
            }
        }
        if degenerate {
            warnings.push(format!("fold {f}: features are constant, R² reported as 0"));
            scores.push(0.0);
        } else {
            scores.push(if tot > 0.0 { 1.0 - err / tot } else { 0.0 });
        }
    }
    Ok(DecodeReport::new(TaskKind::Continuous, scores, None, predictions, digest(&coefs), warnings))
}

pub(crate) fn check_folds(folds: &[Vec<usize>], k: usize) -> Result<()> {
    if folds.len() < 2 {
        return Err(CtaeError::Config(format!("need at least two folds, got {}", folds.len())));
    }
    let mut seen = vec![false; k];
    for fold in folds {
        if fold.is_empty() {
            return Err(CtaeError::Config("empty fold".into()));
        }
        for &i in fold {
            if i >= k || std::mem::replace(&mut seen[i], true) {
                return Err(CtaeError::Config(format!("fold index {i} out of range or repeated")));
            }
        }
    }
    Ok(())
}
