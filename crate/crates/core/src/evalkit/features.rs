use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{CtaeError, Result};
use crate::seqmodel::{MembershipMask, SubsetCode};
use crate::trainer::LatentSet;

/// Which latent dimensions a decoder sees.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subspace {
    Shared,
    Private(usize),
    Code(SubsetCode),
    All,
}

impl Subspace {
    pub fn dims(&self, mask: &MembershipMask) -> Result<Vec<usize>> {
        match self {
            Subspace::Shared => Ok(mask.shared_dims()),
            Subspace::Private(r) if *r < mask.regions() => Ok(mask.private_dims(*r)),
            Subspace::Private(r) => Err(CtaeError::Config(format!("no region {r}"))),
            Subspace::Code(c) => mask
                .block(c)
                .map(|b| b.indices.clone())
                .ok_or_else(|| CtaeError::Config(format!("mask has no block {c}"))),
            Subspace::All => Ok((0..mask.dims()).collect()),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Subspace::Shared => "shared".into(),
            Subspace::Private(r) => format!("private{r}"),
            Subspace::Code(c) => format!("code{c}"),
            Subspace::All => "all".into(),
        }
    }
}

/// Per-trial feature matrices `[dims × T]`, stored trial-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureView {
    pub subspace: Subspace,
    pub trials: usize,
    pub dims: usize,
    pub time_steps: usize,
    values: Vec<f64>,
    /// Time bins the decoders look at; all bins when `None`.
    pub window: Option<Range<usize>>,
}

impl FeatureView {
    pub fn new(subspace: Subspace, trials: usize, dims: usize, time_steps: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != trials * dims * time_steps {
            return Err(CtaeError::Shape(format!(
                "{} feature values for {trials} trials of {dims}x{time_steps}",
                values.len()
            )));
        }
        if time_steps == 0 {
            return Err(CtaeError::Shape("features need at least one time step".into()));
        }
        Ok(Self {
            subspace,
            trials,
            dims,
            time_steps,
            values,
            window: None,
        })
    }

    /// Rows of `src` (laid out `[K × D × T]`) selected by `subspace`.
    pub fn select(src: &[f64], set: &LatentSet, mask: &MembershipMask, subspace: Subspace) -> Result<Self> {
        if mask.dims() != set.dims || src.len() != set.trials * set.dims * set.time_steps {
            return Err(CtaeError::Shape("latents do not match the mask".into()));
        }
        let rows = subspace.dims(mask)?;
        let mut values = Vec::with_capacity(set.trials * rows.len() * set.time_steps);
        for k in 0..set.trials {
            values.extend(set.rows_of(src, k, &rows));
        }
        Self::new(subspace, set.trials, rows.len(), set.time_steps, values)
    }

    /// Fused latents restricted to `subspace`.
    pub fn fused(set: &LatentSet, mask: &MembershipMask, subspace: Subspace) -> Result<Self> {
        Self::select(&set.fused, set, mask, subspace)
    }

    pub fn with_window(mut self, window: Range<usize>) -> Result<Self> {
        if window.is_empty() || window.end > self.time_steps {
            return Err(CtaeError::Config(format!(
                "window {window:?} outside 0..{}",
                self.time_steps
            )));
        }
        self.window = Some(window);
        Ok(self)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn trial(&self, k: usize) -> &[f64] {
        let n = self.dims * self.time_steps;
        &self.values[k * n..(k + 1) * n]
    }

    pub fn get(&self, k: usize, i: usize, t: usize) -> f64 {
        self.values[(k * self.dims + i) * self.time_steps + t]
    }

    pub fn window_range(&self) -> Range<usize> {
        self.window.clone().unwrap_or(0..self.time_steps)
    }

    /// One row per trial holding every `(dim, bin)` inside the window,
    /// dimension-major.
    pub fn flattened(&self) -> Vec<Vec<f64>> {
        let w = self.window_range();
        (0..self.trials)
            .map(|k| {
                let mut row = Vec::with_capacity(self.dims * w.len());
                for i in 0..self.dims {
                    for t in w.clone() {
                        row.push(self.get(k, i, t));
                    }
                }
                row
            })
            .collect()
    }
}
