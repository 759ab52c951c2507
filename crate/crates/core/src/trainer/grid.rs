use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::checkpoint::{load_checkpoint, save_checkpoint, CheckpointRecord};
use super::config::TrainConfig;
use super::train::Trainer;
use crate::datasets::Dataset;
use crate::error::{CtaeError, Result};
use crate::seqmodel::SubsetCode;

/// Value lists whose cartesian product defines the cells. Cells vary the
/// last list fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub layers: Vec<usize>,
    /// Total latent size; spread evenly over the base layout's blocks.
    pub latent_dims: Vec<usize>,
    pub shared: Vec<f64>,
    pub align: Vec<f64>,
    pub orth: Vec<f64>,
    pub learning_rates: Vec<f64>,
    pub warmups: Vec<usize>,
    /// Epoch budget per cell; the base config's epochs when `None`.
    pub epoch_cap: Option<usize>,
}

impl GridSpec {
    /// A one-cell grid reproducing `base`.
    pub fn single(base: &TrainConfig) -> Self {
        Self {
            layers: vec![base.model.layers],
            latent_dims: vec![base.model.latent_dim()],
            shared: vec![base.weights.shared],
            align: vec![base.weights.align],
            orth: vec![base.weights.orth],
            learning_rates: vec![base.learning_rate],
            warmups: vec![base.weights.warmup],
            epoch_cap: None,
        }
    }

    pub fn len(&self) -> usize {
        self.layers.len()
            * self.latent_dims.len()
            * self.shared.len()
            * self.align.len()
            * self.orth.len()
            * self.learning_rates.len()
            * self.warmups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every cell applied to `base`, in enumeration order.
    pub fn cells(&self, base: &TrainConfig) -> Result<Vec<TrainConfig>> {
        if self.is_empty() {
            return Err(CtaeError::Config("grid has no cells".into()));
        }
        let mut out = Vec::with_capacity(self.len());
        for &l in &self.layers {
            for &d in &self.latent_dims {
                for &s in &self.shared {
                    for &a in &self.align {
                        for &o in &self.orth {
                            for &lr in &self.learning_rates {
                                for &e in &self.warmups {
                                    let mut c = base.clone();
                                    c.model.layers = l;
                                    c.model.latent = spread_latent(&base.model.latent, d)?;
                                    c.weights.shared = s;
                                    c.weights.align = a;
                                    c.weights.orth = o;
                                    c.weights.warmup = e;
                                    c.learning_rate = lr;
                                    if let Some(cap) = self.epoch_cap {
                                        c.epochs = cap;
                                    }
                                    c.validate()?;
                                    out.push(c);
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Splits `total` over the codes of `base` as evenly as possible, earlier
/// codes in canonical order taking the remainder.
fn spread_latent(base: &BTreeMap<SubsetCode, usize>, total: usize) -> Result<BTreeMap<SubsetCode, usize>> {
    let mut codes: Vec<&SubsetCode> = base.iter().filter(|(_, &n)| n > 0).map(|(c, _)| c).collect();
    codes.sort_by(|a, b| a.canonical_cmp(b));
    if total < codes.len() {
        return Err(CtaeError::Config(format!("latent size {total} is smaller than the {} blocks", codes.len())));
    }
    let (q, rem) = (total / codes.len(), total % codes.len());
    Ok(codes
        .into_iter()
        .enumerate()
        .map(|(i, c)| (c.clone(), q + (i < rem) as usize))
        .collect())
}

/// Short stable identifier of a training configuration.
pub fn config_hash(config: &TrainConfig) -> String {
    let json = serde_json::to_vec(config).expect("configs serialize");
    Sha256::digest(&json).iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Outcome of one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub index: usize,
    pub config_hash: String,
    pub config: TrainConfig,
    /// Validation total of every logged epoch, starting at epoch 0.
    pub val_losses: Vec<f64>,
    pub best_val_total: f64,
    pub best_epoch: usize,
    /// Training hit a non-finite loss or gradient.
    pub diverged: bool,
    pub error: Option<String>,
    pub checkpoint_path: Option<PathBuf>,
}

impl GridResult {
    fn rank_key(&self) -> (bool, f64, usize, usize) {
        let bad = self.diverged || !self.best_val_total.is_finite();
        (bad, self.best_val_total, self.config.model.latent_dim(), self.index)
    }
}

/// Orders results best first: finite runs by validation total, then
/// smaller latent size, then enumeration order; divergent runs last.
pub fn rank_results(results: &mut [GridResult]) {
    results.sort_by(|a, b| {
        let (x, y) = (a.rank_key(), b.rank_key());
        x.0.cmp(&y.0)
            .then(if x.0 { std::cmp::Ordering::Equal } else { x.1.total_cmp(&y.1) })
            .then(x.2.cmp(&y.2))
            .then(x.3.cmp(&y.3))
    });
}

#[derive(Debug, Clone, Default)]
pub struct GridOptions {
    /// Worker threads; at least one.
    pub jobs: usize,
    /// Per-cell results and checkpoints are written here and reused when
    /// a later search finds them.
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct GridOutcome {
    /// Ranked, best first.
    pub results: Vec<GridResult>,
    /// Best-validation checkpoint of the top-ranked cell, if it finished.
    pub best: Option<CheckpointRecord>,
}

fn cell_paths(dir: &Path, hash: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("cell-{hash}.json")), dir.join(format!("cell-{hash}.ckpt")))
}

fn cached(dir: &Path, index: usize, config: &TrainConfig) -> Option<(GridResult, Option<CheckpointRecord>)> {
    let hash = config_hash(config);
    let (json, ckpt) = cell_paths(dir, &hash);
    let mut r: GridResult = serde_json::from_slice(&std::fs::read(json).ok()?).ok()?;
    if r.config != *config {
        return None;
    }
    r.index = index;
    let best = if r.diverged { None } else { Some(load_checkpoint(&ckpt).ok()?) };
    Some((r, best))
}

fn run_cell(index: usize, config: TrainConfig, data: &Dataset) -> Result<(GridResult, Option<CheckpointRecord>)> {
    let hash = config_hash(&config);
    let epochs = config.epochs;
    let mut t = Trainer::new(config.clone(), data)?;
    let mut failure = None;
    while t.epoch() < epochs {
        match t.step_epoch() {
            Ok(_) => {}
            Err(e @ CtaeError::NonFinite { .. }) => {
                failure = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let best = t.best_checkpoint();
    let result = GridResult {
        index,
        config_hash: hash,
        config,
        val_losses: t.log().iter().map(|l| l.val.total).collect(),
        best_val_total: best.best_val_total,
        best_epoch: best.epoch,
        diverged: failure.is_some(),
        error: failure,
        checkpoint_path: None,
    };
    let keep = !result.diverged;
    Ok((result, keep.then_some(best)))
}

/// Trains every cell of `grid` on top of `base` and ranks the runs by their
/// best validation total.
pub fn grid_search(base: &TrainConfig, grid: &GridSpec, data: &Dataset, opts: &GridOptions) -> Result<GridOutcome> {
    let cells = grid.cells(base)?;
    let n = cells.len();
    if let Some(dir) = &opts.cache_dir {
        std::fs::create_dir_all(dir).map_err(|e| CtaeError::io(dir, e))?;
    }
    let slots: Vec<Mutex<Option<Result<(GridResult, Option<CheckpointRecord>)>>>> =
        (0..n).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let work = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        if i >= n {
            break;
        }
        let cfg = cells[i].clone();
        let out = match opts.cache_dir.as_deref().and_then(|d| cached(d, i, &cfg)) {
            Some(hit) => Ok(hit),
            None => run_cell(i, cfg, data).and_then(|(mut r, best)| {
                if let Some(dir) = &opts.cache_dir {
                    let (json, ckpt) = cell_paths(dir, &r.config_hash);
                    if let Some(b) = &best {
                        save_checkpoint(b, &ckpt)?;
                    }
                    r.checkpoint_path = best.as_ref().map(|_| ckpt);
                    let bytes = serde_json::to_vec_pretty(&r).map_err(|e| CtaeError::Format(e.to_string()))?;
                    std::fs::write(&json, bytes).map_err(|e| CtaeError::io(&json, e))?;
                }
                Ok((r, best))
            }),
        };
        *slots[i].lock().unwrap() = Some(out);
    };
    std::thread::scope(|s| {
        for _ in 1..opts.jobs.max(1).min(n) {
            s.spawn(work);
        }
        work();
    });

    let mut results = Vec::with_capacity(n);
    let mut checkpoints = Vec::with_capacity(n);
    for slot in slots {
        let (r, best) = slot.into_inner().unwrap().expect("every cell ran")?;
        results.push(r);
        checkpoints.push(best);
    }
    rank_results(&mut results);
    let best = results.first().and_then(|r| checkpoints[r.index].take());
    Ok(GridOutcome { results, best })
}
