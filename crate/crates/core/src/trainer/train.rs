use std::fmt::Write as _;
use std::path::Path;

use diffcore::{adam_step, AdamState, DiffError, Graph, ParameterSet};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::CheckpointRecord;
use super::config::TrainConfig;
use super::prepared::{PreparedData, Standardizer};
use crate::datasets::{split_trials, Dataset};
use crate::error::{CtaeError, Result};
use crate::objectives::{build_losses, total_with, warmup_coefficient, LossComponents, LossReport, LossWeights};
use crate::seqmodel::{Ctae, FusionPath, Mode};

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean over this epoch's batches, before each update.
    pub train: LossReport,
    /// Validation losses after the epoch, weighted with the final Gram weight.
    pub val: LossReport,
    /// Mean pre-clipping gradient norm over the epoch's batches.
    pub grad_norm: f64,
    /// Batches whose gradient was clipped.
    pub clipped: usize,
}

pub const LOG_HEADER: &str =
    "epoch,rec,shared,align,orth,lambda_orth_eff,total,val_rec,val_shared,val_align,val_orth,val_total,grad_norm,clipped";

impl EpochLog {
    pub fn csv_row(&self) -> String {
        let (t, v) = (&self.train, &self.val);
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            t.rec,
            t.shared,
            t.align,
            t.orth,
            t.lambda_orth_eff,
            t.total,
            v.rec,
            v.shared,
            v.align,
            v.orth,
            v.total,
            self.grad_norm,
            self.clipped
        )
    }
}

pub fn log_to_csv(log: &[EpochLog]) -> String {
    let mut s = String::with_capacity(64 * (log.len() + 1));
    s.push_str(LOG_HEADER);
    s.push('\n');
    for row in log {
        let _ = writeln!(s, "{}", row.csv_row());
    }
    s
}

pub fn write_log(log: &[EpochLog], path: &Path) -> Result<()> {
    std::fs::write(path, log_to_csv(log)).map_err(|e| CtaeError::io(path, e))
}

/// Loss report of `params` on the listed trials (no dropout, no update).
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    model: &Ctae,
    params: &ParameterSet,
    data: &PreparedData,
    idx: &[usize],
    weights: &LossWeights,
    lambda_orth: f64,
    epoch: usize,
    path: FusionPath,
) -> Result<LossReport> {
    if idx.is_empty() {
        return Err(CtaeError::Data("cannot evaluate on an empty trial set".into()));
    }
    let mut acc = BatchMean::default();
    for part in idx.chunks(256) {
        let mut g = Graph::new();
        let xs: Vec<_> = data.batch(part).into_iter().map(|x| g.input(x)).collect();
        let lg = build_losses(&mut g, model, params, &xs, part.len(), weights, lambda_orth, epoch, path, &mut Mode::Eval)?;
        acc.add(&lg.report, part.len());
    }
    Ok(total_with(acc.mean(), weights.shared, weights.align, lambda_orth, epoch))
}

/// Trial-weighted mean of per-batch components; a single batch is passed
/// through untouched so it matches a one-shot evaluation bit for bit.
#[derive(Default)]
struct BatchMean {
    sum: LossComponents,
    first: Option<LossComponents>,
    batches: usize,
    trials: usize,
}

impl BatchMean {
    fn add(&mut self, r: &LossReport, n: usize) {
        let w = n as f64;
        self.sum.rec += w * r.rec;
        self.sum.shared += w * r.shared;
        self.sum.align += w * r.align;
        self.sum.orth += w * r.orth;
        self.first.get_or_insert(r.components());
        self.batches += 1;
        self.trials += n;
    }

    fn mean(&self) -> LossComponents {
        if self.batches == 1 {
            return self.first.unwrap();
        }
        let n = self.trials as f64;
        LossComponents {
            rec: self.sum.rec / n,
            shared: self.sum.shared / n,
            align: self.sum.align / n,
            orth: self.sum.orth / n,
        }
    }
}

/// Result of a run: best-validation and final checkpoints plus the log.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: CheckpointRecord,
    pub last: CheckpointRecord,
    pub log: Vec<EpochLog>,
}

/// Stateful training loop that can be stopped, checkpointed and resumed.
pub struct Trainer {
    config: TrainConfig,
    model: Ctae,
    params: ParameterSet,
    adam: AdamState,
    rng: ChaCha8Rng,
    epoch: usize,
    best_val_total: f64,
    best_epoch: usize,
    best_params: ParameterSet,
    standardizer: Standardizer,
    split: Vec<Vec<usize>>,
    data: PreparedData,
    log: Vec<EpochLog>,
}

impl Trainer {
    /// Splits the data, fits the standardizer on the training trials,
    /// initializes parameters and records epoch 0 (no update).
    pub fn new(config: TrainConfig, data: &Dataset) -> Result<Self> {
        config.validate()?;
        check_data(&config, data)?;
        let mut split = split_trials(data.trials(), &config.split, data.labels.as_deref(), config.seed)?;
        if split.len() == 2 {
            split.push(Vec::new());
        }
        if split[0].is_empty() || split[1].is_empty() {
            return Err(CtaeError::Data(format!(
                "{} trials leave an empty training or validation split",
                data.trials()
            )));
        }
        let standardizer = if config.model.standardize {
            Standardizer::fit(&data.select(&split[0]))
        } else {
            Standardizer::identity(&data.channels())
        };
        let model = Ctae::new(config.model.clone())?;
        let params = model.init_params(config.seed);
        let adam = AdamState::new(&params);
        let prepared = PreparedData::new(data, &standardizer)?;
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7261_696e);
        let mut t = Self {
            best_params: params.clone(),
            config,
            model,
            params,
            adam,
            rng,
            epoch: 0,
            best_val_total: f64::INFINITY,
            best_epoch: 0,
            standardizer,
            split,
            data: prepared,
            log: Vec::new(),
        };
        let train = t.eval_split(0, warmup_coefficient(0, t.config.weights.warmup, t.config.weights.orth))?;
        let val = t.eval_split(1, t.config.weights.orth)?;
        t.best_val_total = if val.total.is_finite() { val.total } else { f64::INFINITY };
        t.log.push(EpochLog {
            epoch: 0,
            train,
            val,
            grad_norm: 0.0,
            clipped: 0,
        });
        Ok(t)
    }

    /// Continues from a saved final state. `best` supplies the best
    /// parameters so far; without it the resumed state's own parameters are
    /// used for the best slot.
    pub fn resume(last: CheckpointRecord, best: Option<&CheckpointRecord>, data: &Dataset) -> Result<Self> {
        last.config.validate()?;
        check_data(&last.config, data)?;
        let model = Ctae::new(last.config.model.clone())?;
        model.check_params(&last.params)?;
        let prepared = PreparedData::new(data, &last.standardizer)?;
        let best_params = match best {
            Some(b) => {
                model.check_params(&b.params)?;
                b.params.clone()
            }
            None => last.params.clone(),
        };
        Ok(Self {
            config: last.config,
            model,
            params: last.params,
            adam: last.adam,
            rng: last.rng,
            epoch: last.epoch,
            best_val_total: last.best_val_total,
            best_epoch: last.best_epoch,
            best_params,
            standardizer: last.standardizer,
            split: last.split,
            data: prepared,
            log: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &Ctae {
        &self.model
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn log(&self) -> &[EpochLog] {
        &self.log
    }

    pub fn split(&self) -> &[Vec<usize>] {
        &self.split
    }

    fn eval_split(&self, which: usize, lambda_orth: f64) -> Result<LossReport> {
        evaluate(
            &self.model,
            &self.params,
            &self.data,
            &self.split[which],
            &self.config.weights,
            lambda_orth,
            self.epoch,
            self.config.fusion_path,
        )
    }

    /// One pass over the training split followed by validation.
    pub fn step_epoch(&mut self) -> Result<EpochLog> {
        let epoch = self.epoch + 1;
        let w = self.config.weights;
        let lo = warmup_coefficient(epoch, w.warmup, w.orth);
        let mut order = self.split[0].clone();
        let bsz = self.config.effective_batch(order.len());
        if bsz < order.len() {
            order.shuffle(&mut self.rng);
        }
        let mut acc = BatchMean::default();
        let mut norm_sum = 0.0;
        let mut clipped = 0;
        let nbatches = order.len().div_ceil(bsz);
        for part in order.chunks(bsz) {
            let mut g = if self.config.checked { Graph::checked() } else { Graph::new() };
            let xs: Vec<_> = self.data.batch(part).into_iter().map(|x| g.input(x)).collect();
            let mut mode = Mode::Train(&mut self.rng);
            let lg = build_losses(
                &mut g,
                &self.model,
                &self.params,
                &xs,
                part.len(),
                &w,
                lo,
                epoch,
                self.config.fusion_path,
                &mut mode,
            )
            .map_err(|e| non_finite(e, epoch))?;
            if !lg.report.is_finite() {
                return Err(CtaeError::NonFinite {
                    epoch,
                    detail: describe(&lg.report),
                });
            }
            let mut grads = g.backward(lg.total, &self.params)?;
            if !grads.all_finite() {
                return Err(CtaeError::NonFinite {
                    epoch,
                    detail: format!("non-finite gradient; losses {}", describe(&lg.report)),
                });
            }
            let norm = match self.config.clip_norm {
                Some(c) => {
                    let (n, hit) = grads.clip_global_norm(c);
                    clipped += hit as usize;
                    n
                }
                None => grads.global_norm(),
            };
            norm_sum += norm;
            adam_step(&mut self.params, &grads, &mut self.adam, self.config.learning_rate, true)?;
            acc.add(&lg.report, part.len());
        }
        let train = total_with(acc.mean(), w.shared, w.align, lo, epoch);
        self.epoch = epoch;
        let val = self.eval_split(1, w.orth)?;
        if val.total < self.best_val_total {
            self.best_val_total = val.total;
            self.best_epoch = epoch;
            self.best_params = self.params.clone();
        }
        let row = EpochLog {
            epoch,
            train,
            val,
            grad_norm: norm_sum / nbatches as f64,
            clipped,
        };
        self.log.push(row);
        let every = self.config.report_interval;
        if every > 0 && epoch % every == 0 {
            eprintln!(
                "epoch {epoch:>6}  train {:.6e}  val {:.6e}  best {:.6e} @ {}",
                train.total, val.total, self.best_val_total, self.best_epoch
            );
        }
        Ok(row)
    }

    /// Trains until `epoch` epochs have completed.
    pub fn run_until(&mut self, epoch: usize) -> Result<()> {
        while self.epoch < epoch {
            self.step_epoch()?;
        }
        Ok(())
    }

    fn record(&self, params: ParameterSet) -> CheckpointRecord {
        CheckpointRecord {
            config: self.config.clone(),
            params,
            adam: self.adam.clone(),
            epoch: self.epoch,
            best_val_total: self.best_val_total,
            best_epoch: self.best_epoch,
            rng: self.rng.clone(),
            standardizer: self.standardizer.clone(),
            split: self.split.clone(),
        }
    }

    /// Current state, suitable for [`Trainer::resume`].
    pub fn last_checkpoint(&self) -> CheckpointRecord {
        self.record(self.params.clone())
    }

    /// Best-validation parameters with the current bookkeeping.
    pub fn best_checkpoint(&self) -> CheckpointRecord {
        let mut r = self.record(self.best_params.clone());
        r.epoch = self.best_epoch;
        r
    }

    pub fn finish(self) -> TrainOutcome {
        TrainOutcome {
            best: self.best_checkpoint(),
            last: self.last_checkpoint(),
            log: self.log,
        }
    }
}

fn check_data(config: &TrainConfig, data: &Dataset) -> Result<()> {
    data.validate()?;
    if data.channels() != config.model.channels || data.time_steps() != config.model.time_steps {
        return Err(CtaeError::Data(format!(
            "data has channels {:?} and T={}, model expects {:?} and T={}",
            data.channels(),
            data.time_steps(),
            config.model.channels,
            config.model.time_steps
        )));
    }
    Ok(())
}

fn describe(r: &LossReport) -> String {
    format!(
        "rec={} shared={} align={} orth={} lambda_orth={} total={}",
        r.rec, r.shared, r.align, r.orth, r.lambda_orth_eff, r.total
    )
}

fn non_finite(e: CtaeError, epoch: usize) -> CtaeError {
    match e {
        CtaeError::Diff(DiffError::NonFinite { op }) => CtaeError::NonFinite {
            epoch,
            detail: format!("non-finite value produced by {op}"),
        },
        other => other,
    }
}

/// Trains for `config.epochs` epochs from scratch.
pub fn train(config: TrainConfig, data: &Dataset) -> Result<TrainOutcome> {
    let epochs = config.epochs;
    let mut t = Trainer::new(config, data)?;
    t.run_until(epochs)?;
    Ok(t.finish())
}
