use std::path::Path;

use diffcore::{AdamState, ParameterSet, Tensor};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use serde_json::json;

use super::config::TrainConfig;
use super::prepared::{infer_latents, LatentSet, PreparedData, Standardizer};
use crate::datasets::Dataset;
use crate::seqmodel::Ctae;
use crate::container::Container;
use crate::error::{CtaeError, Result};

const KIND: &[u8; 4] = b"CKPT";

/// Everything needed to evaluate a model or continue its training.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointRecord {
    pub config: TrainConfig,
    pub params: ParameterSet,
    pub adam: AdamState,
    /// Number of completed epochs.
    pub epoch: usize,
    pub best_val_total: f64,
    pub best_epoch: usize,
    pub rng: ChaCha8Rng,
    pub standardizer: Standardizer,
    /// Train, validation and test trial indices.
    pub split: Vec<Vec<usize>>,
}

fn f(e: serde_json::Error) -> CtaeError {
    CtaeError::Format(e.to_string())
}

impl CheckpointRecord {
    pub fn to_container(&self) -> Result<Container> {
        let names: Vec<&str> = self.params.names().collect();
        let meta = json!({
            "config": self.config,
            "epoch": self.epoch,
            "best_epoch": self.best_epoch,
            "rng": self.rng,
            "split": self.split,
            "parameters": names,
            "adam": {"step": self.adam.step, "beta1": self.adam.beta1, "beta2": self.adam.beta2, "eps": self.adam.eps},
        });
        let mut c = Container::new(meta);
        c.push("best_val_total", vec![1], vec![self.best_val_total])?;
        for (i, (name, t)) in self.params.iter().enumerate() {
            c.push(format!("param/{name}"), t.shape().to_vec(), t.data().to_vec())?;
            c.push(format!("adam_m/{name}"), t.shape().to_vec(), self.adam.first[i].data().to_vec())?;
            c.push(format!("adam_v/{name}"), t.shape().to_vec(), self.adam.second[i].data().to_vec())?;
        }
        for (r, (m, s)) in self.standardizer.means.iter().zip(&self.standardizer.stds).enumerate() {
            c.push(format!("norm{r}/mean"), vec![m.len()], m.clone())?;
            c.push(format!("norm{r}/std"), vec![s.len()], s.clone())?;
        }
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        #[derive(Deserialize)]
        struct Adam {
            step: u64,
            beta1: f64,
            beta2: f64,
            eps: f64,
        }
        #[derive(Deserialize)]
        struct Meta {
            config: TrainConfig,
            epoch: usize,
            best_epoch: usize,
            rng: ChaCha8Rng,
            split: Vec<Vec<usize>>,
            parameters: Vec<String>,
            adam: Adam,
        }
        let m: Meta = serde_json::from_value(c.meta.clone()).map_err(f)?;
        let mut params = ParameterSet::new();
        let mut first = Vec::new();
        let mut second = Vec::new();
        for name in &m.parameters {
            let (shape, data) = c.get(&format!("param/{name}"))?;
            params.insert(name.clone(), Tensor::new(shape.to_vec(), data.to_vec())?)?;
            let (shape, data) = c.get(&format!("adam_m/{name}"))?;
            first.push(Tensor::new(shape.to_vec(), data.to_vec())?);
            let (shape, data) = c.get(&format!("adam_v/{name}"))?;
            second.push(Tensor::new(shape.to_vec(), data.to_vec())?);
        }
        let regions = m.config.model.regions();
        let mut means = Vec::with_capacity(regions);
        let mut stds = Vec::with_capacity(regions);
        for r in 0..regions {
            means.push(c.get(&format!("norm{r}/mean"))?.1.to_vec());
            stds.push(c.get(&format!("norm{r}/std"))?.1.to_vec());
        }
        Ok(Self {
            config: m.config,
            params,
            adam: AdamState {
                first,
                second,
                step: m.adam.step,
                beta1: m.adam.beta1,
                beta2: m.adam.beta2,
                eps: m.adam.eps,
            },
            epoch: m.epoch,
            best_val_total: c.get("best_val_total")?.1[0],
            best_epoch: m.best_epoch,
            rng: m.rng,
            standardizer: Standardizer { means, stds },
            split: m.split,
        })
    }

    /// Latents of every trial in `data`, normalized with this run's
    /// statistics.
    pub fn latents(&self, data: &Dataset) -> Result<LatentSet> {
        let model = Ctae::new(self.config.model.clone())?;
        model.check_params(&self.params)?;
        let prepared = PreparedData::new(data, &self.standardizer)?;
        infer_latents(&model, &self.params, &prepared, self.config.fusion_path)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.to_container()?.to_bytes(KIND)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_container(&Container::from_bytes(bytes, KIND)?)
    }
}

pub fn save_checkpoint(record: &CheckpointRecord, path: &Path) -> Result<()> {
    record.to_container()?.save(path, KIND)
}

pub fn load_checkpoint(path: &Path) -> Result<CheckpointRecord> {
    CheckpointRecord::from_container(&Container::load(path, KIND)?)
}
