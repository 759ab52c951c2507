use std::path::Path;

use diffcore::Tensor;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::container::Container;
use crate::error::{CtaeError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    Counts,
    Rates,
}

/// One region's activity: `values[k][n][t]`, trial-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionRecording {
    pub region: usize,
    pub trials: usize,
    pub channels: usize,
    pub time_steps: usize,
    pub bin_width_ms: f64,
    pub kind: ValueKind,
    values: Vec<f64>,
}

impl RegionRecording {
    pub fn new(
        region: usize,
        dims: (usize, usize, usize),
        bin_width_ms: f64,
        kind: ValueKind,
        values: Vec<f64>,
    ) -> Result<Self> {
        let (trials, channels, time_steps) = dims;
        if trials * channels * time_steps != values.len() {
            return Err(CtaeError::Data(format!(
                "region {region}: {trials}×{channels}×{time_steps} does not match {} values",
                values.len()
            )));
        }
        if channels == 0 || time_steps == 0 {
            return Err(CtaeError::Data(format!("region {region}: empty channel or time axis")));
        }
        let rec = Self {
            region,
            trials,
            channels,
            time_steps,
            bin_width_ms,
            kind,
            values,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ValueKind::Rates => {
                if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
                    return Err(CtaeError::Data(format!("region {}: non-finite value at {i}", self.region)));
                }
            }
            ValueKind::Counts => {
                if let Some(i) = self.values.iter().position(|&v| !(v >= 0.0 && v.fract() == 0.0)) {
                    return Err(CtaeError::Data(format!(
                        "region {}: count {} at {i} is not a non-negative integer",
                        self.region, self.values[i]
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `[N × T]` slice of trial `k`.
    pub fn trial(&self, k: usize) -> &[f64] {
        let n = self.channels * self.time_steps;
        &self.values[k * n..(k + 1) * n]
    }

    pub fn trial_tensor(&self, k: usize) -> Tensor {
        Tensor::new(vec![self.channels, self.time_steps], self.trial(k).to_vec()).unwrap()
    }

    pub fn get(&self, k: usize, n: usize, t: usize) -> f64 {
        self.values[(k * self.channels + n) * self.time_steps + t]
    }

    /// Trials in the given order.
    pub fn select(&self, idx: &[usize]) -> Self {
        let mut values = Vec::with_capacity(idx.len() * self.channels * self.time_steps);
        for &k in idx {
            values.extend_from_slice(self.trial(k));
        }
        Self {
            trials: idx.len(),
            values,
            ..self.clone()
        }
    }

    pub(crate) fn with_values(&self, kind: ValueKind, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        Self {
            kind,
            values,
            ..self.clone()
        }
    }
}

/// Continuous per-trial targets `[K × dims × T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialTargets {
    pub dims: usize,
    pub values: Vec<f64>,
}

/// Simultaneously recorded regions with trial-level labels and targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub regions: Vec<RegionRecording>,
    pub labels: Option<Vec<usize>>,
    pub targets: Option<TrialTargets>,
}

const KIND: &[u8; 4] = b"DATA";

impl Dataset {
    pub fn new(regions: Vec<RegionRecording>, labels: Option<Vec<usize>>, targets: Option<TrialTargets>) -> Result<Self> {
        let ds = Self {
            regions,
            labels,
            targets,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .regions
            .first()
            .ok_or_else(|| CtaeError::Data("dataset has no regions".into()))?;
        for (i, r) in self.regions.iter().enumerate() {
            if r.trials != first.trials || r.time_steps != first.time_steps {
                return Err(CtaeError::Data(format!(
                    "region {i} has {}×T={} trials, region 0 has {}×T={}",
                    r.trials, r.time_steps, first.trials, first.time_steps
                )));
            }
            if r.region != i {
                return Err(CtaeError::Data(format!("region at position {i} is tagged {}", r.region)));
            }
        }
        if let Some(l) = &self.labels {
            if l.len() != first.trials {
                return Err(CtaeError::Data(format!("{} labels for {} trials", l.len(), first.trials)));
            }
        }
        if let Some(t) = &self.targets {
            if t.values.len() != first.trials * t.dims * first.time_steps {
                return Err(CtaeError::Data("target array does not match trials × dims × T".into()));
            }
        }
        Ok(())
    }

    pub fn trials(&self) -> usize {
        self.regions[0].trials
    }

    pub fn time_steps(&self) -> usize {
        self.regions[0].time_steps
    }

    pub fn channels(&self) -> Vec<usize> {
        self.regions.iter().map(|r| r.channels).collect()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            regions: self.regions.iter().map(|r| r.select(idx)).collect(),
            labels: self.labels.as_ref().map(|l| idx.iter().map(|&k| l[k]).collect()),
            targets: self.targets.as_ref().map(|t| {
                let n = t.dims * self.time_steps();
                let mut values = Vec::with_capacity(idx.len() * n);
                for &k in idx {
                    values.extend_from_slice(&t.values[k * n..(k + 1) * n]);
                }
                TrialTargets { dims: t.dims, values }
            }),
        }
    }

    pub fn to_container(&self) -> Result<Container> {
        let meta = json!({
            "trials": self.trials(),
            "time_steps": self.time_steps(),
            "regions": self.regions.iter().map(|r| json!({
                "channels": r.channels,
                "bin_width_ms": r.bin_width_ms,
                "kind": r.kind,
            })).collect::<Vec<_>>(),
            "has_labels": self.labels.is_some(),
            "target_dims": self.targets.as_ref().map(|t| t.dims),
        });
        let mut c = Container::new(meta);
        let (k, t) = (self.trials(), self.time_steps());
        for (i, r) in self.regions.iter().enumerate() {
            c.push(format!("region{i}"), vec![k, r.channels, t], r.values.clone())?;
        }
        if let Some(l) = &self.labels {
            c.push("labels", vec![k], l.iter().map(|&v| v as f64).collect())?;
        }
        if let Some(tg) = &self.targets {
            c.push("targets", vec![k, tg.dims, t], tg.values.clone())?;
        }
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        #[derive(Deserialize)]
        struct RegionMeta {
            channels: usize,
            bin_width_ms: f64,
            kind: ValueKind,
        }
        #[derive(Deserialize)]
        struct Meta {
            trials: usize,
            time_steps: usize,
            regions: Vec<RegionMeta>,
            has_labels: bool,
        }
        let m: Meta = serde_json::from_value(c.meta.clone()).map_err(|e| CtaeError::Format(e.to_string()))?;
        let mut regions = Vec::with_capacity(m.regions.len());
        for (i, rm) in m.regions.iter().enumerate() {
            let (shape, data) = c.get(&format!("region{i}"))?;
            if shape != [m.trials, rm.channels, m.time_steps] {
                return Err(CtaeError::Format(format!("region{i} has shape {shape:?}")));
            }
            regions.push(RegionRecording::new(
                i,
                (m.trials, rm.channels, m.time_steps),
                rm.bin_width_ms,
                rm.kind,
                data.to_vec(),
            )?);
        }
        let labels = if m.has_labels {
            let (_, d) = c.get("labels")?;
            Some(d.iter().map(|&v| v as usize).collect())
        } else {
            None
        };
        let targets = if c.has("targets") {
            let (shape, d) = c.get("targets")?;
            Some(TrialTargets {
                dims: shape[1],
                values: d.to_vec(),
            })
        } else {
            None
        };
        Self::new(regions, labels, targets)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.save(path, KIND)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path, KIND)?)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.to_container()?.to_bytes(KIND)
    }
}
