use diffcore::{ParameterSet, Tensor};

use crate::datasets::Dataset;
use crate::error::{CtaeError, Result};
use crate::seqmodel::{Ctae, FusionPath, Mode};

/// Per-region, per-channel affine normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub means: Vec<Vec<f64>>,
    pub stds: Vec<Vec<f64>>,
}

impl Standardizer {
    /// Statistics over all trials and time steps of `data`; a channel with
    /// zero spread keeps scale one.
    pub fn fit(data: &Dataset) -> Self {
        let mut means = Vec::new();
        let mut stds = Vec::new();
        for r in &data.regions {
            let count = (r.trials * r.time_steps) as f64;
            let mut m = vec![0.0; r.channels];
            let mut s = vec![0.0; r.channels];
            for k in 0..r.trials {
                for (n, row) in r.trial(k).chunks(r.time_steps).enumerate() {
                    m[n] += row.iter().sum::<f64>();
                }
            }
            m.iter_mut().for_each(|v| *v /= count);
            for k in 0..r.trials {
                for (n, row) in r.trial(k).chunks(r.time_steps).enumerate() {
                    s[n] += row.iter().map(|v| (v - m[n]) * (v - m[n])).sum::<f64>();
                }
            }
            let s = s
                .into_iter()
                .map(|v| {
                    let sd = (v / count).sqrt();
                    if sd > 1e-12 {
                        sd
                    } else {
                        1.0
                    }
                })
                .collect();
            means.push(m);
            stds.push(s);
        }
        Self { means, stds }
    }

    pub fn identity(channels: &[usize]) -> Self {
        Self {
            means: channels.iter().map(|&n| vec![0.0; n]).collect(),
            stds: channels.iter().map(|&n| vec![1.0; n]).collect(),
        }
    }
}

/// Trials rearranged time-major (`[T × N_r]` per trial) and normalized,
/// ready to be stacked into batches.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub time_steps: usize,
    pub channels: Vec<usize>,
    per_trial: Vec<Vec<Vec<f64>>>,
}

impl PreparedData {
    pub fn new(data: &Dataset, norm: &Standardizer) -> Result<Self> {
        let t = data.time_steps();
        if norm.means.len() != data.regions.len() {
            return Err(CtaeError::Shape("standardizer does not match region count".into()));
        }
        let mut per_trial = Vec::with_capacity(data.regions.len());
        for (ri, r) in data.regions.iter().enumerate() {
            if norm.means[ri].len() != r.channels {
                return Err(CtaeError::Shape(format!("standardizer does not match region {ri} channels")));
            }
            let mut trials = Vec::with_capacity(r.trials);
            for k in 0..r.trials {
                let src = r.trial(k);
                let mut out = vec![0.0; t * r.channels];
                for n in 0..r.channels {
                    let (m, s) = (norm.means[ri][n], norm.stds[ri][n]);
                    for s_t in 0..t {
                        out[s_t * r.channels + n] = (src[n * t + s_t] - m) / s;
                    }
                }
                trials.push(out);
            }
            per_trial.push(trials);
        }
        Ok(Self {
            time_steps: t,
            channels: data.channels(),
            per_trial,
        })
    }

    pub fn trials(&self) -> usize {
        self.per_trial[0].len()
    }

    /// One `[B·T, N_r]` tensor per region for the listed trials.
    pub fn batch(&self, idx: &[usize]) -> Vec<Tensor> {
        self.per_trial
            .iter()
            .zip(&self.channels)
            .map(|(trials, &n)| {
                let mut data = Vec::with_capacity(idx.len() * self.time_steps * n);
                for &k in idx {
                    data.extend_from_slice(&trials[k]);
                }
                Tensor::new(vec![idx.len() * self.time_steps, n], data).unwrap()
            })
            .collect()
    }
}

/// Latents for many trials, `[K × D × T]` trial-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSet {
    pub trials: usize,
    pub dims: usize,
    pub time_steps: usize,
    pub per_region: Vec<Vec<f64>>,
    pub fused: Vec<f64>,
}

impl LatentSet {
    /// `[rows × T]` of trial `k` from an array laid out like `fused`.
    pub fn rows_of(&self, src: &[f64], k: usize, rows: &[usize]) -> Vec<f64> {
        let (d, t) = (self.dims, self.time_steps);
        let mut out = Vec::with_capacity(rows.len() * t);
        for &i in rows {
            out.extend_from_slice(&src[k * d * t + i * t..k * d * t + (i + 1) * t]);
        }
        out
    }
}

/// Runs the encoders (no dropout) over every trial of `data`, in chunks.
pub fn infer_latents(model: &Ctae, params: &ParameterSet, data: &PreparedData, path: FusionPath) -> Result<LatentSet> {
    let (k, t, d) = (data.trials(), data.time_steps, model.latent_dim());
    let r = data.channels.len();
    let mut per_region = vec![vec![0.0; k * d * t]; r];
    let mut fused = vec![0.0; k * d * t];
    let chunk = 64;
    let mut start = 0;
    while start < k {
        let idx: Vec<usize> = (start..(start + chunk).min(k)).collect();
        let mut g = diffcore::Graph::new();
        let xs: Vec<_> = data.batch(&idx).into_iter().map(|x| g.input(x)).collect();
        let fw = model.encode_all(&mut g, params, &xs, idx.len(), path, &mut Mode::Eval)?;
        let scatter = |src: &Tensor, dst: &mut Vec<f64>| {
            for (bi, &kk) in idx.iter().enumerate() {
                for s in 0..t {
                    for j in 0..d {
                        dst[kk * d * t + j * t + s] = src.data()[(bi * t + s) * d + j];
                    }
                }
            }
        };
        for (ri, v) in fw.per_region.iter().enumerate() {
            let val = g.value(*v).clone();
            scatter(&val, &mut per_region[ri]);
        }
        let val = g.value(fw.fused).clone();
        scatter(&val, &mut fused);
        start += chunk;
    }
    Ok(LatentSet {
        trials: k,
        dims: d,
        time_steps: t,
        per_region,
        fused,
    })
}
