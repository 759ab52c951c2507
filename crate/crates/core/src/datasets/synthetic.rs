//! Planted shared/private latent benchmark.
//!
//! Each trial draws one smooth random trajectory per planted latent row,
//! adds a condition-dependent offset to the first (up to two) shared rows,
//! then orthonormalizes the stacked rows symmetrically so that
//! `(1/T)·L·Lᵀ = I`. Each region sees only the rows whose subset code
//! claims it, through its own linear or one-hidden-layer tanh map, plus
//! Gaussian observation noise.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::preprocess::smooth_series;
use super::recording::{Dataset, RegionRecording, TrialTargets, ValueKind};
use crate::container::Container;
use crate::error::{CtaeError, Result};
use crate::seqmodel::{MembershipMask, SubsetCode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mixing {
    Linear,
    TanhMlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub latent: BTreeMap<SubsetCode, usize>,
    pub trials: usize,
    pub time_steps: usize,
    /// Channel count per region; its length is R.
    pub channels: Vec<usize>,
    /// Standard deviation, in bins, of the Gaussian used to smooth latent noise.
    pub smoothness: f64,
    pub mixing: Mixing,
    pub noise_std: f64,
    pub conditions: usize,
    /// Amplitude of the condition offsets relative to unit-RMS latent noise.
    pub condition_strength: f64,
    pub bin_width_ms: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// The two-region benchmark layout used throughout the test suite.
    pub fn two_region(d_s: usize, d_1: usize, d_2: usize, channels: usize, seed: u64) -> Self {
        let mut latent = BTreeMap::new();
        for (code, k) in [("11", d_s), ("10", d_1), ("01", d_2)] {
            latent.insert(code.parse().expect("static code"), k);
        }
        Self {
            latent,
            trials: 200,
            time_steps: 30,
            channels: vec![channels; 2],
            smoothness: 3.0,
            mixing: Mixing::TanhMlp,
            noise_std: 0.05,
            conditions: 8,
            condition_strength: 1.5,
            bin_width_ms: 100.0,
            seed,
        }
    }

    pub fn regions(&self) -> usize {
        self.channels.len()
    }

    pub fn mask(&self) -> Result<MembershipMask> {
        MembershipMask::build_membership(self.regions(), &self.latent)
    }

    pub fn validate(&self) -> Result<MembershipMask> {
        let mask = self.mask()?;
        let bad = |m: String| Err(CtaeError::Config(m));
        if self.trials == 0 || self.time_steps == 0 {
            return bad("trials and time_steps must be positive".into());
        }
        if mask.dims() > self.time_steps {
            return bad(format!(
                "{} planted rows cannot be orthonormal over {} time steps",
                mask.dims(),
                self.time_steps
            ));
        }
        for r in 0..self.regions() {
            let k = claimed(&mask, r).len();
            if self.channels[r] < k {
                return bad(format!(
                    "region {r} has {} channels but {k} claimed latent rows (unidentifiable)",
                    self.channels[r]
                ));
            }
        }
        if self.conditions == 0 {
            return bad("conditions must be at least 1".into());
        }
        if !(self.smoothness > 0.0) || !(self.noise_std >= 0.0) || !(self.bin_width_ms > 0.0) {
            return bad("smoothness and bin width must be positive, noise non-negative".into());
        }
        Ok(mask)
    }
}

/// Per-region map from claimed latent rows to channels.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMap {
    pub kind: Mixing,
    /// Linear: `[N × k]`. Tanh: first layer `[h × k]`.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// Tanh only: `[N × h]`.
    pub w2: Vec<f64>,
    pub inputs: usize,
    pub hidden: usize,
    pub outputs: usize,
}

impl MixingMap {
    fn draw(kind: Mixing, k: usize, n: usize, rng: &mut ChaCha8Rng) -> Self {
        match kind {
            Mixing::Linear => {
                let s = 1.0 / (k.max(1) as f64).sqrt();
                let w1 = (0..n * k).map(|_| s * rng.sample::<f64, _>(StandardNormal)).collect();
                Self {
                    kind,
                    w1,
                    b1: Vec::new(),
                    w2: Vec::new(),
                    inputs: k,
                    hidden: 0,
                    outputs: n,
                }
            }
            Mixing::TanhMlp => {
                let h = 4 * k;
                let w1 = sphere_rows(h, k, 1.5, rng);
                let b1 = (0..h).map(|_| rng.random_range(-0.5..0.5)).collect();
                let w2 = sphere_rows(n, h, 1.0, rng);
                Self {
                    kind,
                    w1,
                    b1,
                    w2,
                    inputs: k,
                    hidden: h,
                    outputs: n,
                }
            }
        }
    }

    /// Applies the map to one time step.
    pub fn apply(&self, l: &[f64]) -> Vec<f64> {
        let k = self.inputs;
        match self.kind {
            Mixing::Linear => (0..self.outputs)
                .map(|i| (0..k).fold(0.0, |a, j| a + self.w1[i * k + j] * l[j]))
                .collect(),
            Mixing::TanhMlp => {
                let hid: Vec<f64> = (0..self.hidden)
                    .map(|i| ((0..k).fold(self.b1[i], |a, j| a + self.w1[i * k + j] * l[j])).tanh())
                    .collect();
                (0..self.outputs)
                    .map(|i| (0..self.hidden).fold(0.0, |a, j| a + self.w2[i * self.hidden + j] * hid[j]))
                    .collect()
            }
        }
    }
}

/// Rows drawn uniformly on the sphere of radius `gain`.
fn sphere_rows(rows: usize, cols: usize, gain: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        let v: Vec<f64> = (0..cols).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
        out.extend(v.into_iter().map(|x| gain * x / norm));
    }
    out
}

fn claimed(mask: &MembershipMask, r: usize) -> Vec<usize> {
    (0..mask.dims()).filter(|&j| mask.matrix()[r][j]).collect()
}

/// Planted latents and generating maps.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub mask: MembershipMask,
    pub trials: usize,
    pub time_steps: usize,
    /// `[K × D_planted × T]`, rows in the mask's canonical block order.
    pub latent: Vec<f64>,
    pub labels: Vec<usize>,
    pub mixing: Vec<MixingMap>,
}

impl GroundTruth {
    pub fn dims(&self) -> usize {
        self.mask.dims()
    }

    /// Selected rows of trial `k`, `[rows × T]` flattened.
    pub fn rows(&self, k: usize, rows: &[usize]) -> Vec<f64> {
        let (d, t) = (self.dims(), self.time_steps);
        let base = k * d * t;
        let mut out = Vec::with_capacity(rows.len() * t);
        for &i in rows {
            out.extend_from_slice(&self.latent[base + i * t..base + (i + 1) * t]);
        }
        out
    }

    pub fn shared_rows(&self) -> Vec<usize> {
        self.mask.shared_dims()
    }

    pub fn private_rows(&self, r: usize) -> Vec<usize> {
        self.mask.private_dims(r)
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        let n = self.dims() * self.time_steps;
        let mut latent = Vec::with_capacity(idx.len() * n);
        for &k in idx {
            latent.extend_from_slice(&self.latent[k * n..(k + 1) * n]);
        }
        Self {
            trials: idx.len(),
            latent,
            labels: idx.iter().map(|&k| self.labels[k]).collect(),
            ..self.clone()
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let sizes: BTreeMap<String, usize> = self
            .mask
            .code_sizes()
            .into_iter()
            .map(|(c, k)| (c.to_string(), k))
            .collect();
        let mut c = Container::new(json!({
            "regions": self.mask.regions(),
            "latent": sizes,
            "trials": self.trials,
            "time_steps": self.time_steps,
            "mixing": self.mixing.iter().map(|m| json!({
                "kind": m.kind, "inputs": m.inputs, "hidden": m.hidden, "outputs": m.outputs
            })).collect::<Vec<_>>(),
        }));
        c.push("latent", vec![self.trials, self.dims(), self.time_steps], self.latent.clone())?;
        c.push("labels", vec![self.trials], self.labels.iter().map(|&l| l as f64).collect())?;
        for (r, m) in self.mixing.iter().enumerate() {
            c.push(format!("mix{r}.w1"), vec![m.w1.len()], m.w1.clone())?;
            c.push(format!("mix{r}.b1"), vec![m.b1.len()], m.b1.clone())?;
            c.push(format!("mix{r}.w2"), vec![m.w2.len()], m.w2.clone())?;
        }
        c.save(path, b"TRUE")
    }

    pub fn load(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct MixMeta {
            kind: Mixing,
            inputs: usize,
            hidden: usize,
            outputs: usize,
        }
        #[derive(Deserialize)]
        struct Meta {
            regions: usize,
            latent: BTreeMap<String, usize>,
            trials: usize,
            time_steps: usize,
            mixing: Vec<MixMeta>,
        }
        let c = Container::load(path, b"TRUE")?;
        let m: Meta = serde_json::from_value(c.meta.clone()).map_err(|e| CtaeError::Format(e.to_string()))?;
        let mask = MembershipMask::from_code_sizes(m.regions, m.latent.iter().map(|(k, v)| (k.as_str(), *v)))?;
        let (_, latent) = c.get("latent")?;
        let (_, labels) = c.get("labels")?;
        let mut mixing = Vec::new();
        for (r, mm) in m.mixing.into_iter().enumerate() {
            mixing.push(MixingMap {
                kind: mm.kind,
                w1: c.get(&format!("mix{r}.w1"))?.1.to_vec(),
                b1: c.get(&format!("mix{r}.b1"))?.1.to_vec(),
                w2: c.get(&format!("mix{r}.w2"))?.1.to_vec(),
                inputs: mm.inputs,
                hidden: mm.hidden,
                outputs: mm.outputs,
            });
        }
        Ok(Self {
            mask,
            trials: m.trials,
            time_steps: m.time_steps,
            latent: latent.to_vec(),
            labels: labels.iter().map(|&v| v as usize).collect(),
            mixing,
        })
    }
}

/// Smooth, zero-mean, unit-RMS random series of length `t`.
fn smooth_row(t: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as usize;
    let taps: Vec<f64> = {
        let raw: Vec<f64> = (-(radius as i64)..=radius as i64)
            .map(|j| (-((j * j) as f64) / (2.0 * sigma * sigma)).exp())
            .collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / s).collect()
    };
    let long: Vec<f64> = (0..t + 2 * radius).map(|_| rng.sample(StandardNormal)).collect();
    let smoothed = smooth_series(&long, &taps);
    let mut row = smoothed[radius..radius + t].to_vec();
    let mean = row.iter().sum::<f64>() / t as f64;
    row.iter_mut().for_each(|v| *v -= mean);
    let rms = (row.iter().map(|v| v * v).sum::<f64>() / t as f64).sqrt().max(1e-12);
    row.iter_mut().for_each(|v| *v /= rms);
    row
}

/// Symmetric orthonormalization: `L ← ((1/T)·L·Lᵀ)^{-1/2}·L`.
pub fn orthonormalize_rows(rows: &mut [f64], d: usize, t: usize) -> Result<()> {
    let l = DMatrix::from_row_slice(d, t, rows);
    let m = (&l * l.transpose()) / t as f64;
    let eig = SymmetricEigen::new(m);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min > 1e-12) {
        return Err(CtaeError::Data(format!(
            "planted rows are linearly dependent (smallest Gram eigenvalue {min:e})"
        )));
    }
    let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v.sqrt()));
    let w = &eig.eigenvectors * inv_sqrt * eig.eigenvectors.transpose();
    let out = w * l;
    for i in 0..d {
        for j in 0..t {
            rows[i * t + j] = out[(i, j)];
        }
    }
    Ok(())
}

/// Draws a dataset and its ground truth. Labels cycle through conditions
/// (`k mod C`); continuous targets are the condition-carrying shared rows.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, GroundTruth)> {
    let mask = spec.validate()?;
    let (k_trials, t, d) = (spec.trials, spec.time_steps, mask.dims());
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mixing: Vec<MixingMap> = (0..spec.regions())
        .map(|r| MixingMap::draw(spec.mixing, claimed(&mask, r).len(), spec.channels[r], &mut rng))
        .collect();

    let shared = mask.shared_dims();
    let designated: Vec<usize> = shared.iter().copied().take(2).collect();
    let profiles: [Vec<f64>; 2] = [1.0, 2.0].map(|f| {
        (0..t)
            .map(|s| 2f64.sqrt() * (f * PI * (s as f64 + 0.5) / t as f64).sin())
            .collect()
    });

    let labels: Vec<usize> = (0..k_trials).map(|k| k % spec.conditions).collect();
    let mut latent = Vec::with_capacity(k_trials * d * t);
    for &c in &labels {
        let mut rows: Vec<f64> = (0..d).flat_map(|_| smooth_row(t, spec.smoothness, &mut rng)).collect();
        let theta = 2.0 * PI * c as f64 / spec.conditions as f64;
        for (j, &row) in designated.iter().enumerate() {
            let amp = spec.condition_strength * if j == 0 { theta.cos() } else { theta.sin() };
            for s in 0..t {
                rows[row * t + s] += amp * profiles[j][s];
            }
        }
        orthonormalize_rows(&mut rows, d, t)?;
        latent.extend(rows);
    }

    let mut regions = Vec::with_capacity(spec.regions());
    for r in 0..spec.regions() {
        let rows = claimed(&mask, r);
        let n = spec.channels[r];
        let mut values = vec![0.0; k_trials * n * t];
        for k in 0..k_trials {
            let base = k * d * t;
            for s in 0..t {
                let l: Vec<f64> = rows.iter().map(|&i| latent[base + i * t + s]).collect();
                let x = mixing[r].apply(&l);
                for (ch, v) in x.into_iter().enumerate() {
                    values[(k * n + ch) * t + s] = v;
                }
            }
        }
        if spec.noise_std > 0.0 {
            for v in values.iter_mut() {
                *v += spec.noise_std * rng.sample::<f64, _>(StandardNormal);
            }
        }
        regions.push(RegionRecording::new(r, (k_trials, n, t), spec.bin_width_ms, ValueKind::Rates, values)?);
    }
    // continuous targets: the condition-carrying shared rows
    let targets = (!designated.is_empty()).then(|| {
        let mut v = Vec::with_capacity(k_trials * designated.len() * t);
        for k in 0..k_trials {
            for &i in &designated {
                v.extend_from_slice(&latent[k * d * t + i * t..k * d * t + (i + 1) * t]);
            }
        }
        TrialTargets {
            dims: designated.len(),
            values: v,
        }
    });
    let truth = GroundTruth {
        mask,
        trials: k_trials,
        time_steps: t,
        latent,
        labels: labels.clone(),
        mixing,
    };
    Ok((Dataset::new(regions, Some(labels), targets)?, truth))
}
