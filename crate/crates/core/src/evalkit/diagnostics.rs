use serde::{Deserialize, Serialize};

use crate::error::{CtaeError, Result};
use crate::seqmodel::MembershipMask;
use crate::trainer::LatentSet;

/// Normalized latent dot products averaged over trials, and their block
/// summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramDiagnostics {
    /// `[D × D]` mean of `|⟨z_i, z_j⟩| / (‖z_i‖ ‖z_j‖)`; `None` where a row
    /// was zero in every trial.
    pub normalized: Vec<Vec<Option<f64>>>,
    /// Mean of `(1/T)‖z_i‖²` over trials.
    pub raw_diagonal: Vec<f64>,
    /// Block codes in mask order.
    pub blocks: Vec<String>,
    /// Mean off-diagonal entry within (diagonal) and between blocks.
    pub block_means: Vec<Vec<Option<f64>>>,
    /// Mean over all off-diagonal pairs.
    pub mean_off_diagonal: f64,
    /// Dimensions with a zero row in at least one trial.
    pub collapsed: Vec<usize>,
}

fn check_layout(values: &[f64], set: &LatentSet, mask: &MembershipMask) -> Result<()> {
    if values.len() != set.trials * set.dims * set.time_steps || mask.dims() != set.dims {
        return Err(CtaeError::Shape("latent array does not match its layout".into()));
    }
    Ok(())
}

/// Gram diagnostics of `values`, an array laid out like `set.fused`.
pub fn gram_diagnostics(values: &[f64], set: &LatentSet, mask: &MembershipMask) -> Result<GramDiagnostics> {
    check_layout(values, set, mask)?;
    let (k, d, t) = (set.trials, set.dims, set.time_steps);
    let mut sum = vec![vec![0.0; d]; d];
    let mut count = vec![vec![0usize; d]; d];
    let mut raw = vec![0.0; d];
    let mut collapsed = vec![false; d];
    for kk in 0..k {
        let z = &values[kk * d * t..(kk + 1) * d * t];
        let row = |i: usize| &z[i * t..(i + 1) * t];
        let norms: Vec<f64> = (0..d).map(|i| row(i).iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
        let biggest = norms.iter().cloned().fold(0.0, f64::max);
        let alive: Vec<bool> = norms.iter().map(|&n| n > 1e-12 * biggest && n > 0.0).collect();
        for i in 0..d {
            raw[i] += norms[i] * norms[i] / t as f64 / k as f64;
            if !alive[i] {
                collapsed[i] = true;
                continue;
            }
            for j in 0..d {
                if !alive[j] {
                    continue;
                }
                let dot: f64 = row(i).iter().zip(row(j)).map(|(a, b)| a * b).sum();
                sum[i][j] += dot.abs() / (norms[i] * norms[j]);
                count[i][j] += 1;
            }
        }
    }
    let normalized: Vec<Vec<Option<f64>>> = (0..d)
        .map(|i| (0..d).map(|j| (count[i][j] > 0).then(|| sum[i][j] / count[i][j] as f64)).collect())
        .collect();
    let blocks = mask.blocks();
    let block_means = blocks
        .iter()
        .map(|a| {
            blocks
                .iter()
                .map(|b| {
                    let vals: Vec<f64> = a
                        .indices
                        .iter()
                        .flat_map(|&i| b.indices.iter().map(move |&j| (i, j)))
                        .filter(|(i, j)| i != j)
                        .filter_map(|(i, j)| normalized[i][j])
                        .collect();
                    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
                })
                .collect()
        })
        .collect();
    let off: Vec<f64> = (0..d)
        .flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j)))
        .filter_map(|(i, j)| normalized[i][j])
        .collect();
    let mean_off_diagonal = if off.is_empty() { 0.0 } else { off.iter().sum::<f64>() / off.len() as f64 };
    Ok(GramDiagnostics {
        normalized,
        raw_diagonal: raw,
        blocks: blocks.iter().map(|b| b.code.to_string()).collect(),
        block_means,
        mean_off_diagonal,
        collapsed: (0..d).filter(|&i| collapsed[i]).collect(),
    })
}

/// How far each region's shared rows sit from the fused rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentDiagnostics {
    /// Latent dimensions claimed by two or more regions.
    pub dims: Vec<usize>,
    /// Per dimension: squared deviation averaged over trials, bins and
    /// claiming regions.
    pub deviation: Vec<f64>,
    /// `[R × dims]` per-region averages; `None` where the region does not
    /// claim the dimension.
    pub per_region: Vec<Vec<Option<f64>>>,
    /// Trial-averaged fused traces, `[dims][T]`.
    pub fused_traces: Vec<Vec<f64>>,
    /// Trial-averaged encoder traces, `[R][dims][T]` (zeros where unclaimed).
    pub region_traces: Vec<Vec<Vec<f64>>>,
}

impl AlignmentDiagnostics {
    /// Long-format traces: `source,dim,bin,value` with `source` either
    /// `fused` or `region{r}`.
    pub fn traces_csv(&self) -> String {
        let mut s = String::from("source,dim,bin,value\n");
        for (a, &dim) in self.dims.iter().enumerate() {
            for (t, v) in self.fused_traces[a].iter().enumerate() {
                s += &format!("fused,{dim},{t},{v}\n");
            }
        }
        for (r, traces) in self.region_traces.iter().enumerate() {
            for (a, &dim) in self.dims.iter().enumerate() {
                if self.per_region[r][a].is_none() {
                    continue;
                }
                for (t, v) in traces[a].iter().enumerate() {
                    s += &format!("region{r},{dim},{t},{v}\n");
                }
            }
        }
        s
    }
}

pub fn alignment_diagnostics(set: &LatentSet, mask: &MembershipMask) -> Result<AlignmentDiagnostics> {
    check_layout(&set.fused, set, mask)?;
    if set.per_region.len() != mask.regions() {
        return Err(CtaeError::Shape("one latent array per region expected".into()));
    }
    let (k, d, t) = (set.trials, set.dims, set.time_steps);
    let dims = mask.shared_dims();
    let r_count = mask.regions();
    let mut per_region = vec![vec![None; dims.len()]; r_count];
    let mut region_traces = vec![vec![vec![0.0; t]; dims.len()]; r_count];
    let mut fused_traces = vec![vec![0.0; t]; dims.len()];
    let mut deviation = vec![0.0; dims.len()];
    for (a, &i) in dims.iter().enumerate() {
        let mut claimers = 0;
        for kk in 0..k {
            let base = (kk * d + i) * t;
            for s in 0..t {
                fused_traces[a][s] += set.fused[base + s] / k as f64;
            }
        }
        for r in 0..r_count {
            if !mask.matrix()[r][i] {
                continue;
            }
            claimers += 1;
            let mut acc = 0.0;
            for kk in 0..k {
                let base = (kk * d + i) * t;
                for s in 0..t {
                    let v = set.per_region[r][base + s];
                    acc += (v - set.fused[base + s]).powi(2);
                    region_traces[r][a][s] += v / k as f64;
                }
            }
            let mean = acc / (k * t) as f64;
            per_region[r][a] = Some(mean);
            deviation[a] += mean;
        }
        deviation[a] /= claimers as f64;
    }
    Ok(AlignmentDiagnostics {
        dims,
        deviation,
        per_region,
        fused_traces,
        region_traces,
    })
}

/// Share of total latent variance carried by each dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    /// Per dimension, in latent order.
    pub fractions: Vec<f64>,
    /// Dimensions sorted by decreasing fraction.
    pub order: Vec<usize>,
    pub threshold: f64,
    /// Number of dimensions whose fraction exceeds `threshold`.
    pub effective_dims: usize,
}

pub const EFFECTIVE_DIM_THRESHOLD: f64 = 0.01;

/// Variance of each dimension over all trials and bins, normalized by the
/// total. `values` is `[K × D × T]`.
pub fn variance_per_latent(values: &[f64], trials: usize, dims: usize, time_steps: usize) -> Result<VarianceReport> {
    if values.len() != trials * dims * time_steps || trials * time_steps == 0 {
        return Err(CtaeError::Shape("latent array does not match its layout".into()));
    }
    let n = (trials * time_steps) as f64;
    let var: Vec<f64> = (0..dims)
        .map(|i| {
            let row = |k: usize| &values[(k * dims + i) * time_steps..(k * dims + i + 1) * time_steps];
            let mean = (0..trials).map(|k| row(k).iter().sum::<f64>()).sum::<f64>() / n;
            (0..trials).map(|k| row(k).iter().map(|v| (v - mean).powi(2)).sum::<f64>()).sum::<f64>() / n
        })
        .collect();
    let total: f64 = var.iter().sum();
    let fractions: Vec<f64> = var.iter().map(|v| if total > 0.0 { v / total } else { 0.0 }).collect();
    let mut order: Vec<usize> = (0..dims).collect();
    order.sort_by(|&a, &b| fractions[b].total_cmp(&fractions[a]).then(a.cmp(&b)));
    Ok(VarianceReport {
        effective_dims: fractions.iter().filter(|&&f| f > EFFECTIVE_DIM_THRESHOLD).count(),
        fractions,
        order,
        threshold: EFFECTIVE_DIM_THRESHOLD,
    })
}
