//! Reconstruction, shared-only, alignment and Gram losses, the warm-up
//! schedule for the Gram weight, and the weighted total.
//!
//! Every Frobenius loss is a sum over the entries of one trial, averaged
//! over the trials of the batch.

use diffcore::{Graph, ParameterSet, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{CtaeError, Result};
use crate::seqmodel::{fuse_on_graph, Ctae, Forward, FusionPath, MembershipMask, Mode};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub shared: f64,
    pub align: f64,
    pub orth: f64,
    /// Warm-up length `e` in epochs for the Gram weight.
    pub warmup: usize,
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_shared", self.shared), ("lambda_align", self.align), ("lambda_orth", self.orth)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(CtaeError::Config(format!("{name} must be a finite non-negative number, got {v}")));
            }
        }
        if self.warmup == 0 {
            return Err(CtaeError::Config("warm-up length must be at least 1 epoch".into()));
        }
        Ok(())
    }
}

/// Gram-loss weight at epoch `t`: zero through `e`, a linear ramp over
/// `(e, 2e]`, then `lambda`.
pub fn warmup_coefficient(t: usize, e: usize, lambda: f64) -> f64 {
    assert!(e >= 1, "warm-up length must be positive");
    if t <= e {
        0.0
    } else if t <= 2 * e {
        (t - e) as f64 / e as f64 * lambda
    } else {
        lambda
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossComponents {
    pub rec: f64,
    pub shared: f64,
    pub align: f64,
    pub orth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub epoch: usize,
    pub rec: f64,
    pub shared: f64,
    pub align: f64,
    pub orth: f64,
    pub lambda_orth_eff: f64,
    pub total: f64,
}

impl LossReport {
    pub fn components(&self) -> LossComponents {
        LossComponents {
            rec: self.rec,
            shared: self.shared,
            align: self.align,
            orth: self.orth,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
            && self.rec.is_finite()
            && self.shared.is_finite()
            && self.align.is_finite()
            && self.orth.is_finite()
    }
}

/// Weighted total with the warm-up applied to the Gram weight.
pub fn total_loss(c: LossComponents, w: &LossWeights, epoch: usize) -> LossReport {
    let lo = warmup_coefficient(epoch, w.warmup, w.orth);
    total_with(c, w.shared, w.align, lo, epoch)
}

/// Weighted total with an explicit Gram weight.
pub fn total_with(c: LossComponents, shared: f64, align: f64, orth: f64, epoch: usize) -> LossReport {
    LossReport {
        epoch,
        rec: c.rec,
        shared: c.shared,
        align: c.align,
        orth: c.orth,
        lambda_orth_eff: orth,
        total: c.rec + shared * c.shared + align * c.align + orth * c.orth,
    }
}

fn batch_mean(g: &mut Graph, per_batch_sum: Var, batch: usize) -> Result<Var> {
    Ok(g.scale(per_batch_sum, 1.0 / batch as f64)?)
}

/// Σ_r ‖X̂_r − X_r‖², averaged over trials.
pub fn reconstruction(g: &mut Graph, xhat: &[Var], x: &[Var], batch: usize) -> Result<Var> {
    if xhat.len() != x.len() || x.is_empty() {
        return Err(CtaeError::Shape(format!(
            "{} reconstructions for {} regions",
            xhat.len(),
            x.len()
        )));
    }
    let mut acc: Option<Var> = None;
    for (&a, &b) in xhat.iter().zip(x) {
        let d = g.sub(a, b)?;
        let s = g.sum_squares(d)?;
        acc = Some(match acc {
            None => s,
            Some(prev) => g.add(prev, s)?,
        });
    }
    batch_mean(g, acc.unwrap(), batch)
}

/// Σ_r ‖w_r ⊙ Z − w_r ⊙ Z_r‖², averaged over trials.
pub fn alignment(g: &mut Graph, fused: Var, per_region: &[Var], mask: &MembershipMask, batch: usize) -> Result<Var> {
    if per_region.len() != mask.regions() {
        return Err(CtaeError::Shape(format!(
            "alignment expects {} regions, got {}",
            mask.regions(),
            per_region.len()
        )));
    }
    let mut acc: Option<Var> = None;
    for (r, &zr) in per_region.iter().enumerate() {
        let w = mask.region_weights(r);
        let a = g.mul_cols(fused, &w)?;
        let b = g.mul_cols(zr, &w)?;
        let d = g.sub(a, b)?;
        let s = g.sum_squares(d)?;
        acc = Some(match acc {
            None => s,
            Some(prev) => g.add(prev, s)?,
        });
    }
    batch_mean(g, acc.unwrap(), batch)
}

/// ‖G − diag G‖² with G = (1/T)·ZᵀZ per trial (time-major `[B·T, D]`),
/// averaged over trials.
pub fn orthogonality(g: &mut Graph, z: Var, batch: usize) -> Result<Var> {
    let (rows, d) = (g.shape(z)[0], g.shape(z)[1]);
    if batch == 0 || rows % batch != 0 {
        return Err(CtaeError::Shape(format!("{rows} rows do not split into {batch} trials")));
    }
    let t = rows / batch;
    let gram = g.batched_gram(z, batch)?;
    let gram = g.scale(gram, 1.0 / t as f64)?;
    let mut off = vec![1.0; batch * d * d];
    for b in 0..batch {
        for i in 0..d {
            off[b * d * d + i * d + i] = 0.0;
        }
    }
    let offd = g.mul_const(gram, Tensor::new(vec![batch * d, d], off)?)?;
    let s = g.sum_squares(offd)?;
    batch_mean(g, s, batch)
}

/// Σ_r ‖D_r((w_r ⊙ s) ⊙ Z) − X_r‖², averaged over trials.
#[allow(clippy::too_many_arguments)]
pub fn shared_only(
    g: &mut Graph,
    model: &Ctae,
    p: &ParameterSet,
    fused: Var,
    x: &[Var],
    batch: usize,
    path: FusionPath,
    mode: &mut Mode,
) -> Result<Var> {
    let mut xhat = Vec::with_capacity(x.len());
    for r in 0..x.len() {
        let w = model.shared_only_weights(r, path)?;
        xhat.push(model.decode(g, p, r, fused, &w, batch, mode)?);
    }
    reconstruction(g, &xhat, x, batch)
}

/// All loss nodes of one forward pass plus the scalar report.
pub struct LossGraph {
    pub forward: Forward,
    pub rec: Var,
    pub shared: Var,
    pub align: Var,
    pub orth: Var,
    /// Root for backpropagation; terms with zero weight are left out.
    pub total: Var,
    pub report: LossReport,
}

/// Builds the full objective for a batch. `lambda_orth` is the Gram weight
/// actually applied (already warmed up, or the final target for validation).
#[allow(clippy::too_many_arguments)]
pub fn build_losses(
    g: &mut Graph,
    model: &Ctae,
    p: &ParameterSet,
    x: &[Var],
    batch: usize,
    weights: &LossWeights,
    lambda_orth: f64,
    epoch: usize,
    path: FusionPath,
    mode: &mut Mode,
) -> Result<LossGraph> {
    let forward = model.encode_all(g, p, x, batch, path, mode)?;
    let mut xhat = Vec::with_capacity(x.len());
    for r in 0..x.len() {
        let w = model.mask().region_weights(r);
        xhat.push(model.decode(g, p, r, forward.fused, &w, batch, mode)?);
    }
    let rec = reconstruction(g, &xhat, x, batch)?;
    let shared = shared_only(g, model, p, forward.fused, x, batch, path, mode)?;
    let align = alignment(g, forward.fused, &forward.per_region, model.mask(), batch)?;
    let orth = orthogonality(g, forward.fused, batch)?;

    let comps = LossComponents {
        rec: g.scalar(rec),
        shared: g.scalar(shared),
        align: g.scalar(align),
        orth: g.scalar(orth),
    };
    let report = total_with(comps, weights.shared, weights.align, lambda_orth, epoch);

    let mut total = rec;
    for (lam, v) in [(weights.shared, shared), (weights.align, align), (lambda_orth, orth)] {
        if lam != 0.0 {
            let t = g.scale(v, lam)?;
            total = g.add(total, t)?;
        }
    }
    Ok(LossGraph {
        forward,
        rec,
        shared,
        align,
        orth,
        total,
        report,
    })
}

fn time_major(g: &mut Graph, x: &Tensor) -> Result<Var> {
    Ok(g.input(x.transpose()?))
}

/// Single-trial reconstruction loss on `[N_r × T]` arrays.
pub fn loss_reconstruction(xhat: &[Tensor], x: &[Tensor]) -> Result<f64> {
    let mut g = Graph::new();
    let a = xhat.iter().map(|t| time_major(&mut g, t)).collect::<Result<Vec<_>>>()?;
    let b = x.iter().map(|t| time_major(&mut g, t)).collect::<Result<Vec<_>>>()?;
    for (i, j) in a.iter().zip(&b) {
        if g.shape(*i) != g.shape(*j) {
            return Err(CtaeError::Shape(format!("{:?} vs {:?}", g.shape(*i), g.shape(*j))));
        }
    }
    let v = reconstruction(&mut g, &a, &b, 1)?;
    Ok(g.scalar(v))
}

/// Single-trial alignment loss on `[D × T]` arrays; `z` is recomputed by
/// fusion when `None`.
pub fn loss_alignment(z: Option<&Tensor>, per_region: &[Tensor], mask: &MembershipMask) -> Result<f64> {
    let mut g = Graph::new();
    let zs = per_region.iter().map(|t| time_major(&mut g, t)).collect::<Result<Vec<_>>>()?;
    let fused = match z {
        Some(z) => time_major(&mut g, z)?,
        None => fuse_on_graph(&mut g, &zs, mask, FusionPath::General)?,
    };
    let v = alignment(&mut g, fused, &zs, mask, 1)?;
    Ok(g.scalar(v))
}

/// Single-trial Gram loss on a `[D × T]` array.
pub fn loss_orthogonality(z: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let zi = time_major(&mut g, z)?;
    let v = orthogonality(&mut g, zi, 1)?;
    Ok(g.scalar(v))
}

/// Single-trial shared-only loss: decodes the fused `[D × T]` latent with
/// each region's shared mask.
pub fn loss_shared_only(model: &Ctae, p: &ParameterSet, z: &Tensor, x: &[Tensor]) -> Result<f64> {
    let mut g = Graph::new();
    let zi = time_major(&mut g, z)?;
    let xs = x.iter().map(|t| time_major(&mut g, t)).collect::<Result<Vec<_>>>()?;
    let v = shared_only(&mut g, model, p, zi, &xs, 1, FusionPath::General, &mut Mode::Eval)?;
    Ok(g.scalar(v))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_branches() {
        assert_eq!(warmup_coefficient(50, 100, 0.01), 0.0);
        assert_eq!(warmup_coefficient(150, 100, 0.01), 0.5 * 0.01);
        assert_eq!(warmup_coefficient(300, 100, 0.01), 0.01);
        assert_eq!(warmup_coefficient(100, 100, 2.0), 0.0);
        assert_eq!(warmup_coefficient(200, 100, 2.0), 2.0);
    }

    #[test]
    fn total_arithmetic() {
        let c = LossComponents {
            rec: 1.0,
            shared: 2.0,
            align: 3.0,
            orth: 4.0,
        };
        let w = LossWeights {
            shared: 1.0,
            align: 1.0,
            orth: 1.0,
            warmup: 10,
        };
        assert_eq!(total_loss(c, &w, 100).total, 10.0);
        assert_eq!(total_loss(c, &w, 5).total, 6.0);
        let zero = LossWeights {
            shared: 0.0,
            align: 0.0,
            orth: 0.0,
            warmup: 10,
        };
        assert_eq!(total_loss(c, &zero, 100).total, 1.0);
    }

    #[test]
    fn gram_hand_value() {
        let z = Tensor::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(loss_orthogonality(&z).unwrap(), 2.0);
    }
}
