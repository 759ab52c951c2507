//! Deterministic, optionally stratified trial partitions.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CtaeError, Result};

/// Target part sizes by largest remainder so they sum to `k` exactly.
fn part_sizes(k: usize, fractions: &[f64]) -> Vec<usize> {
    let total: f64 = fractions.iter().sum();
    let raw: Vec<f64> = fractions.iter().map(|f| f / total * k as f64).collect();
    let mut sizes: Vec<usize> = raw.iter().map(|v| v.floor() as usize).collect();
    let mut rest = k - sizes.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (raw[a] - raw[a].floor(), raw[b] - raw[b].floor());
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        sizes[i] += 1;
        rest -= 1;
    }
    sizes
}

/// Deals `ordered` into parts with the given sizes, always feeding the part
/// furthest behind its proportional share. Consecutive runs of one class
/// are therefore spread evenly across parts.
fn deal(ordered: &[usize], sizes: &[usize]) -> Vec<Vec<usize>> {
    let k = ordered.len() as f64;
    let mut parts: Vec<Vec<usize>> = sizes.iter().map(|&s| Vec::with_capacity(s)).collect();
    for (i, &idx) in ordered.iter().enumerate() {
        let progress = (i + 1) as f64 / k;
        let mut best = None;
        let mut best_deficit = f64::NEG_INFINITY;
        for (p, part) in parts.iter().enumerate() {
            if part.len() >= sizes[p] {
                continue;
            }
            let deficit = sizes[p] as f64 * progress - part.len() as f64;
            if deficit > best_deficit + 1e-12 {
                best_deficit = deficit;
                best = Some(p);
            }
        }
        parts[best.expect("sizes sum to the number of items")].push(idx);
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    parts
}

fn ordered_indices(k: usize, labels: Option<&[usize]>, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..k).collect();
    idx.shuffle(rng);
    if let Some(l) = labels {
        idx.sort_by_key(|&i| l[i]);
    }
    idx
}

/// Splits `k` trials into parts proportional to `fractions` (which may sum
/// to less than one; the remainder becomes a final part). Stratified by
/// label when labels are given.
pub fn split_trials(k: usize, fractions: &[f64], labels: Option<&[usize]>, seed: u64) -> Result<Vec<Vec<usize>>> {
    if fractions.is_empty() || fractions.iter().any(|f| !(*f >= 0.0)) {
        return Err(CtaeError::Config(format!("invalid split fractions {fractions:?}")));
    }
    let sum: f64 = fractions.iter().sum();
    if sum > 1.0 + 1e-9 || sum <= 0.0 {
        return Err(CtaeError::Config(format!("split fractions sum to {sum}")));
    }
    if let Some(l) = labels {
        if l.len() != k {
            return Err(CtaeError::Data(format!("{} labels for {k} trials", l.len())));
        }
    }
    let mut fr = fractions.to_vec();
    if sum < 1.0 - 1e-9 {
        fr.push(1.0 - sum);
    }
    let sizes = part_sizes(k, &fr);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(deal(&ordered_indices(k, labels, &mut rng), &sizes))
}

/// `folds` near-equal stratified folds. Errors if some fold would miss a
/// class that occurs in the data.
pub fn stratified_folds(labels: &[usize], folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 || folds > labels.len() {
        return Err(CtaeError::Config(format!("cannot make {folds} folds from {} trials", labels.len())));
    }
    let parts = split_trials(labels.len(), &vec![1.0 / folds as f64; folds], Some(labels), seed)?;
    let classes: std::collections::BTreeSet<usize> = labels.iter().copied().collect();
    for (f, part) in parts.iter().enumerate() {
        for &c in &classes {
            if !part.iter().any(|&i| labels[i] == c) {
                return Err(CtaeError::Data(format!("fold {f} has no trials of class {c}")));
            }
        }
    }
    Ok(parts)
}

/// Unstratified folds.
pub fn plain_folds(k: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 || folds > k {
        return Err(CtaeError::Config(format!("cannot make {folds} folds from {k} trials")));
    }
    split_trials(k, &vec![1.0 / folds as f64; folds], None, seed)
}

/// Indices of all trials not in `fold`.
pub fn complement(k: usize, fold: &[usize]) -> Vec<usize> {
    let mut mark = vec![false; k];
    for &i in fold {
        mark[i] = true;
    }
    (0..k).filter(|&i| !mark[i]).collect()
}
