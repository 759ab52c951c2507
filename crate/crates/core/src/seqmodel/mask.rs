//! Region membership of latent dimensions.
//!
//! A subset code is a binary string of length R whose first character is
//! region 0 ("110" = claimed by regions 0 and 1). Blocks are laid out
//! contiguously in canonical order: descending popcount, then codes that
//! claim earlier regions first (so "10" precedes "01").

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{CtaeError, Result};

/// Nonzero subset of regions, stored as one flag per region.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SubsetCode {
    flags: Vec<bool>,
}

impl SubsetCode {
    pub fn new(flags: Vec<bool>) -> Result<Self> {
        if flags.is_empty() {
            return Err(CtaeError::Config("empty subset code".into()));
        }
        if !flags.iter().any(|&f| f) {
            return Err(CtaeError::Config(format!(
                "subset code {} claims no region",
                flags.iter().map(|&f| if f { '1' } else { '0' }).collect::<String>()
            )));
        }
        Ok(Self { flags })
    }

    pub fn regions(&self) -> usize {
        self.flags.len()
    }

    pub fn claims(&self, region: usize) -> bool {
        self.flags.get(region).copied().unwrap_or(false)
    }

    pub fn popcount(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    /// Shared codes are claimed by at least two regions.
    pub fn is_shared(&self) -> bool {
        self.popcount() >= 2
    }

    /// Canonical ordering used for block layout.
    pub fn canonical_cmp(&self, other: &Self) -> Ordering {
        other
            .popcount()
            .cmp(&self.popcount())
            .then_with(|| other.flags.cmp(&self.flags))
    }
}

impl fmt::Display for SubsetCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.flags {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for SubsetCode {
    type Err = CtaeError;

    fn from_str(s: &str) -> Result<Self> {
        let flags = s
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => Err(CtaeError::Config(format!("subset code {s:?} must contain only 0 and 1"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(flags)
    }
}

impl TryFrom<String> for SubsetCode {
    type Error = CtaeError;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SubsetCode> for String {
    fn from(c: SubsetCode) -> String {
        c.to_string()
    }
}

/// Contiguous run of latent dimensions sharing one subset code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub code: SubsetCode,
    pub indices: Vec<usize>,
}

/// Binary R × D membership matrix with derived masks and block index sets.
#[derive(Debug, Clone, PartialEq)]
pub struct MembershipMask {
    regions: usize,
    matrix: Vec<Vec<bool>>,
    blocks: Vec<Block>,
}

impl MembershipMask {
    /// Builds the canonical mask from subset sizes. Zero-size entries are
    /// allowed and produce empty blocks that are omitted from the layout.
    pub fn build_membership(regions: usize, sizes: &BTreeMap<SubsetCode, usize>) -> Result<Self> {
        if regions < 2 {
            return Err(CtaeError::Config(format!("need at least 2 regions, got {regions}")));
        }
        let mut codes: Vec<(&SubsetCode, usize)> = sizes.iter().map(|(c, &k)| (c, k)).collect();
        for (c, _) in &codes {
            if c.regions() != regions {
                return Err(CtaeError::Config(format!(
                    "subset code {c} has length {} but there are {regions} regions",
                    c.regions()
                )));
            }
        }
        codes.sort_by(|a, b| a.0.canonical_cmp(b.0));
        let mut matrix = vec![Vec::new(); regions];
        let mut blocks = Vec::new();
        for (code, k) in codes {
            if k == 0 {
                continue;
            }
            let start = matrix[0].len();
            for (r, row) in matrix.iter_mut().enumerate() {
                row.extend(std::iter::repeat_n(code.claims(r), k));
            }
            blocks.push(Block {
                code: code.clone(),
                indices: (start..start + k).collect(),
            });
        }
        if matrix[0].is_empty() {
            return Err(CtaeError::Config("latent dimension D must be positive".into()));
        }
        Ok(Self {
            regions,
            matrix,
            blocks,
        })
    }

    /// Parses a code → size map written with string keys.
    pub fn from_code_sizes<'a>(
        regions: usize,
        sizes: impl IntoIterator<Item = (&'a str, usize)>,
    ) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (code, k) in sizes {
            let c: SubsetCode = code.parse()?;
            if map.insert(c, k).is_some() {
                return Err(CtaeError::Config(format!("subset code {code} listed twice")));
            }
        }
        Self::build_membership(regions, &map)
    }

    /// Two-region layout: shared, region-0 private, region-1 private.
    pub fn build_two_region_masks(d_s: usize, d_1: usize, d_2: usize) -> Result<Self> {
        Self::from_code_sizes(2, [("11", d_s), ("10", d_1), ("01", d_2)])
    }

    /// Accepts an arbitrary matrix (rows = regions). Columns need not be
    /// grouped; blocks list indices in column order per distinct code,
    /// ordered canonically.
    pub fn from_matrix(matrix: Vec<Vec<bool>>) -> Result<Self> {
        let regions = matrix.len();
        if regions < 2 {
            return Err(CtaeError::Config(format!("need at least 2 regions, got {regions}")));
        }
        let d = matrix[0].len();
        if d == 0 || matrix.iter().any(|row| row.len() != d) {
            return Err(CtaeError::Config("membership rows must have equal positive length".into()));
        }
        let mut by_code: BTreeMap<Vec<bool>, Vec<usize>> = BTreeMap::new();
        for j in 0..d {
            let col: Vec<bool> = matrix.iter().map(|row| row[j]).collect();
            if !col.iter().any(|&b| b) {
                return Err(CtaeError::Config(format!("latent dimension {j} is claimed by no region")));
            }
            by_code.entry(col).or_default().push(j);
        }
        let mut blocks: Vec<Block> = by_code
            .into_iter()
            .map(|(flags, indices)| Block {
                code: SubsetCode { flags },
                indices,
            })
            .collect();
        blocks.sort_by(|a, b| a.code.canonical_cmp(&b.code));
        Ok(Self {
            regions,
            matrix,
            blocks,
        })
    }

    pub fn regions(&self) -> usize {
        self.regions
    }

    pub fn dims(&self) -> usize {
        self.matrix[0].len()
    }

    pub fn matrix(&self) -> &[Vec<bool>] {
        &self.matrix
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, code: &SubsetCode) -> Option<&Block> {
        self.blocks.iter().find(|b| &b.code == code)
    }

    /// w_r as 0/1 reals.
    pub fn region_weights(&self, r: usize) -> Vec<f64> {
        self.matrix[r].iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    /// Number of regions claiming each dimension.
    pub fn claim_counts(&self) -> Vec<f64> {
        (0..self.dims())
            .map(|j| self.matrix.iter().filter(|row| row[j]).count() as f64)
            .collect()
    }

    /// s: 1 where at least two regions claim the dimension.
    pub fn shared_indicator(&self) -> Vec<f64> {
        self.claim_counts()
            .into_iter()
            .map(|c| if c >= 2.0 { 1.0 } else { 0.0 })
            .collect()
    }

    /// w_r ⊙ s, the input mask for shared-only decoding of region r.
    pub fn shared_weights(&self, r: usize) -> Vec<f64> {
        self.region_weights(r)
            .into_iter()
            .zip(self.shared_indicator())
            .map(|(w, s)| w * s)
            .collect()
    }

    /// w_1 ⊙ w_2; only defined for two regions.
    pub fn intersection(&self) -> Result<Vec<f64>> {
        if self.regions != 2 {
            return Err(CtaeError::Config(format!(
                "intersection mask is defined for 2 regions, mask has {}",
                self.regions
            )));
        }
        Ok(self
            .region_weights(0)
            .into_iter()
            .zip(self.region_weights(1))
            .map(|(a, b)| a * b)
            .collect())
    }

    /// Indices of all dimensions claimed by two or more regions.
    pub fn shared_dims(&self) -> Vec<usize> {
        (0..self.dims())
            .filter(|&j| self.matrix.iter().filter(|row| row[j]).count() >= 2)
            .collect()
    }

    /// Indices claimed by region `r` alone.
    pub fn private_dims(&self, r: usize) -> Vec<usize> {
        (0..self.dims())
            .filter(|&j| {
                self.matrix[r][j] && self.matrix.iter().filter(|row| row[j]).count() == 1
            })
            .collect()
    }

    /// Subset code → size map, suitable for rebuilding the mask.
    pub fn code_sizes(&self) -> BTreeMap<SubsetCode, usize> {
        self.blocks
            .iter()
            .map(|b| (b.code.clone(), b.indices.len()))
            .collect()
    }
}
