use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::mask::{MembershipMask, SubsetCode};
use crate::error::{CtaeError, Result};

/// How decoder query tokens are formed before cross-attending to latents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DecoderQueries {
    /// Positional encodings through a learned projection (data independent).
    #[default]
    Positional,
    /// The masked latent sequence itself, projected, plus positional encodings.
    Latent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Channel count per region; its length is R.
    pub channels: Vec<usize>,
    pub time_steps: usize,
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ff_width: usize,
    /// Subset code → block size.
    pub latent: BTreeMap<SubsetCode, usize>,
    pub dropout: f64,
    /// Per-channel z-scoring with training-set statistics.
    pub standardize: bool,
    #[serde(default)]
    pub decoder_queries: DecoderQueries,
}

impl ModelConfig {
    pub const LN_EPS: f64 = 1e-5;

    /// Two-region config with the default width settings.
    pub fn two_region(channels: [usize; 2], time_steps: usize, d_s: usize, d_1: usize, d_2: usize) -> Self {
        let mut latent = BTreeMap::new();
        for (code, k) in [("11", d_s), ("10", d_1), ("01", d_2)] {
            latent.insert(code.parse().expect("static code"), k);
        }
        Self {
            channels: channels.to_vec(),
            time_steps,
            layers: 1,
            d_model: 64,
            heads: 4,
            ff_width: 256,
            latent,
            dropout: 0.1,
            standardize: true,
            decoder_queries: DecoderQueries::Positional,
        }
    }

    pub fn regions(&self) -> usize {
        self.channels.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.latent.values().sum()
    }

    pub fn mask(&self) -> Result<MembershipMask> {
        MembershipMask::build_membership(self.regions(), &self.latent)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CtaeError::Config(m));
        if self.regions() < 2 {
            return bad(format!("need at least 2 regions, got {}", self.regions()));
        }
        if self.channels.contains(&0) {
            return bad("every region needs at least one channel".into());
        }
        if self.time_steps == 0 || self.layers == 0 || self.ff_width == 0 {
            return bad("time_steps, layers and ff_width must be positive".into());
        }
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return bad(format!("d_model {} not divisible by heads {}", self.d_model, self.heads));
        }
        if self.d_model == 0 || self.d_model % 2 != 0 {
            return bad(format!("d_model must be even and positive, got {}", self.d_model));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        self.mask()?;
        Ok(())
    }
}
