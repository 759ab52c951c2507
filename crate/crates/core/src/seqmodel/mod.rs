//! Causal transformer encoders/decoders, membership masks and latent fusion.

mod config;
mod mask;
mod model;

pub use config::{DecoderQueries, ModelConfig};
pub use mask::{Block, MembershipMask, SubsetCode};
pub use model::{
    extract_blocks, fuse_latents, fuse_on_graph, positional_encoding, Ctae, Forward, FusionPath,
    LatentBlocks, LatentBundle, Mode,
};
