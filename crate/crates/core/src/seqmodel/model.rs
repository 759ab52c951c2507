//! Encoder/decoder stacks and latent fusion on a differentiable tape.
//!
//! Inside the tape, sequences are stored time-major: a batch of `B` trials
//! with `T` steps and `F` features is a `[B·T, F]` array whose row
//! `b·T + t` holds trial `b` at step `t`. Public helpers that take or
//! return single trials use the `[features × T]` orientation instead.

use diffcore::{Graph, ParameterSet, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use super::config::{DecoderQueries, ModelConfig};
use super::mask::MembershipMask;
use crate::error::{CtaeError, Result};

/// Sinusoidal table `[T × d_model]`: sin on even columns, cos on odd.
pub fn positional_encoding(time_steps: usize, d_model: usize) -> Result<Tensor> {
    if d_model % 2 != 0 {
        return Err(CtaeError::Config(format!("positional encoding needs even width, got {d_model}")));
    }
    let mut data = vec![0.0; time_steps * d_model];
    for t in 0..time_steps {
        for i in 0..d_model / 2 {
            let freq = 10000f64.powf((2 * i) as f64 / d_model as f64);
            let angle = t as f64 / freq;
            data[t * d_model + 2 * i] = angle.sin();
            data[t * d_model + 2 * i + 1] = angle.cos();
        }
    }
    Ok(Tensor::new(vec![time_steps, d_model], data)?)
}

/// Whether stochastic layers are active.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

/// Which fusion/shared-mask formulas are used. Both give the same numbers
/// for two regions; the specialised path exists to check that claim.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionPath {
    #[default]
    General,
    TwoRegion,
}

/// Architecture of a coupled autoencoder. Parameters live in a separate
/// [`ParameterSet`] so the same structure can be evaluated at perturbed
/// parameter values.
#[derive(Debug, Clone)]
pub struct Ctae {
    config: ModelConfig,
    mask: MembershipMask,
    pe: Tensor,
}

/// Per-region encoder outputs and the fused latent, time-major.
pub struct Forward {
    pub per_region: Vec<Var>,
    pub fused: Var,
}

impl Ctae {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mask = config.mask()?;
        let pe = positional_encoding(config.time_steps, config.d_model)?;
        Ok(Self { config, mask, pe })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn mask(&self) -> &MembershipMask {
        &self.mask
    }

    pub fn latent_dim(&self) -> usize {
        self.mask.dims()
    }

    /// Fresh parameters: linear maps uniform in ±1/√fan_in, layer-norm gains
    /// one and offsets zero.
    pub fn init_params(&self, seed: u64) -> ParameterSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParameterSet::new();
        let c = &self.config;
        let (dm, ff, d) = (c.d_model, c.ff_width, self.latent_dim());
        let mut lin = |p: &mut ParameterSet, name: &str, fan_in: usize, fan_out: usize, bias: bool| {
            let a = 1.0 / (fan_in as f64).sqrt();
            let w = (0..fan_in * fan_out).map(|_| rng.random_range(-a..a)).collect();
            p.insert(format!("{name}.w"), Tensor::new(vec![fan_in, fan_out], w).unwrap()).unwrap();
            if bias {
                let b = (0..fan_out).map(|_| rng.random_range(-a..a)).collect();
                p.insert(format!("{name}.b"), Tensor::new(vec![fan_out], b).unwrap()).unwrap();
            }
        };
        let ln = |p: &mut ParameterSet, name: &str| {
            p.insert(format!("{name}.g"), Tensor::full(&[dm], 1.0)).unwrap();
            p.insert(format!("{name}.b"), Tensor::zeros(&[dm])).unwrap();
        };
        for (r, &n) in c.channels.iter().enumerate() {
            let e = format!("enc{r}");
            lin(&mut p, &format!("{e}.in"), n, dm, true);
            for l in 0..c.layers {
                let pre = format!("{e}.l{l}");
                ln(&mut p, &format!("{pre}.ln1"));
                attn_params(&mut lin, &mut p, &format!("{pre}.attn"), dm);
                ln(&mut p, &format!("{pre}.ln2"));
                lin(&mut p, &format!("{pre}.ff1"), dm, ff, true);
                lin(&mut p, &format!("{pre}.ff2"), ff, dm, true);
            }
            ln(&mut p, &format!("{e}.lnf"));
            lin(&mut p, &format!("{e}.out"), dm, d, true);
        }
        for (r, &n) in c.channels.iter().enumerate() {
            let e = format!("dec{r}");
            let qin = match c.decoder_queries {
                DecoderQueries::Positional => dm,
                DecoderQueries::Latent => d,
            };
            lin(&mut p, &format!("{e}.qry"), qin, dm, true);
            lin(&mut p, &format!("{e}.mem"), d, dm, true);
            for l in 0..c.layers {
                let pre = format!("{e}.l{l}");
                ln(&mut p, &format!("{pre}.ln1"));
                attn_params(&mut lin, &mut p, &format!("{pre}.self"), dm);
                ln(&mut p, &format!("{pre}.ln2"));
                attn_params(&mut lin, &mut p, &format!("{pre}.cross"), dm);
                ln(&mut p, &format!("{pre}.ln3"));
                lin(&mut p, &format!("{pre}.ff1"), dm, ff, true);
                lin(&mut p, &format!("{pre}.ff2"), ff, dm, true);
            }
            ln(&mut p, &format!("{e}.lnf"));
            lin(&mut p, &format!("{e}.out"), dm, n, true);
        }
        p
    }

    /// Checks that `params` has exactly the names and shapes this
    /// architecture creates.
    pub fn check_params(&self, params: &ParameterSet) -> Result<()> {
        let want = self.init_params(0);
        if want.len() != params.len() {
            return Err(CtaeError::Format(format!(
                "expected {} parameter arrays, found {}",
                want.len(),
                params.len()
            )));
        }
        for ((wn, wt), (gn, gt)) in want.iter().zip(params.iter()) {
            if wn != gn || wt.shape() != gt.shape() {
                return Err(CtaeError::Format(format!(
                    "parameter mismatch: expected {wn} {:?}, found {gn} {:?}",
                    wt.shape(),
                    gt.shape()
                )));
            }
        }
        Ok(())
    }

    fn pe_tiled(&self, g: &mut Graph, batch: usize) -> Var {
        let t = self.pe.data();
        let mut data = Vec::with_capacity(t.len() * batch);
        for _ in 0..batch {
            data.extend_from_slice(t);
        }
        g.input(Tensor::new(vec![batch * self.config.time_steps, self.config.d_model], data).unwrap())
    }

    /// Encoder for region `r`: `x` is `[B·T, N_r]`, result `[B·T, D]`.
    pub fn encode(
        &self,
        g: &mut Graph,
        p: &ParameterSet,
        r: usize,
        x: Var,
        batch: usize,
        mode: &mut Mode,
    ) -> Result<Var> {
        let c = &self.config;
        let want = [batch * c.time_steps, c.channels[r]];
        if g.shape(x) != want {
            return Err(CtaeError::Shape(format!(
                "region {r} encoder expects {want:?}, got {:?}",
                g.shape(x)
            )));
        }
        let e = format!("enc{r}");
        let h = linear(g, p, x, &format!("{e}.in"))?;
        let pe = self.pe_tiled(g, batch);
        let mut h = g.add(h, pe)?;
        h = self.dropout(g, h, mode)?;
        for l in 0..c.layers {
            let pre = format!("{e}.l{l}");
            let a = layer_norm(g, p, h, &format!("{pre}.ln1"))?;
            let o = self.attention(g, p, a, a, &format!("{pre}.attn"), batch)?;
            let o = self.dropout(g, o, mode)?;
            h = g.add(h, o)?;
            let f = self.feed_forward(g, p, h, &pre, "ln2", mode)?;
            h = g.add(h, f)?;
        }
        let h = layer_norm(g, p, h, &format!("{e}.lnf"))?;
        linear(g, p, h, &format!("{e}.out"))
    }

    /// Decoder for region `r` applied to `z ⊙ weights` (`z` is `[B·T, D]`).
    #[allow(clippy::too_many_arguments)]
    pub fn decode(
        &self,
        g: &mut Graph,
        p: &ParameterSet,
        r: usize,
        z: Var,
        weights: &[f64],
        batch: usize,
        mode: &mut Mode,
    ) -> Result<Var> {
        let c = &self.config;
        let zm = g.mul_cols(z, weights)?;
        let e = format!("dec{r}");
        let mem = linear(g, p, zm, &format!("{e}.mem"))?;
        let pe_b = self.pe_tiled(g, batch);
        let mem = g.add(mem, pe_b)?;
        let (mut s, mut tiled) = match c.decoder_queries {
            DecoderQueries::Positional => {
                let pe = g.input(self.pe.clone());
                (linear(g, p, pe, &format!("{e}.qry"))?, false)
            }
            DecoderQueries::Latent => {
                let q = linear(g, p, zm, &format!("{e}.qry"))?;
                (g.add(q, pe_b)?, true)
            }
        };
        for l in 0..c.layers {
            let pre = format!("{e}.l{l}");
            let a = layer_norm(g, p, s, &format!("{pre}.ln1"))?;
            let nb = if tiled { batch } else { 1 };
            let o = self.attention(g, p, a, a, &format!("{pre}.self"), nb)?;
            let o = self.dropout(g, o, mode)?;
            s = g.add(s, o)?;
            if !tiled {
                s = g.tile_rows(s, batch)?;
                tiled = true;
            }
            let a = layer_norm(g, p, s, &format!("{pre}.ln2"))?;
            let o = self.attention(g, p, a, mem, &format!("{pre}.cross"), batch)?;
            let o = self.dropout(g, o, mode)?;
            s = g.add(s, o)?;
            let f = self.feed_forward(g, p, s, &pre, "ln3", mode)?;
            s = g.add(s, f)?;
        }
        if !tiled {
            s = g.tile_rows(s, batch)?;
        }
        let s = layer_norm(g, p, s, &format!("{e}.lnf"))?;
        linear(g, p, s, &format!("{e}.out"))
    }

    /// Masked average over claiming regions.
    pub fn fuse(&self, g: &mut Graph, zs: &[Var], path: FusionPath) -> Result<Var> {
        fuse_on_graph(g, zs, &self.mask, path)
    }

    /// Input mask for shared-only decoding of region `r`.
    pub fn shared_only_weights(&self, r: usize, path: FusionPath) -> Result<Vec<f64>> {
        match path {
            FusionPath::General => Ok(self.mask.shared_weights(r)),
            FusionPath::TwoRegion => self.mask.intersection(),
        }
    }

    /// Encodes every region and fuses.
    pub fn encode_all(
        &self,
        g: &mut Graph,
        p: &ParameterSet,
        xs: &[Var],
        batch: usize,
        path: FusionPath,
        mode: &mut Mode,
    ) -> Result<Forward> {
        if xs.len() != self.config.regions() {
            return Err(CtaeError::Shape(format!(
                "expected {} regions, got {}",
                self.config.regions(),
                xs.len()
            )));
        }
        let mut per_region = Vec::with_capacity(xs.len());
        for (r, &x) in xs.iter().enumerate() {
            per_region.push(self.encode(g, p, r, x, batch, mode)?);
        }
        let fused = self.fuse(g, &per_region, path)?;
        Ok(Forward { per_region, fused })
    }

    /// Encodes one trial `[N_r × T]` into `[D × T]` (no dropout).
    pub fn encode_region(&self, p: &ParameterSet, r: usize, x: &Tensor) -> Result<Tensor> {
        let c = &self.config;
        if r >= c.regions() {
            return Err(CtaeError::Shape(format!("region {r} out of range")));
        }
        if x.shape() != [c.channels[r], c.time_steps] {
            return Err(CtaeError::Shape(format!(
                "region {r} expects [{} × {}] input, got {:?}",
                c.channels[r],
                c.time_steps,
                x.shape()
            )));
        }
        let mut g = Graph::new();
        let xi = g.input(x.transpose()?);
        let z = self.encode(&mut g, p, r, xi, 1, &mut Mode::Eval)?;
        Ok(g.value(z).transpose()?)
    }

    /// Decodes one trial's latent `[D × T]` for region `r` after masking
    /// with `weights` (use `mask().region_weights(r)` for the standard read-out).
    pub fn decode_region(&self, p: &ParameterSet, r: usize, z: &Tensor, weights: &[f64]) -> Result<Tensor> {
        let d = self.latent_dim();
        if z.shape() != [d, self.config.time_steps] {
            return Err(CtaeError::Shape(format!(
                "latent must be [{d} × {}], got {:?}",
                self.config.time_steps,
                z.shape()
            )));
        }
        let mut g = Graph::new();
        let zi = g.input(z.transpose()?);
        let y = self.decode(&mut g, p, r, zi, weights, 1, &mut Mode::Eval)?;
        Ok(g.value(y).transpose()?)
    }

    /// Per-region latents, fused latent and blocks for one trial.
    pub fn latent_bundle(&self, p: &ParameterSet, xs: &[Tensor]) -> Result<LatentBundle> {
        let per_region = xs
            .iter()
            .enumerate()
            .map(|(r, x)| self.encode_region(p, r, x))
            .collect::<Result<Vec<_>>>()?;
        let fused = fuse_latents(&per_region, &self.mask)?;
        let blocks = extract_blocks(&fused, &self.mask)?;
        Ok(LatentBundle {
            per_region,
            fused,
            blocks,
        })
    }

    fn attention(&self, g: &mut Graph, p: &ParameterSet, xq: Var, xkv: Var, pre: &str, batch: usize) -> Result<Var> {
        let q = linear(g, p, xq, &format!("{pre}.q"))?;
        let kw = g.param(p, &format!("{pre}.k.w"))?;
        let k = g.matmul(xkv, kw)?;
        let v = linear(g, p, xkv, &format!("{pre}.v"))?;
        let o = g.attention(q, k, v, batch, self.config.heads, true)?;
        linear(g, p, o, &format!("{pre}.o"))
    }

    fn feed_forward(&self, g: &mut Graph, p: &ParameterSet, h: Var, pre: &str, ln: &str, mode: &mut Mode) -> Result<Var> {
        let a = layer_norm(g, p, h, &format!("{pre}.{ln}"))?;
        let f = linear(g, p, a, &format!("{pre}.ff1"))?;
        let f = g.gelu(f)?;
        let f = linear(g, p, f, &format!("{pre}.ff2"))?;
        self.dropout(g, f, mode)
    }

    fn dropout(&self, g: &mut Graph, x: Var, mode: &mut Mode) -> Result<Var> {
        let rate = self.config.dropout;
        match mode {
            Mode::Train(rng) if rate > 0.0 => {
                let keep = 1.0 - rate;
                let shape = g.shape(x).to_vec();
                let n = shape.iter().product();
                let m = (0..n)
                    .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect();
                g.mul_const(x, Tensor::new(shape, m)?).map_err(Into::into)
            }
            _ => Ok(x),
        }
    }
}

fn attn_params(
    lin: &mut impl FnMut(&mut ParameterSet, &str, usize, usize, bool),
    p: &mut ParameterSet,
    pre: &str,
    dm: usize,
) {
    // keys carry no bias: it would shift every score in a row equally
    lin(p, &format!("{pre}.q"), dm, dm, true);
    lin(p, &format!("{pre}.k"), dm, dm, false);
    lin(p, &format!("{pre}.v"), dm, dm, true);
    lin(p, &format!("{pre}.o"), dm, dm, true);
}

fn linear(g: &mut Graph, p: &ParameterSet, x: Var, name: &str) -> Result<Var> {
    let w = g.param(p, &format!("{name}.w"))?;
    let b = g.param(p, &format!("{name}.b"))?;
    let y = g.matmul(x, w)?;
    Ok(g.add_bias(y, b)?)
}

fn layer_norm(g: &mut Graph, p: &ParameterSet, x: Var, name: &str) -> Result<Var> {
    let gain = g.param(p, &format!("{name}.g"))?;
    let bias = g.param(p, &format!("{name}.b"))?;
    Ok(g.layer_norm(x, gain, bias, ModelConfig::LN_EPS)?)
}

/// Masked average on the tape; inputs and output are `[rows, D]`.
pub fn fuse_on_graph(g: &mut Graph, zs: &[Var], mask: &MembershipMask, path: FusionPath) -> Result<Var> {
    if zs.len() != mask.regions() {
        return Err(CtaeError::Shape(format!(
            "fusion expects {} regions, got {}",
            mask.regions(),
            zs.len()
        )));
    }
    for &z in zs {
        if g.shape(z).len() != 2 || g.shape(z)[1] != mask.dims() || g.shape(z) != g.shape(zs[0]) {
            return Err(CtaeError::Shape(format!(
                "fusion inputs must share shape [rows × {}], got {:?}",
                mask.dims(),
                g.shape(z)
            )));
        }
    }
    match path {
        FusionPath::General => {
            let counts = mask.claim_counts();
            if counts.contains(&0.0) {
                return Err(CtaeError::Config("fusion over a dimension no region claims".into()));
            }
            let mut acc = g.mul_cols(zs[0], &mask.region_weights(0))?;
            for (r, &z) in zs.iter().enumerate().skip(1) {
                let t = g.mul_cols(z, &mask.region_weights(r))?;
                acc = g.add(acc, t)?;
            }
            Ok(g.div_cols(acc, &counts)?)
        }
        FusionPath::TwoRegion => {
            if mask.regions() != 2 {
                return Err(CtaeError::Config("two-region fusion needs exactly 2 regions".into()));
            }
            let (w1, w2) = (mask.region_weights(0), mask.region_weights(1));
            let den: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| a + b).collect();
            let a = g.mul_cols(zs[0], &w1)?;
            let b = g.mul_cols(zs[1], &w2)?;
            let num = g.add(a, b)?;
            Ok(g.div_cols(num, &den)?)
        }
    }
}

/// Fuses single-trial latents given as `[D × T]` arrays.
pub fn fuse_latents(zs: &[Tensor], mask: &MembershipMask) -> Result<Tensor> {
    let mut g = Graph::new();
    let vars = zs
        .iter()
        .map(|z| Ok(g.input(z.transpose()?)))
        .collect::<Result<Vec<_>>>()?;
    let f = fuse_on_graph(&mut g, &vars, mask, FusionPath::General)?;
    Ok(g.value(f).transpose()?)
}

/// Blocks of a `[D × T]` latent, one per subset code in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBlocks {
    pub blocks: Vec<(super::mask::SubsetCode, Tensor)>,
    shared_rows: Tensor,
    private_rows: Vec<Tensor>,
}

impl LatentBlocks {
    /// All dimensions claimed by two or more regions, `[d_s × T]`.
    pub fn shared(&self) -> &Tensor {
        &self.shared_rows
    }

    /// Dimensions claimed by region `r` alone, `[d_r × T]`.
    pub fn private(&self, r: usize) -> &Tensor {
        &self.private_rows[r]
    }
}

pub fn extract_blocks(z: &Tensor, mask: &MembershipMask) -> Result<LatentBlocks> {
    if z.shape().len() != 2 || z.shape()[0] != mask.dims() {
        return Err(CtaeError::Shape(format!(
            "latent must have {} rows, got {:?}",
            mask.dims(),
            z.shape()
        )));
    }
    let t = z.shape()[1];
    let rows = |idx: &[usize]| {
        let mut data = Vec::with_capacity(idx.len() * t);
        for &i in idx {
            data.extend_from_slice(&z.data()[i * t..(i + 1) * t]);
        }
        Tensor::new(vec![idx.len(), t], data).unwrap()
    };
    Ok(LatentBlocks {
        blocks: mask
            .blocks()
            .iter()
            .map(|b| (b.code.clone(), rows(&b.indices)))
            .collect(),
        shared_rows: rows(&mask.shared_dims()),
        private_rows: (0..mask.regions()).map(|r| rows(&mask.private_dims(r))).collect(),
    })
}

/// Single-trial latents in `[D × T]` orientation.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBundle {
    pub per_region: Vec<Tensor>,
    pub fused: Tensor,
    pub blocks: LatentBlocks,
}
