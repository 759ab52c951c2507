//! Typed views of the key-value configs used by each command, with a
//! canonical rendering that parses back to the same values.

use std::collections::BTreeMap;

use anyhow::{bail, Result};
use ctae::datasets::{Dataset, Mixing, SyntheticSpec};
use ctae::objectives::LossWeights;
use ctae::seqmodel::{DecoderQueries, FusionPath, ModelConfig, SubsetCode};
use ctae::trainer::{GridSpec, TrainConfig};

use crate::kv::{join, parse_list, KvReader, KvWriter};

pub fn parse_latent(v: &str) -> Result<BTreeMap<SubsetCode, usize>> {
    let mut out = BTreeMap::new();
    for item in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let Some((code, n)) = item.split_once(':') else {
            bail!("latent entry `{item}` should look like `code:size`");
        };
        let code: SubsetCode = code.trim().parse()?;
        if out.insert(code.clone(), n.trim().parse()?).is_some() {
            bail!("latent code {code} listed twice");
        }
    }
    if out.is_empty() {
        bail!("empty latent layout");
    }
    Ok(out)
}

pub fn render_latent(latent: &BTreeMap<SubsetCode, usize>) -> String {
    let mut codes: Vec<&SubsetCode> = latent.keys().collect();
    codes.sort_by(|a, b| a.canonical_cmp(b));
    codes.iter().map(|c| format!("{c}:{}", latent[*c])).collect::<Vec<_>>().join(",")
}

fn mixing_name(m: Mixing) -> &'static str {
    match m {
        Mixing::Linear => "linear",
        Mixing::TanhMlp => "tanh_mlp",
    }
}

fn parse_mixing(v: &str) -> Result<Mixing> {
    match v {
        "linear" => Ok(Mixing::Linear),
        "tanh_mlp" | "tanh" => Ok(Mixing::TanhMlp),
        _ => bail!("unknown mixing `{v}` (linear, tanh_mlp)"),
    }
}

fn fusion_name(p: FusionPath) -> &'static str {
    match p {
        FusionPath::General => "general",
        FusionPath::TwoRegion => "two_region",
    }
}

fn parse_fusion(v: &str) -> Result<FusionPath> {
    match v {
        "general" => Ok(FusionPath::General),
        "two_region" => Ok(FusionPath::TwoRegion),
        _ => bail!("unknown fusion path `{v}` (general, two_region)"),
    }
}

fn queries_name(q: DecoderQueries) -> &'static str {
    match q {
        DecoderQueries::Positional => "positional",
        DecoderQueries::Latent => "latent",
    }
}

fn parse_queries(v: &str) -> Result<DecoderQueries> {
    match v {
        "positional" => Ok(DecoderQueries::Positional),
        "latent" => Ok(DecoderQueries::Latent),
        _ => bail!("unknown decoder queries `{v}` (positional, latent)"),
    }
}

pub fn synth_from_kv(kv: &mut KvReader) -> Result<SyntheticSpec> {
    let mut s = SyntheticSpec::two_region(3, 3, 3, 40, 0);
    if let Some((_, v)) = kv.take_raw("latent") {
        s.latent = parse_latent(&v)?;
    }
    s.trials = kv.take_or("trials", s.trials)?;
    s.time_steps = kv.take_or("time_steps", s.time_steps)?;
    if let Some(c) = kv.take_list("channels")? {
        s.channels = c;
    }
    s.smoothness = kv.take_or("smoothness", s.smoothness)?;
    if let Some((_, v)) = kv.take_raw("mixing") {
        s.mixing = parse_mixing(&v)?;
    }
    s.noise_std = kv.take_or("noise_std", s.noise_std)?;
    s.conditions = kv.take_or("conditions", s.conditions)?;
    s.condition_strength = kv.take_or("condition_strength", s.condition_strength)?;
    s.bin_width_ms = kv.take_or("bin_width_ms", s.bin_width_ms)?;
    s.seed = kv.take_or("seed", s.seed)?;
    Ok(s)
}

pub fn synth_to_kv(s: &SyntheticSpec) -> String {
    let mut w = KvWriter::default();
    w.put("latent", render_latent(&s.latent))
        .put("trials", s.trials)
        .put("time_steps", s.time_steps)
        .put("channels", join(&s.channels))
        .put("smoothness", s.smoothness)
        .put("mixing", mixing_name(s.mixing))
        .put("noise_std", s.noise_std)
        .put("conditions", s.conditions)
        .put("condition_strength", s.condition_strength)
        .put("bin_width_ms", s.bin_width_ms)
        .put("seed", s.seed);
    w.finish()
}

/// Training settings with the data-dependent sizes left blank until
/// [`resolve_train`] sees the dataset.
pub fn train_from_kv(kv: &mut KvReader) -> Result<TrainConfig> {
    let mut m = ModelConfig::two_region([1, 1], 1, 1, 1, 1);
    m.channels.clear();
    m.time_steps = 0;
    m.layers = kv.take_or("layers", m.layers)?;
    m.d_model = kv.take_or("d_model", m.d_model)?;
    m.heads = kv.take_or("heads", m.heads)?;
    m.ff_width = kv.take_or("ff_width", m.ff_width)?;
    match kv.take_raw("latent") {
        Some((_, v)) => m.latent = parse_latent(&v)?,
        None => bail!("`latent` is required (e.g. `latent = 11:5,10:5,01:5`)"),
    }
    m.dropout = kv.take_or("dropout", m.dropout)?;
    m.standardize = kv.take_or("standardize", m.standardize)?;
    if let Some((_, v)) = kv.take_raw("decoder_queries") {
        m.decoder_queries = parse_queries(&v)?;
    }
    let weights = LossWeights {
        shared: kv.take_or("lambda_shared", 1.0)?,
        align: kv.take_or("lambda_align", 0.5)?,
        orth: kv.take_or("lambda_orth", 0.01)?,
        warmup: kv.take_or("warmup", 100)?,
    };
    let mut c = TrainConfig::new(m, weights, kv.take_or("learning_rate", 1e-4)?);
    c.epochs = kv.take_or("epochs", c.epochs)?;
    c.batch_size = kv.take_optional("batch_size", c.batch_size)?;
    c.seed = kv.take_or("seed", c.seed)?;
    if let Some(v) = kv.take_list::<f64>("split")? {
        let [a, b] = v[..] else {
            bail!("`split` takes two fractions (train, validation)");
        };
        c.split = [a, b];
    }
    c.report_interval = kv.take_or("report_interval", c.report_interval)?;
    c.clip_norm = kv.take_optional("clip_norm", c.clip_norm)?;
    if let Some((_, v)) = kv.take_raw("fusion_path") {
        c.fusion_path = parse_fusion(&v)?;
    }
    c.checked = kv.take_or("checked", c.checked)?;
    Ok(c)
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "none".to_string(), |x| x.to_string())
}

pub fn train_to_kv(c: &TrainConfig) -> String {
    let m = &c.model;
    let mut w = KvWriter::default();
    w.put("layers", m.layers)
        .put("d_model", m.d_model)
        .put("heads", m.heads)
        .put("ff_width", m.ff_width)
        .put("latent", render_latent(&m.latent))
        .put("dropout", m.dropout)
        .put("standardize", m.standardize)
        .put("decoder_queries", queries_name(m.decoder_queries))
        .put("lambda_shared", c.weights.shared)
        .put("lambda_align", c.weights.align)
        .put("lambda_orth", c.weights.orth)
        .put("warmup", c.weights.warmup)
        .put("learning_rate", c.learning_rate)
        .put("epochs", c.epochs)
        .put("batch_size", opt(c.batch_size))
        .put("seed", c.seed)
        .put("split", join(&c.split))
        .put("report_interval", c.report_interval)
        .put("clip_norm", opt(c.clip_norm))
        .put("fusion_path", fusion_name(c.fusion_path))
        .put("checked", c.checked);
    w.finish()
}

/// Fills in channel counts and trial length from the data and validates.
pub fn resolve_train(mut c: TrainConfig, data: &Dataset) -> Result<TrainConfig> {
    c.model.channels = data.channels();
    c.model.time_steps = data.time_steps();
    c.validate()?;
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvSettings {
    pub folds: usize,
    pub fold_seed: u64,
}

impl Default for CvSettings {
    fn default() -> Self {
        Self { folds: 5, fold_seed: 0 }
    }
}

pub fn cv_from_kv(kv: &mut KvReader) -> Result<CvSettings> {
    let d = CvSettings::default();
    let s = CvSettings {
        folds: kv.take_or("folds", d.folds)?,
        fold_seed: kv.take_or("fold_seed", d.fold_seed)?,
    };
    if s.folds < 2 {
        bail!("`folds` must be at least 2");
    }
    Ok(s)
}

pub fn cv_to_kv(s: &CvSettings) -> String {
    let mut w = KvWriter::default();
    w.put("folds", s.folds).put("fold_seed", s.fold_seed);
    w.finish()
}

pub fn grid_from_kv(kv: &mut KvReader, base: &TrainConfig) -> Result<GridSpec> {
    let mut g = GridSpec::single(base);
    macro_rules! list {
        ($key:literal, $field:ident) => {
            if let Some((_, v)) = kv.take_raw($key) {
                g.$field = parse_list(&v)?;
            }
        };
    }
    list!("grid.layers", layers);
    list!("grid.latent_dims", latent_dims);
    list!("grid.lambda_shared", shared);
    list!("grid.lambda_align", align);
    list!("grid.lambda_orth", orth);
    list!("grid.learning_rate", learning_rates);
    list!("grid.warmup", warmups);
    g.epoch_cap = kv.take_optional("grid.epoch_cap", None)?;
    if g.is_empty() {
        bail!("grid has an empty value list");
    }
    Ok(g)
}

pub fn grid_to_kv(g: &GridSpec) -> String {
    let mut w = KvWriter::default();
    w.put("grid.layers", join(&g.layers))
        .put("grid.latent_dims", join(&g.latent_dims))
        .put("grid.lambda_shared", join(&g.shared))
        .put("grid.lambda_align", join(&g.align))
        .put("grid.lambda_orth", join(&g.orth))
        .put("grid.learning_rate", join(&g.learning_rates))
        .put("grid.warmup", join(&g.warmups))
        .put("grid.epoch_cap", opt(g.epoch_cap));
    w.finish()
}
