//! Command bodies. Each one reads its inputs, writes files into a run
//! directory and reports what it wrote.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ctae::datasets::{generate_synthetic, plain_folds, stratified_folds, Dataset, GroundTruth};
use ctae::evalkit::{
    alignment_diagnostics, fit_linear_decoder, fit_logistic_decoder, gram_diagnostics, subspace_recovery,
    time_resolved_decoding, variance_per_latent, FeatureView, Subspace,
};
use ctae::seqmodel::MembershipMask;
use ctae::trainer::{
    grid_search, load_checkpoint, save_checkpoint, train, write_log, CheckpointRecord, GridOptions, LatentSet,
    TrainConfig,
};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::kv::KvReader;
use crate::settings::{
    cv_from_kv, cv_to_kv, grid_from_kv, grid_to_kv, resolve_train, synth_from_kv, synth_to_kv, train_from_kv,
    train_to_kv, CvSettings,
};

/// A fully resolved command: the config text has every default spelled
/// out and all command-line overrides folded in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Invocation {
    Synth {
        config: String,
    },
    Train {
        config: String,
        data: PathBuf,
        regions: Option<Vec<usize>>,
    },
    Grid {
        config: String,
        data: PathBuf,
        regions: Option<Vec<usize>>,
        jobs: usize,
        cache: Option<PathBuf>,
    },
    Eval {
        config: String,
        checkpoint: PathBuf,
        data: PathBuf,
        regions: Option<Vec<usize>>,
        truth: Option<PathBuf>,
        subspace: String,
        time_resolved: Option<usize>,
    },
    Ablate {
        config: String,
        data: PathBuf,
        regions: Option<Vec<usize>>,
    },
}

/// What a command produced, relative to its run directory.
#[derive(Debug, Default)]
pub struct Produced {
    pub outputs: Vec<PathBuf>,
    pub seed: u64,
    pub details: BTreeMap<String, serde_json::Value>,
}

impl Invocation {
    pub fn name(&self) -> &'static str {
        match self {
            Invocation::Synth { .. } => "synth",
            Invocation::Train { .. } => "train",
            Invocation::Grid { .. } => "grid",
            Invocation::Eval { .. } => "eval",
            Invocation::Ablate { .. } => "ablate",
        }
    }

    pub fn config(&self) -> &str {
        match self {
            Invocation::Synth { config }
            | Invocation::Train { config, .. }
            | Invocation::Grid { config, .. }
            | Invocation::Eval { config, .. }
            | Invocation::Ablate { config, .. } => config,
        }
    }

    /// Files read by the command.
    pub fn inputs(&self) -> Vec<PathBuf> {
        match self {
            Invocation::Synth { .. } => vec![],
            Invocation::Train { data, .. } | Invocation::Grid { data, .. } | Invocation::Ablate { data, .. } => {
                vec![data.clone()]
            }
            Invocation::Eval {
                checkpoint, data, truth, ..
            } => {
                let mut v = vec![checkpoint.clone(), data.clone()];
                v.extend(truth.clone());
                v
            }
        }
    }

    pub fn run(&self, out: &Path) -> Result<Produced> {
        match self {
            Invocation::Synth { config } => synth(config, out),
            Invocation::Train { config, data, regions } => train_cmd(config, data, regions.as_deref(), out),
            Invocation::Grid {
                config,
                data,
                regions,
                jobs,
                cache,
            } => grid(config, data, regions.as_deref(), *jobs, cache.as_deref(), out),
            Invocation::Eval {
                config,
                checkpoint,
                data,
                regions,
                truth,
                subspace,
                time_resolved,
            } => eval(
                config,
                checkpoint,
                data,
                regions.as_deref(),
                truth.as_deref(),
                subspace,
                *time_resolved,
                out,
            ),
            Invocation::Ablate { config, data, regions } => ablate(config, data, regions.as_deref(), out),
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Keeps the listed regions, in the given order, renumbered from 0.
pub fn load_data(path: &Path, regions: Option<&[usize]>) -> Result<Dataset> {
    let data = Dataset::load(path).with_context(|| format!("loading data {}", path.display()))?;
    let Some(keep) = regions else {
        return Ok(data);
    };
    if keep.is_empty() {
        bail!("--regions selects no region");
    }
    let mut picked = Vec::with_capacity(keep.len());
    for (i, &r) in keep.iter().enumerate() {
        if keep[..i].contains(&r) {
            bail!("region {r} selected twice");
        }
        let mut rec = data
            .regions
            .get(r)
            .with_context(|| format!("data has {} regions, asked for region {r}", data.regions.len()))?
            .clone();
        rec.region = i;
        picked.push(rec);
    }
    Ok(Dataset::new(picked, data.labels, data.targets)?)
}

pub fn resolve_synth(text: &str, source: &str, seed: Option<u64>) -> Result<String> {
    let mut kv = KvReader::parse(text, source)?;
    let mut spec = synth_from_kv(&mut kv)?;
    kv.finish()?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec.validate()?;
    Ok(synth_to_kv(&spec))
}

fn synth(config: &str, out: &Path) -> Result<Produced> {
    let mut kv = KvReader::parse(config, "resolved config")?;
    let spec = synth_from_kv(&mut kv)?;
    kv.finish()?;
    let (data, truth) = generate_synthetic(&spec)?;
    data.save(&out.join("data.ctae"))?;
    truth.save(&out.join("truth.ctae"))?;
    let mut p = Produced {
        outputs: vec!["data.ctae".into(), "truth.ctae".into()],
        seed: spec.seed,
        ..Default::default()
    };
    p.details.insert("regions".into(), json!(data.regions.len()));
    p.details.insert(
        "blocks".into(),
        json!(truth.mask.blocks().iter().map(|b| b.code.to_string()).collect::<Vec<_>>()),
    );
    Ok(p)
}

pub fn resolve_train_text(text: &str, source: &str, seed: Option<u64>, epochs: Option<usize>) -> Result<String> {
    let mut kv = KvReader::parse(text, source)?;
    let mut c = train_from_kv(&mut kv)?;
    kv.finish()?;
    if let Some(s) = seed {
        c.seed = s;
    }
    if let Some(e) = epochs {
        c.epochs = e;
    }
    Ok(train_to_kv(&c))
}

fn parse_train(config: &str, data: &Dataset) -> Result<TrainConfig> {
    let mut kv = KvReader::parse(config, "resolved config")?;
    let c = train_from_kv(&mut kv)?;
    kv.finish()?;
    resolve_train(c, data)
}

fn train_cmd(config: &str, data_path: &Path, regions: Option<&[usize]>, out: &Path) -> Result<Produced> {
    let data = load_data(data_path, regions)?;
    let c = parse_train(config, &data)?;
    let seed = c.seed;
    let run = train(c, &data)?;
    save_checkpoint(&run.best, &out.join("best.ckpt"))?;
    save_checkpoint(&run.last, &out.join("last.ckpt"))?;
    write_log(&run.log, &out.join("log.csv"))?;
    let mut p = Produced {
        outputs: vec!["best.ckpt".into(), "last.ckpt".into(), "log.csv".into()],
        seed,
        ..Default::default()
    };
    p.details.insert("best_epoch".into(), json!(run.best.best_epoch));
    p.details.insert("best_val_total".into(), json!(run.best.best_val_total));
    Ok(p)
}

pub fn resolve_grid_text(text: &str, source: &str, seed: Option<u64>) -> Result<String> {
    let mut kv = KvReader::parse(text, source)?;
    let mut base = train_from_kv(&mut kv)?;
    let g = grid_from_kv(&mut kv, &base)?;
    kv.finish()?;
    if let Some(s) = seed {
        base.seed = s;
    }
    Ok(format!("{}{}", train_to_kv(&base), grid_to_kv(&g)))
}

fn grid(
    config: &str,
    data_path: &Path,
    regions: Option<&[usize]>,
    jobs: usize,
    cache: Option<&Path>,
    out: &Path,
) -> Result<Produced> {
    let data = load_data(data_path, regions)?;
    let mut kv = KvReader::parse(config, "resolved config")?;
    let base = train_from_kv(&mut kv)?;
    let spec = grid_from_kv(&mut kv, &base)?;
    kv.finish()?;
    let base = resolve_train(base, &data)?;
    let opts = GridOptions {
        jobs,
        cache_dir: cache.map(Path::to_path_buf),
    };
    let outcome = grid_search(&base, &spec, &data, &opts)?;
    let mut results = outcome.results.clone();
    // cache locations depend on the machine, not on the search
    for r in &mut results {
        r.checkpoint_path = None;
    }
    write_json(&out.join("grid.json"), &results)?;
    let mut p = Produced {
        outputs: vec!["grid.json".into()],
        seed: base.seed,
        ..Default::default()
    };
    if let Some(best) = &outcome.best {
        save_checkpoint(best, &out.join("best.ckpt"))?;
        p.outputs.push("best.ckpt".into());
    }
    p.details.insert("cells".into(), json!(results.len()));
    p.details.insert("winner".into(), json!(results.first().map(|r| r.config_hash.clone())));
    Ok(p)
}

/// `shared`, `all`, `private-<r>` (1-based region) or `code-<bits>`.
pub fn parse_subspace(s: &str) -> Result<Subspace> {
    match s {
        "shared" => Ok(Subspace::Shared),
        "all" => Ok(Subspace::All),
        _ => {
            if let Some(r) = s.strip_prefix("private-") {
                let r: usize = r.parse().with_context(|| format!("bad region in `{s}`"))?;
                if r == 0 {
                    bail!("regions are numbered from 1 in `private-<r>`");
                }
                Ok(Subspace::Private(r - 1))
            } else if let Some(c) = s.strip_prefix("code-") {
                Ok(Subspace::Code(c.parse()?))
            } else {
                bail!("unknown subspace `{s}` (shared, all, private-<r>, code-<bits>)")
            }
        }
    }
}

pub fn resolve_cv_text(text: &str, source: &str) -> Result<String> {
    let mut kv = KvReader::parse(text, source)?;
    let s = cv_from_kv(&mut kv)?;
    kv.finish()?;
    Ok(cv_to_kv(&s))
}

fn parse_cv(config: &str) -> Result<CvSettings> {
    let mut kv = KvReader::parse(config, "resolved config")?;
    let s = cv_from_kv(&mut kv)?;
    kv.finish()?;
    Ok(s)
}

fn latents_of(ckpt: &CheckpointRecord, data: &Dataset) -> Result<(LatentSet, MembershipMask)> {
    let set = ckpt.latents(data)?;
    let mask = ckpt.config.model.mask()?;
    Ok((set, mask))
}

#[allow(clippy::too_many_arguments)]
fn eval(
    config: &str,
    ckpt_path: &Path,
    data_path: &Path,
    regions: Option<&[usize]>,
    truth: Option<&Path>,
    subspace: &str,
    time_resolved: Option<usize>,
    out: &Path,
) -> Result<Produced> {
    let cv = parse_cv(config)?;
    let sub = parse_subspace(subspace)?;
    let data = load_data(data_path, regions)?;
    let ckpt = load_checkpoint(ckpt_path).with_context(|| format!("loading {}", ckpt_path.display()))?;
    let (set, mask) = latents_of(&ckpt, &data)?;
    let view = FeatureView::fused(&set, &mask, sub.clone())?;
    let dims = sub.dims(&mask)?;
    let mut p = Produced {
        seed: cv.fold_seed,
        ..Default::default()
    };
    p.details.insert("subspace".into(), json!(sub.label()));
    p.details.insert("feature_dims".into(), json!(dims));

    if let Some(labels) = &data.labels {
        let folds = stratified_folds(labels, cv.folds, cv.fold_seed)?;
        let report = fit_logistic_decoder(&view, labels, &folds)?;
        write_json(&out.join("decode.json"), &report)?;
        write_json(&out.join("confusion.json"), &report.confusion)?;
        p.outputs.extend(["decode.json".into(), "confusion.json".into()]);
        p.details.insert("accuracy".into(), json!(report.mean));
        if let Some(w) = time_resolved {
            let curve = time_resolved_decoding(&view, labels, w, &folds)?;
            write_text(&out.join("timecourse.csv"), &curve.to_csv())?;
            p.outputs.push("timecourse.csv".into());
        }
    } else if time_resolved.is_some() {
        bail!("time-resolved decoding needs trial labels and the data has none");
    }
    if let Some(t) = &data.targets {
        let folds = plain_folds(data.trials(), cv.folds, cv.fold_seed)?;
        let report = fit_linear_decoder(&view, &t.values, t.dims, &folds)?;
        write_json(&out.join("regression.json"), &report)?;
        p.outputs.push("regression.json".into());
    }

    let gram = gram_diagnostics(&set.fused, &set, &mask)?;
    let variance = variance_per_latent(&set.fused, set.trials, set.dims, set.time_steps)?;
    let align = alignment_diagnostics(&set, &mask)?;
    write_json(
        &out.join("diagnostics.json"),
        &json!({ "gram": gram, "variance": variance, "alignment": {
            "dims": align.dims, "deviation": align.deviation, "per_region": align.per_region } }),
    )?;
    write_text(&out.join("alignment_traces.csv"), &align.traces_csv())?;
    p.outputs.extend(["diagnostics.json".into(), "alignment_traces.csv".into()]);

    if let Some(tp) = truth {
        let gt = GroundTruth::load(tp).with_context(|| format!("loading {}", tp.display()))?;
        let rec = subspace_recovery(&set, &mask, &gt, cv.fold_seed)?;
        write_json(&out.join("recovery.json"), &rec)?;
        p.outputs.push("recovery.json".into());
    }
    Ok(p)
}

/// The four loss variants, each zeroing one weight of the base config.
pub const VARIANTS: [&str; 4] = ["full", "no_shared_only", "no_alignment", "no_orthogonality"];

pub fn variant_config(base: &TrainConfig, name: &str) -> Result<TrainConfig> {
    let mut c = base.clone();
    match name {
        "full" => {}
        "no_shared_only" => c.weights.shared = 0.0,
        "no_alignment" => c.weights.align = 0.0,
        "no_orthogonality" => c.weights.orth = 0.0,
        _ => bail!("unknown variant `{name}`"),
    }
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    /// Column label → (mean, sd) of fold accuracies.
    pub scores: Vec<(String, f64, f64)>,
    pub gram_off_diagonal: f64,
    pub best_epoch: usize,
}

pub fn ablation_table_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("variant");
    if let Some(r) = rows.first() {
        for (label, _, _) in &r.scores {
            out.push_str(&format!(",{label}_mean,{label}_sd"));
        }
    }
    out.push_str(",gram_off_diagonal\n");
    for r in rows {
        out.push_str(&r.variant);
        for (_, m, s) in &r.scores {
            out.push_str(&format!(",{m},{s}"));
        }
        out.push_str(&format!(",{}\n", r.gram_off_diagonal));
    }
    out
}

pub fn resolve_ablate_text(text: &str, source: &str, seed: Option<u64>, epochs: Option<usize>) -> Result<String> {
    let mut kv = KvReader::parse(text, source)?;
    let mut c = train_from_kv(&mut kv)?;
    let cv = cv_from_kv(&mut kv)?;
    kv.finish()?;
    if let Some(s) = seed {
        c.seed = s;
    }
    if let Some(e) = epochs {
        c.epochs = e;
    }
    Ok(format!("{}{}", train_to_kv(&c), cv_to_kv(&cv)))
}

/// Trains every variant and decodes labels from the shared and each
/// private subspace.
pub fn run_ablation(base: &TrainConfig, data: &Dataset, cv: &CvSettings) -> Result<Vec<(AblationRow, CheckpointRecord)>> {
    let labels = data.labels.as_ref().context("ablation decoding needs trial labels")?;
    let folds = stratified_folds(labels, cv.folds, cv.fold_seed)?;
    let mut subspaces = vec![Subspace::Shared];
    subspaces.extend((0..data.regions.len()).map(Subspace::Private));
    let mut rows = Vec::with_capacity(VARIANTS.len());
    for name in VARIANTS {
        let run = train(variant_config(base, name)?, data)?;
        let (set, mask) = latents_of(&run.best, data)?;
        let mut scores = Vec::new();
        for s in &subspaces {
            let label = match s {
                Subspace::Private(r) => format!("private-{}", r + 1),
                other => other.label(),
            };
            let r = fit_logistic_decoder(&FeatureView::fused(&set, &mask, s.clone())?, labels, &folds)?;
            scores.push((label, r.mean, r.sd));
        }
        let gram = gram_diagnostics(&set.fused, &set, &mask)?;
        rows.push((
            AblationRow {
                variant: name.to_string(),
                scores,
                gram_off_diagonal: gram.mean_off_diagonal,
                best_epoch: run.best.best_epoch,
            },
            run.best,
        ));
    }
    Ok(rows)
}

fn ablate(config: &str, data_path: &Path, regions: Option<&[usize]>, out: &Path) -> Result<Produced> {
    let data = load_data(data_path, regions)?;
    let mut kv = KvReader::parse(config, "resolved config")?;
    let base = train_from_kv(&mut kv)?;
    let cv = cv_from_kv(&mut kv)?;
    kv.finish()?;
    let base = resolve_train(base, &data)?;
    let rows = run_ablation(&base, &data, &cv)?;
    let mut p = Produced {
        seed: base.seed,
        ..Default::default()
    };
    for (row, ckpt) in &rows {
        let name = format!("{}.ckpt", row.variant);
        save_checkpoint(ckpt, &out.join(&name))?;
        p.outputs.push(name.into());
    }
    let table: Vec<AblationRow> = rows.into_iter().map(|(r, _)| r).collect();
    write_text(&out.join("ablation.csv"), &ablation_table_csv(&table))?;
    write_json(&out.join("ablation.json"), &table)?;
    p.outputs.extend(["ablation.csv".into(), "ablation.json".into()]);
    for r in &table {
        let cells: Vec<String> = r.scores.iter().map(|(l, m, s)| format!("{l} {m:.3}±{s:.3}")).collect();
        println!("{:<18} {}", r.variant, cells.join("  "));
    }
    Ok(p)
}
