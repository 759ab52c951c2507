//! Command-line wiring: data synthesis, training, grid search, evaluation
//! and ablations, each run recorded in a replayable manifest.

pub mod commands;
pub mod kv;
pub mod manifest;
pub mod settings;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use commands::{
    parse_subspace, resolve_ablate_text, resolve_cv_text, resolve_grid_text, resolve_synth, resolve_train_text,
    Invocation,
};
use manifest::{fresh_run_dir, sha256_hex, ExitStatus, FileDigest, RunManifest, MANIFEST_FORMAT, MANIFEST_MAJOR};

/// Environment variable naming the directory that holds per-run folders.
pub const OUT_ROOT_ENV: &str = "CTAE_OUT_ROOT";
pub const DEFAULT_OUT_ROOT: &str = "runs";

#[derive(Debug, Parser)]
#[command(name = "ctae", version, about = "Shared/private latent models of multi-region recordings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct OutArgs {
    /// Run directory (default: a fresh folder under $CTAE_OUT_ROOT or ./runs).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a planted-latent dataset and its ground truth.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Train one model.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs_override: Option<usize>,
        /// Comma-separated region indices to keep (0-based).
        #[arg(long, value_delimiter = ',')]
        regions: Option<Vec<usize>>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Train every cell of a hyperparameter grid and rank them.
    Grid {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Directory of finished cells, reused by later searches.
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        regions: Option<Vec<usize>>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Decode labels and targets from a trained model's latents.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Cross-validation settings (`folds`, `fold_seed`).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Planted latents, for recovery scores on synthetic data.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// shared, all, private-<r> (1-based) or code-<bits>.
        #[arg(long, default_value = "shared")]
        subspace: String,
        /// Sliding-window width for an accuracy-vs-time curve.
        #[arg(long)]
        time_resolved: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        regions: Option<Vec<usize>>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Train the four loss variants and compare subspace decoding.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs_override: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        regions: Option<Vec<usize>>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Re-run a recorded command and check its outputs match.
    Replay {
        manifest: PathBuf,
        #[command(flatten)]
        out: OutArgs,
    },
}

fn read_config(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).with_context(|| format!("resolving {}", p.display()))
}

fn absolute_opt(p: Option<PathBuf>) -> Result<Option<PathBuf>> {
    p.map(|p| absolute(&p)).transpose()
}

/// Turns parsed arguments into a resolved invocation plus the config path
/// and output request.
pub fn resolve(command: Command) -> Result<(Invocation, Option<PathBuf>, Option<PathBuf>)> {
    Ok(match command {
        Command::Synth { config, seed, out } => {
            let (text, src) = match &config {
                Some(p) => (read_config(p)?, p.display().to_string()),
                None => (String::new(), "defaults".to_string()),
            };
            (Invocation::Synth { config: resolve_synth(&text, &src, seed)? }, absolute_opt(config)?, out.out)
        }
        Command::Train {
            config,
            data,
            seed,
            epochs_override,
            regions,
            out,
        } => {
            let text = resolve_train_text(&read_config(&config)?, &config.display().to_string(), seed, epochs_override)?;
            (
                Invocation::Train {
                    config: text,
                    data: absolute(&data)?,
                    regions,
                },
                Some(absolute(&config)?),
                out.out,
            )
        }
        Command::Grid {
            config,
            data,
            seed,
            jobs,
            cache,
            regions,
            out,
        } => {
            if jobs == 0 {
                bail!("--jobs must be at least 1");
            }
            let text = resolve_grid_text(&read_config(&config)?, &config.display().to_string(), seed)?;
            (
                Invocation::Grid {
                    config: text,
                    data: absolute(&data)?,
                    regions,
                    jobs,
                    cache: absolute_opt(cache)?,
                },
                Some(absolute(&config)?),
                out.out,
            )
        }
        Command::Eval {
            checkpoint,
            data,
            config,
            truth,
            subspace,
            time_resolved,
            regions,
            out,
        } => {
            parse_subspace(&subspace)?;
            let (text, src) = match &config {
                Some(p) => (read_config(p)?, p.display().to_string()),
                None => (String::new(), "defaults".to_string()),
            };
            (
                Invocation::Eval {
                    config: resolve_cv_text(&text, &src)?,
                    checkpoint: absolute(&checkpoint)?,
                    data: absolute(&data)?,
                    regions,
                    truth: absolute_opt(truth)?,
                    subspace,
                    time_resolved,
                },
                absolute_opt(config)?,
                out.out,
            )
        }
        Command::Ablate {
            config,
            data,
            seed,
            epochs_override,
            regions,
            out,
        } => {
            let text = resolve_ablate_text(&read_config(&config)?, &config.display().to_string(), seed, epochs_override)?;
            (
                Invocation::Ablate {
                    config: text,
                    data: absolute(&data)?,
                    regions,
                },
                Some(absolute(&config)?),
                out.out,
            )
        }
        Command::Replay { .. } => bail!("replay is not a plain command"),
    })
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn run_dir_for(inv: &Invocation, out: Option<PathBuf>) -> Result<PathBuf> {
    match out {
        Some(dir) => {
            std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            absolute(&dir)
        }
        None => {
            let root = std::env::var_os(OUT_ROOT_ENV).map_or_else(|| PathBuf::from(DEFAULT_OUT_ROOT), PathBuf::from);
            let hash = sha256_hex(serde_json::to_string(inv)?.as_bytes());
            let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ").to_string();
            absolute(&fresh_run_dir(&root, &stamp, &hash[..12])?)
        }
    }
}

/// Runs `inv` in a run directory and writes its manifest, also when the
/// command fails. The returned manifest's exit status tells which.
pub fn execute(
    inv: Invocation,
    config_path: Option<PathBuf>,
    out: Option<PathBuf>,
    replay_of: Option<PathBuf>,
) -> Result<RunManifest> {
    let started = now();
    let run_dir = run_dir_for(&inv, out)?;
    let inputs: Vec<FileDigest> = inv
        .inputs()
        .into_iter()
        .map(|p| FileDigest::of(&p, p.clone()))
        .collect::<Result<_>>()?;
    let result = inv.run(&run_dir);
    let mut m = RunManifest {
        format: MANIFEST_FORMAT.into(),
        major: MANIFEST_MAJOR,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        command: inv.name().into(),
        config_path,
        invocation: inv,
        seed: 0,
        inputs,
        outputs: Vec::new(),
        run_dir: run_dir.clone(),
        started,
        finished: String::new(),
        exit: ExitStatus { code: 0, error: None },
        replay_of,
        details: Default::default(),
    };
    match result {
        Ok(p) => {
            m.seed = p.seed;
            m.details = p.details;
            for rel in p.outputs {
                m.outputs.push(FileDigest::of(&run_dir.join(&rel), rel)?);
            }
        }
        Err(e) => {
            m.exit = ExitStatus {
                code: 1,
                error: Some(format!("{e:#}")),
            };
        }
    }
    m.finished = now();
    m.save(&run_dir)?;
    Ok(m)
}

/// Re-executes a manifest and fails unless every recorded output comes out
/// byte-identical.
pub fn replay(manifest: &Path, out: Option<PathBuf>) -> Result<RunManifest> {
    let old = RunManifest::load(manifest)?;
    if old.exit.code != 0 {
        bail!("{} records a failed run; nothing to reproduce", manifest.display());
    }
    for input in &old.inputs {
        let now = FileDigest::of(&input.path, input.path.clone())?;
        if now.sha256 != input.sha256 {
            bail!("input {} changed since the recorded run", input.path.display());
        }
    }
    let new = execute(old.invocation.clone(), old.config_path.clone(), out, Some(absolute(manifest)?))?;
    if let Some(e) = &new.exit.error {
        bail!("replayed run failed: {e}");
    }
    let mut diffs = Vec::new();
    for o in &old.outputs {
        match new.outputs.iter().find(|n| n.path == o.path) {
            Some(n) if n.sha256 == o.sha256 => {}
            Some(_) => diffs.push(format!("{} differs", o.path.display())),
            None => diffs.push(format!("{} missing", o.path.display())),
        }
    }
    if new.outputs.len() != old.outputs.len() {
        diffs.push(format!("{} outputs recorded, {} produced", old.outputs.len(), new.outputs.len()));
    }
    if !diffs.is_empty() {
        bail!("replay of {} diverged: {}", manifest.display(), diffs.join("; "));
    }
    Ok(new)
}

/// Entry point shared by the binary and the tests; returns the exit code.
pub fn run(cli: Cli) -> Result<i32> {
    let m = match cli.command {
        Command::Replay { manifest, out } => replay(&manifest, out.out)?,
        other => {
            let (inv, config_path, out) = resolve(other)?;
            execute(inv, config_path, out, None)?
        }
    };
    eprintln!("run directory: {}", m.run_dir.display());
    if let Some(e) = &m.exit.error {
        eprintln!("error: {e}");
    }
    Ok(m.exit.code)
}
