use ctae::datasets::{generate_synthetic, Dataset, SyntheticSpec};
use ctae::error::CtaeError;
use ctae::objectives::LossWeights;
use ctae::seqmodel::{FusionPath, ModelConfig};
use ctae::trainer::*;

fn small_data(seed: u64) -> Dataset {
    let mut spec = SyntheticSpec::two_region(2, 1, 1, 6, seed);
    spec.trials = 24;
    spec.time_steps = 8;
    generate_synthetic(&spec).unwrap().0
}

fn small_config(epochs: usize) -> TrainConfig {
    let mut m = ModelConfig::two_region([6, 6], 8, 2, 1, 1);
    m.d_model = 8;
    m.heads = 2;
    m.ff_width = 16;
    m.layers = 1;
    m.dropout = 0.1;
    let w = LossWeights { shared: 1.0, align: 0.5, orth: 0.01, warmup: 3 };
    let mut c = TrainConfig::new(m, w, 1e-3);
    c.epochs = epochs;
    c.batch_size = Some(5);
    c.seed = 7;
    c
}

#[test]
fn fixed_seed_runs_are_log_identical() {
    let data = small_data(1);
    let a = train(small_config(6), &data).unwrap();
    let b = train(small_config(6), &data).unwrap();
    assert_eq!(log_to_csv(&a.log), log_to_csv(&b.log));
    assert_eq!(a.last.params, b.last.params);
    assert_eq!(a.log.len(), 7);
    assert!(log_to_csv(&a.log).starts_with(LOG_HEADER));
}

#[test]
fn checkpoint_round_trip_and_continuation_are_exact() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(2);
    let full = train(small_config(20), &data).unwrap();

    let mut first = Trainer::new(small_config(20), &data).unwrap();
    first.run_until(10).unwrap();
    let path = dir.path().join("last.ckpt");
    save_checkpoint(&first.last_checkpoint(), &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded, first.last_checkpoint());

    let best = first.best_checkpoint();
    let mut resumed = Trainer::resume(loaded, Some(&best), &data).unwrap();
    resumed.run_until(20).unwrap();
    assert_eq!(log_to_csv(resumed.log()), log_to_csv(&full.log[11..]));
    let out = resumed.finish();
    assert_eq!(out.last, full.last);
    assert_eq!(out.best, full.best);
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let data = small_data(3);
    let out = train(small_config(2), &data).unwrap();
    let bytes = out.last.to_bytes().unwrap();
    let mut bad = bytes.clone();
    let mid = bad.len() / 2;
    bad[mid] ^= 0x40;
    assert!(CheckpointRecord::from_bytes(&bad).is_err());
    assert!(CheckpointRecord::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    assert_eq!(CheckpointRecord::from_bytes(&bytes).unwrap(), out.last);
    assert!(load_checkpoint(std::path::Path::new("/nonexistent/ckpt")).is_err());
}

#[test]
fn zero_epochs_yields_initial_state() {
    let data = small_data(4);
    let out = train(small_config(0), &data).unwrap();
    assert_eq!(out.log.len(), 1);
    assert_eq!(out.last.epoch, 0);
    assert_eq!(out.best.params, out.last.params);
}

#[test]
fn divergence_is_reported() {
    let data = small_data(5);
    let mut c = small_config(5);
    c.learning_rate = 1e300;
    c.clip_norm = None;
    match train(c, &data) {
        Err(CtaeError::NonFinite { .. }) => {}
        other => panic!("expected a non-finite error, got {other:?}"),
    }
}

#[test]
fn mismatched_data_is_rejected() {
    let data = small_data(6);
    let mut c = small_config(1);
    c.model.time_steps = 9;
    assert!(train(c, &data).is_err());
    let mut c = small_config(1);
    c.learning_rate = -1.0;
    assert!(train(c, &data).is_err());
}

#[test]
fn decoupled_reconstruction_decreases() {
    let data = small_data(7);
    let mut c = small_config(200);
    c.weights = LossWeights { shared: 0.0, align: 0.0, orth: 0.0, warmup: 1 };
    c.model.dropout = 0.0;
    c.batch_size = None;
    c.learning_rate = 3e-3;
    let out = train(c, &data).unwrap();
    let first = out.log[0].val.rec;
    let last = out.log.last().unwrap().val.rec;
    assert!(last < 0.5 * first, "{first} -> {last}");
    for l in &out.log {
        assert_eq!(l.val.total, l.val.rec);
    }
}

#[test]
fn fusion_paths_give_identical_trajectories() {
    let data = small_data(8);
    let general = train(small_config(8), &data).unwrap();
    let mut c = small_config(8);
    c.fusion_path = FusionPath::TwoRegion;
    let two = train(c, &data).unwrap();
    for (a, b) in general.log.iter().zip(&two.log) {
        assert_eq!(a.train, b.train);
        assert_eq!(a.val, b.val);
    }
}

#[test]
fn single_cell_grid_matches_plain_training() {
    let data = small_data(9);
    let base = small_config(4);
    let out = grid_search(&base, &GridSpec::single(&base), &data, &GridOptions::default()).unwrap();
    let plain = train(base.clone(), &data).unwrap();
    assert_eq!(out.results.len(), 1);
    assert_eq!(out.results[0].config, base);
    assert_eq!(out.best.unwrap(), plain.best);
    let vals: Vec<f64> = plain.log.iter().map(|l| l.val.total).collect();
    assert_eq!(out.results[0].val_losses, vals);
}

#[test]
fn grid_ranks_by_validation_and_flags_divergence() {
    let data = small_data(10);
    let mut base = small_config(4);
    base.clip_norm = None;
    let mut grid = GridSpec::single(&base);
    grid.learning_rates = vec![1e-3, 1e300, 3e-3];
    let opts = GridOptions { jobs: 2, cache_dir: None };
    let out = grid_search(&base, &grid, &data, &opts).unwrap();
    let last = out.results.last().unwrap();
    assert!(last.diverged && last.error.is_some());
    assert_eq!(last.config.learning_rate, 1e300);

    let best = out.best.unwrap();
    let model = ctae::seqmodel::Ctae::new(best.config.model.clone()).unwrap();
    let prepared = PreparedData::new(&data, &best.standardizer).unwrap();
    assert!(out.results[0].best_val_total <= out.results[1].best_val_total);
    let w = &best.config.weights;
    let re = evaluate(&model, &best.params, &prepared, &best.split[1], w, w.orth, best.best_epoch, best.config.fusion_path)
        .unwrap();
    assert_eq!(re.total, out.results[0].best_val_total);
}

#[test]
fn grid_cache_is_reused() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(11);
    let base = small_config(3);
    let mut grid = GridSpec::single(&base);
    grid.orth = vec![0.01, 0.1];
    let opts = GridOptions { jobs: 1, cache_dir: Some(dir.path().to_path_buf()) };
    let first = grid_search(&base, &grid, &data, &opts).unwrap();
    let files = std::fs::read_dir(dir.path()).unwrap().count();
    assert_eq!(files, 4);
    let second = grid_search(&base, &grid, &data, &opts).unwrap();
    assert_eq!(first.results.len(), second.results.len());
    for (a, b) in first.results.iter().zip(&second.results) {
        assert_eq!(a.config_hash, b.config_hash);
        assert_eq!(a.val_losses, b.val_losses);
    }
    assert_eq!(first.best, second.best);
}

#[test]
fn grid_spreads_latent_sizes() {
    let base = small_config(1);
    let mut grid = GridSpec::single(&base);
    grid.latent_dims = vec![4, 7];
    let cells = grid.cells(&base).unwrap();
    let sizes: Vec<Vec<usize>> = cells.iter().map(|c| c.model.latent.values().copied().collect()).collect();
    assert_eq!(cells[0].model.latent_dim(), 4);
    assert_eq!(cells[1].model.latent_dim(), 7);
    assert!(sizes[1].iter().max().unwrap() - sizes[1].iter().min().unwrap() <= 1);
    grid.latent_dims = vec![2];
    assert!(grid.cells(&base).is_err());
    assert_ne!(config_hash(&cells[0]), config_hash(&cells[1]));
}
