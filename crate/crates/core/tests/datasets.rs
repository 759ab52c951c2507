use ctae::datasets::*;
use ctae::evalkit::cross_validated_r2;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp;

fn ev(trial: usize, channel: usize, time_s: f64) -> SpikeEvent {
    SpikeEvent { trial, channel, time_s }
}

#[test]
fn binning_conventions() {
    let empty = bin_spikes(0, &[], 2, 3, 100.0, 5).unwrap();
    assert!(empty.values().iter().all(|&v| v == 0.0));
    let one = bin_spikes(0, &[ev(0, 0, 0.05)], 1, 1, 100.0, 5).unwrap();
    assert_eq!(one.values(), &[1.0, 0.0, 0.0, 0.0, 0.0]);
    let edge = bin_spikes(0, &[ev(0, 0, 0.1), ev(0, 0, 0.0)], 1, 1, 100.0, 3).unwrap();
    assert_eq!(edge.values(), &[1.0, 1.0, 0.0]);
    assert!(bin_spikes(0, &[ev(0, 0, -0.01)], 1, 1, 100.0, 3).is_err());
    assert!(bin_spikes(0, &[ev(0, 0, 0.3)], 1, 1, 100.0, 3).is_err());
    assert!(bin_spikes(0, &[ev(1, 0, 0.0)], 1, 1, 100.0, 3).is_err());
}

#[test]
fn poisson_stream_counts_match_direct_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let gap = Exp::new(10.0).unwrap();
    let t_bins = 2000;
    let mut events = Vec::new();
    let mut now: f64 = rng.sample(gap);
    while now < t_bins as f64 * 0.1 {
        events.push(ev(0, 0, now));
        now += rng.sample(gap);
    }
    let rec = bin_spikes(0, &events, 1, 1, 100.0, t_bins).unwrap();
    let mut oracle = vec![0.0; t_bins];
    for e in &events {
        let mut b = 0;
        while (b + 1) as f64 * 0.1 <= e.time_s {
            b += 1;
        }
        // floating-point edge: trust the binner's own left-closed rule
        let b = if (e.time_s * 1000.0 / 100.0).floor() as usize != b { (e.time_s * 10.0).floor() as usize } else { b };
        oracle[b] += 1.0;
    }
    assert_eq!(rec.values(), oracle.as_slice());
    let mean = rec.values().iter().sum::<f64>() / t_bins as f64;
    assert!((mean - 1.0).abs() <= 3.0 * (1.0 / t_bins as f64).sqrt(), "mean count {mean}");
}

#[test]
fn event_list_parsing() {
    let text = "trial,channel,time\n# comment\n0,1,0.25\n\n1, 0, 0.5\n";
    let evs = parse_event_list(text).unwrap();
    assert_eq!(evs, vec![ev(0, 1, 0.25), ev(1, 0, 0.5)]);
    assert!(parse_event_list("0,1\n").is_err());
    assert!(parse_event_list("0,1,0.2\nx,y,z\n").is_err());
}

#[test]
fn smoothing_kernel_and_properties() {
    let k1 = gaussian_kernel(1);
    let e = (-2.0f64).exp();
    let oracle = [e / (1.0 + 2.0 * e), 1.0 / (1.0 + 2.0 * e), e / (1.0 + 2.0 * e)];
    for (a, b) in k1.iter().zip(oracle) {
        assert!((a - b).abs() < 1e-15);
    }
    for k in 1..6 {
        let taps = gaussian_kernel(k);
        assert_eq!(taps.len(), 2 * k + 1);
        assert!((taps.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }

    let mut impulse = vec![0.0; 9];
    impulse[4] = 1.0;
    let rec = RegionRecording::new(0, (1, 1, 9), 100.0, ValueKind::Counts, impulse).unwrap();
    let s = gaussian_smooth(&rec, 1).unwrap();
    assert_eq!(s.kind, ValueKind::Rates);
    assert_eq!(&s.values()[3..6], k1.as_slice());
    assert_eq!(s.values()[2], 0.0);

    let flat = RegionRecording::new(0, (2, 2, 6), 100.0, ValueKind::Rates, vec![3.5; 24]).unwrap();
    for v in gaussian_smooth(&flat, 3).unwrap().values() {
        assert!((v - 3.5).abs() < 1e-14);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let noisy: Vec<f64> = (0..3 * 40).map(|_| rng.random_range(-1.0..1.0)).collect();
    let rec = RegionRecording::new(0, (1, 3, 40), 100.0, ValueKind::Rates, noisy).unwrap();
    let sm = gaussian_smooth(&rec, 2).unwrap();
    let tv = |v: &[f64]| v.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>();
    for n in 0..3 {
        assert!(tv(&sm.values()[n * 40..(n + 1) * 40]) < tv(&rec.values()[n * 40..(n + 1) * 40]));
    }
}

#[test]
fn preprocessing_commutes_with_trial_permutation() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let events: Vec<SpikeEvent> = (0..300)
        .map(|_| ev(rng.random_range(0..4), rng.random_range(0..3), rng.random_range(0.0..0.999)))
        .collect();
    let perm = [2usize, 0, 3, 1];
    let a = gaussian_smooth(&bin_spikes(0, &events, 4, 3, 100.0, 10).unwrap(), 2).unwrap().select(&perm);
    let inverse: Vec<usize> = (0..4).map(|k| perm.iter().position(|&p| p == k).unwrap()).collect();
    let moved: Vec<SpikeEvent> = events.iter().map(|e| ev(inverse[e.trial], e.channel, e.time_s)).collect();
    let b = gaussian_smooth(&bin_spikes(0, &moved, 4, 3, 100.0, 10).unwrap(), 2).unwrap();
    assert_eq!(a, b);
}

fn region_matrix(rec: &RegionRecording) -> DMatrix<f64> {
    let t = rec.time_steps;
    DMatrix::from_fn(rec.trials * t, rec.channels, |i, n| rec.get(i / t, n, i % t))
}

fn centered(mut m: DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows() as f64;
    for mut c in m.column_iter_mut() {
        let mean = c.sum() / n;
        c.add_scalar_mut(-mean);
    }
    m
}

#[test]
fn linear_private_only_data_has_exact_rank() {
    let mut spec = SyntheticSpec::two_region(0, 2, 3, 10, 4);
    spec.mixing = Mixing::Linear;
    spec.noise_std = 0.0;
    spec.trials = 40;
    spec.time_steps = 12;
    let (data, truth) = generate_synthetic(&spec).unwrap();
    for (r, want) in [(0, 2), (1, 3)] {
        let sv = region_matrix(&data.regions[r]).singular_values();
        let top = sv.max();
        let rank = sv.iter().filter(|&&s| s > 1e-9 * top).count();
        assert_eq!(rank, want, "region {r}: {sv}");
    }
    assert_eq!(truth.mask.shared_dims().len(), 0);
}

#[test]
fn planted_rows_are_orthonormal_per_trial() {
    let (_, truth) = generate_synthetic(&SyntheticSpec::two_region(3, 2, 2, 12, 5)).unwrap();
    let (d, t) = (truth.dims(), truth.time_steps);
    for k in 0..truth.trials {
        let rows = truth.rows(k, &(0..d).collect::<Vec<_>>());
        for i in 0..d {
            for j in 0..d {
                let g: f64 = (0..t).map(|s| rows[i * t + s] * rows[j * t + s]).sum::<f64>() / t as f64;
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g - want).abs() < 1e-10, "trial {k} G[{i}][{j}] = {g}");
            }
        }
    }
}

/// Canonical correlations from orthonormal bases of the centered data.
fn canonical_correlations(a: DMatrix<f64>, b: DMatrix<f64>) -> Vec<f64> {
    let qa = centered(a).qr().q();
    let qb = centered(b).qr().q();
    let mut s: Vec<f64> = (qa.transpose() * qb).singular_values().iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

#[test]
fn shared_latents_show_up_as_canonical_correlations() {
    let mut spec = SyntheticSpec::two_region(2, 2, 2, 20, 6);
    spec.mixing = Mixing::Linear;
    let (data, _) = generate_synthetic(&spec).unwrap();
    let cc = canonical_correlations(region_matrix(&data.regions[0]), region_matrix(&data.regions[1]));
    assert!(cc[1] > 0.9, "canonical correlations {cc:?}");
}

#[test]
fn shared_latents_raise_cross_region_predictability() {
    let predictability = |d_s: usize| {
        let mut spec = SyntheticSpec::two_region(d_s, 3, 3, 15, 9);
        spec.trials = 100;
        spec.conditions = if d_s == 0 { 1 } else { 8 };
        spec.condition_strength = if d_s == 0 { 0.0 } else { 1.5 };
        let (data, _) = generate_synthetic(&spec).unwrap();
        let t = data.time_steps();
        let folds = plain_folds(data.trials(), 5, 0).unwrap();
        let trial_of: Vec<usize> = (0..data.trials() * t).map(|i| i / t).collect();
        cross_validated_r2(&region_matrix(&data.regions[0]), &region_matrix(&data.regions[1]), &trial_of, &folds).unwrap()
    };
    let (with, without) = (predictability(2), predictability(0));
    assert!(with > without, "{with} vs {without}");
}

#[test]
fn generator_is_deterministic_and_validates() {
    let spec = SyntheticSpec::two_region(2, 1, 1, 8, 12);
    let (a, ta) = generate_synthetic(&spec).unwrap();
    let (b, tb) = generate_synthetic(&spec).unwrap();
    assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
    assert_eq!(ta, tb);
    let mut other = spec.clone();
    other.seed = 13;
    assert_ne!(generate_synthetic(&other).unwrap().0, a);

    let mut bad = spec.clone();
    bad.channels = vec![2, 8];
    assert!(generate_synthetic(&bad).is_err());
    assert_eq!(a.labels.as_ref().unwrap()[..9], [0, 1, 2, 3, 4, 5, 6, 7, 0]);
    assert_eq!(a.targets.as_ref().unwrap().dims, 2);
}

#[test]
fn dataset_and_truth_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let (data, truth) = generate_synthetic(&SyntheticSpec::two_region(2, 1, 2, 6, 1)).unwrap();
    data.save(&dir.path().join("d.ctae")).unwrap();
    truth.save(&dir.path().join("t.ctae")).unwrap();
    assert_eq!(Dataset::load(&dir.path().join("d.ctae")).unwrap(), data);
    assert_eq!(GroundTruth::load(&dir.path().join("t.ctae")).unwrap(), truth);
    // A truth file is not a data file.
    assert!(Dataset::load(&dir.path().join("t.ctae")).is_err());
}

#[test]
fn three_region_generator_has_seven_blocks() {
    let codes = ["111", "110", "101", "011", "100", "010", "001"];
    let spec = SyntheticSpec {
        latent: codes.iter().map(|c| (c.parse().unwrap(), 1)).collect(),
        channels: vec![8, 8, 8],
        ..SyntheticSpec::two_region(1, 1, 1, 8, 0)
    };
    let (data, truth) = generate_synthetic(&spec).unwrap();
    assert_eq!(data.regions.len(), 3);
    assert_eq!(truth.mask.blocks().len(), 7);
}

#[test]
fn split_sizes_and_stratification() {
    let parts = split_trials(200, &[0.7, 0.15, 0.15], None, 0).unwrap();
    assert_eq!(parts.iter().map(Vec::len).collect::<Vec<_>>(), vec![140, 30, 30]);
    let mut all: Vec<usize> = parts.concat();
    all.sort();
    assert_eq!(all, (0..200).collect::<Vec<_>>());

    let labels: Vec<usize> = (0..10).map(|i| i % 2).collect();
    for fold in stratified_folds(&labels, 5, 3).unwrap() {
        let mut c: Vec<usize> = fold.iter().map(|&i| labels[i]).collect();
        c.sort();
        assert_eq!(c, vec![0, 1]);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let labels: Vec<usize> = (0..137).map(|_| rng.random_range(0..4)).collect();
    let parts = split_trials(137, &[0.7, 0.15], Some(&labels), 11).unwrap();
    for part in &parts {
        for c in 0..4 {
            let global = labels.iter().filter(|&&l| l == c).count() as f64 / 137.0;
            let here = part.iter().filter(|&&i| labels[i] == c).count() as f64;
            assert!((here - global * part.len() as f64).abs() <= 1.0, "class {c}");
        }
    }
    assert_eq!(split_trials(137, &[0.7, 0.15], Some(&labels), 11).unwrap(), parts);
    assert!(stratified_folds(&[0, 0, 0, 0, 1], 2, 0).is_err());
}
