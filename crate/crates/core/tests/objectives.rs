
use ctae::objectives::*;
use ctae::seqmodel::*;
use diffcore::{grad_check, Graph, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn micro(d_s: usize, d_1: usize, d_2: usize) -> Ctae {
    let mut c = ModelConfig::two_region([3, 2], 4, d_s, d_1, d_2);
    c.d_model = 4;
    c.heads = 2;
    c.ff_width = 6;
    c.dropout = 0.0;
    c.latent.retain(|_, n| *n > 0);
    Ctae::new(c).unwrap()
}

#[test]
fn reconstruction_hand_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = random_tensor(&mut rng, &[3, 5]);
    assert_eq!(loss_reconstruction(&[x.clone()], &[x.clone()]).unwrap(), 0.0);
    let shifted = x.map(|v| v + 1.0);
    assert_eq!(loss_reconstruction(&[shifted], &[x.clone()]).unwrap(), 15.0);

    let y = random_tensor(&mut rng, &[3, 5]);
    let z = random_tensor(&mut rng, &[2, 5]);
    let w = random_tensor(&mut rng, &[2, 5]);
    let oracle: f64 = x.data().iter().zip(y.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        + z.data().iter().zip(w.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    let got = loss_reconstruction(&[x, z], &[y, w]).unwrap();
    assert!((got - oracle).abs() <= 1e-12 * oracle);
}

#[test]
fn alignment_hand_values() {
    let t = 7;
    let m = MembershipMask::build_two_region_masks(1, 1, 1).unwrap();
    let mut z1 = vec![0.3; 3 * t];
    let mut z2 = vec![-0.2; 3 * t];
    for s in 0..t {
        z1[s] = 1.0;
        z2[s] = -1.0;
    }
    let z1 = Tensor::new(vec![3, t], z1).unwrap();
    let z2 = Tensor::new(vec![3, t], z2).unwrap();
    assert_eq!(loss_alignment(None, &[z1.clone(), z2.clone()], &m).unwrap(), 2.0 * t as f64);
    assert_eq!(loss_alignment(None, &[z1.clone(), z1.clone()], &m).unwrap(), 0.0);

    // Private rows never contribute.
    let mut p = z1.clone();
    for s in 0..t {
        p.data_mut()[t + s] = 9.0;
    }
    assert_eq!(loss_alignment(None, &[p, z2.clone()], &m).unwrap(), 2.0 * t as f64);
}

#[test]
fn gram_hand_values() {
    let z = Tensor::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
    assert_eq!(loss_orthogonality(&z).unwrap(), 2.0);
    let disjoint = Tensor::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 2.0, -1.0]]).unwrap();
    assert_eq!(loss_orthogonality(&disjoint).unwrap(), 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn gram_loss_symmetry_and_scaling(seed in 0u64..10_000, alpha in 0.25f64..4.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = random_tensor(&mut rng, &[4, 6]);
        let base = loss_orthogonality(&z).unwrap();
        prop_assert!(base >= 0.0);
        let rows: Vec<Vec<f64>> = [2, 0, 3, 1].iter().map(|&i| z.data()[i * 6..(i + 1) * 6].to_vec()).collect();
        let perm = loss_orthogonality(&Tensor::from_rows(&rows).unwrap()).unwrap();
        prop_assert!((perm - base).abs() <= 1e-12 * base.max(1e-300));
        let scaled = loss_orthogonality(&z.map(|v| alpha * v)).unwrap();
        prop_assert!((scaled - alpha.powi(4) * base).abs() <= 1e-10 * scaled.max(1e-300));
    }

    #[test]
    fn alignment_ignores_private_perturbations(seed in 0u64..10_000) {
        let m = MembershipMask::build_two_region_masks(2, 2, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z1 = random_tensor(&mut rng, &[5, 4]);
        let z2 = random_tensor(&mut rng, &[5, 4]);
        let base = loss_alignment(None, &[z1.clone(), z2.clone()], &m).unwrap();
        let mut q1 = z1.clone();
        let mut q2 = z2.clone();
        for i in m.private_dims(0).into_iter().chain(m.private_dims(1)) {
            for t in 0..4 {
                q1.data_mut()[i * 4 + t] += rng.random_range(-3.0..3.0);
                q2.data_mut()[i * 4 + t] += rng.random_range(-3.0..3.0);
            }
        }
        prop_assert_eq!(loss_alignment(None, &[q1, q2], &m).unwrap(), base);
    }
}

#[test]
fn shared_only_degenerate_masks() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = vec![random_tensor(&mut rng, &[3, 4]), random_tensor(&mut rng, &[2, 4])];

    // Everything shared: the shared-only read-out is the ordinary one.
    let all = micro(3, 0, 0);
    let p = all.init_params(1);
    let z = random_tensor(&mut rng, &[3, 4]);
    let full: Vec<Tensor> = (0..2)
        .map(|r| all.decode_region(&p, r, &z, &all.mask().region_weights(r)).unwrap())
        .collect();
    assert_eq!(loss_shared_only(&all, &p, &z, &x).unwrap(), loss_reconstruction(&full, &x).unwrap());

    // Nothing shared: decoders only ever see zeros.
    let none = micro(0, 2, 2);
    let p = none.init_params(2);
    let z = random_tensor(&mut rng, &[4, 4]);
    let zero = Tensor::zeros(&[4, 4]);
    let from_zero: Vec<Tensor> = (0..2)
        .map(|r| none.decode_region(&p, r, &zero, &none.mask().region_weights(r)).unwrap())
        .collect();
    assert_eq!(loss_shared_only(&none, &p, &z, &x).unwrap(), loss_reconstruction(&from_zero, &x).unwrap());
}

#[test]
fn shared_only_matches_manual_masking() {
    let model = micro(2, 1, 1);
    let p = model.init_params(5);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = vec![random_tensor(&mut rng, &[3, 4]), random_tensor(&mut rng, &[2, 4])];
    let z = random_tensor(&mut rng, &[4, 4]);
    let mut manual = Vec::new();
    for r in 0..2 {
        let w = model.mask().shared_weights(r);
        let mut zm = z.clone();
        for i in 0..4 {
            for t in 0..4 {
                zm.data_mut()[i * 4 + t] *= w[i];
            }
        }
        manual.push(model.decode_region(&p, r, &zm, &vec![1.0; 4]).unwrap());
    }
    let oracle = loss_reconstruction(&manual, &x).unwrap();
    let got = loss_shared_only(&model, &p, &z, &x).unwrap();
    assert!((got - oracle).abs() <= 1e-12 * oracle, "{got} vs {oracle}");
}

#[test]
fn warmup_schedule_points() {
    let (e, l) = (100, 0.01);
    let pts: Vec<f64> = [0, 100, 101, 150, 200, 300].iter().map(|&t| warmup_coefficient(t, e, l)).collect();
    assert_eq!(pts, vec![0.0, 0.0, 1.0 / 100.0 * l, 0.5 * l, l, l]);
}

#[test]
fn total_weighting() {
    let c = LossComponents { rec: 1.0, shared: 2.0, align: 3.0, orth: 4.0 };
    let w = LossWeights { shared: 1.0, align: 1.0, orth: 1.0, warmup: 10 };
    assert_eq!(total_loss(c, &w, 50).total, 10.0);
    let zero = LossWeights { shared: 0.0, align: 0.0, orth: 0.0, warmup: 10 };
    assert_eq!(total_loss(c, &zero, 50).total, 1.0);
    let table = LossWeights { shared: 1.0, align: 0.5, orth: 0.01, warmup: 100 };
    let r = total_loss(c, &table, 250);
    assert_eq!(r.lambda_orth_eff, 0.01);
    assert!((r.total - (1.0 + 2.0 + 1.5 + 0.04)).abs() < 1e-10);
    let r = total_loss(c, &table, 150);
    assert_eq!(r.lambda_orth_eff, 0.005);
}

#[test]
fn loss_graph_gradients_match_finite_differences() {
    let model = micro(2, 1, 1);
    let params = model.init_params(9);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x: Vec<Tensor> = [3, 2].iter().map(|&n| random_tensor(&mut rng, &[2 * 4, n])).collect();
    let w = LossWeights { shared: 1.0, align: 0.5, orth: 0.01, warmup: 1 };
    let report = grad_check(
        |g: &mut Graph, p| {
            let xs: Vec<_> = x.iter().map(|t| g.input(t.clone())).collect();
            let lg = build_losses(g, &model, p, &xs, 2, &w, 0.01, 5, FusionPath::General, &mut Mode::Eval).expect("loss graph");
            Ok(lg.total)
        },
        &params,
        1e-5,
    )
    .unwrap();
    assert!(report.max_relative_error <= 1e-4, "{report:?}");
}

#[test]
fn report_total_matches_components() {
    let model = micro(2, 1, 1);
    let params = model.init_params(4);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x: Vec<Tensor> = [3, 2].iter().map(|&n| random_tensor(&mut rng, &[3 * 4, n])).collect();
    let w = LossWeights { shared: 2.0, align: 0.1, orth: 0.05, warmup: 10 };
    let mut g = Graph::new();
    let xs: Vec<_> = x.iter().map(|t| g.input(t.clone())).collect();
    let lg = build_losses(&mut g, &model, &params, &xs, 3, &w, 0.025, 15, FusionPath::General, &mut Mode::Eval).unwrap();
    let r = lg.report;
    assert!((r.total - (r.rec + 2.0 * r.shared + 0.1 * r.align + 0.025 * r.orth)).abs() <= 1e-10);
    assert_eq!(r.total, g.scalar(lg.total));
}
