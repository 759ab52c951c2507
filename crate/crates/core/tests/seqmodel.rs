use std::collections::BTreeMap;

use ctae::seqmodel::*;
use diffcore::{Graph, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn tiny(channels: Vec<usize>, t: usize, latent: &[(&str, usize)]) -> Ctae {
    let latent: BTreeMap<SubsetCode, usize> = latent.iter().map(|(c, n)| (c.parse().unwrap(), *n)).collect();
    Ctae::new(ModelConfig {
        channels,
        time_steps: t,
        layers: 2,
        d_model: 4,
        heads: 2,
        ff_width: 8,
        latent,
        dropout: 0.0,
        standardize: true,
        decoder_queries: DecoderQueries::Positional,
    })
    .unwrap()
}

#[test]
fn positional_encoding_values() {
    let pe = positional_encoding(4, 6).unwrap();
    assert_eq!(pe.shape(), &[4, 6]);
    assert_eq!(pe.get2(0, 0), 0.0);
    assert_eq!(pe.get2(0, 1), 1.0);
    assert_eq!(pe.get2(1, 0), 1f64.sin());
    assert_eq!(pe.get2(1, 1), 1f64.cos());
    let f = 10000f64.powf(2.0 / 6.0);
    assert_eq!(pe.get2(3, 2), (3.0 / f).sin());
    assert!(positional_encoding(4, 5).is_err());
}

#[test]
fn two_region_mask_layout() {
    let m = MembershipMask::build_two_region_masks(2, 1, 3).unwrap();
    assert_eq!(m.dims(), 6);
    let b = |v: &[u8]| v.iter().map(|&x| x == 1).collect::<Vec<bool>>();
    assert_eq!(m.matrix()[0], b(&[1, 1, 1, 0, 0, 0]));
    assert_eq!(m.matrix()[1], b(&[1, 1, 0, 1, 1, 1]));
    assert_eq!(m.shared_dims(), vec![0, 1]);
    assert_eq!(m.private_dims(0), vec![2]);
    assert_eq!(m.private_dims(1), vec![3, 4, 5]);
    assert_eq!(m.intersection().unwrap(), vec![1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    assert_eq!(m.claim_counts(), vec![2.0, 2.0, 1.0, 1.0, 1.0, 1.0]);
    // A block of size zero simply disappears.
    let m = MembershipMask::build_two_region_masks(2, 0, 1).unwrap();
    assert_eq!(m.private_dims(0), Vec::<usize>::new());
    assert!(MembershipMask::build_two_region_masks(0, 0, 0).is_err());
}

#[test]
fn three_region_codes_claim_by_bit() {
    let codes = ["111", "110", "101", "011", "100", "010", "001"];
    let m = MembershipMask::from_code_sizes(3, codes.iter().map(|c| (*c, 1))).unwrap();
    let order: Vec<String> = m.blocks().iter().map(|b| b.code.to_string()).collect();
    assert_eq!(order, codes);
    for (i, code) in codes.iter().enumerate() {
        for r in 0..3 {
            assert_eq!(m.matrix()[r][i], code.as_bytes()[r] == b'1', "code {code} region {r}");
        }
    }
    assert_eq!(m.shared_dims(), vec![0, 1, 2, 3]);
    assert_eq!(m.private_dims(2), vec![6]);
    assert_eq!(m.claim_counts(), vec![3.0, 2.0, 2.0, 2.0, 1.0, 1.0, 1.0]);
    assert!(m.intersection().is_err());
}

fn arb_sizes(regions: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0usize..3, (1 << regions) - 1)
        .prop_filter("at least one dimension", |v| v.iter().sum::<usize>() > 0)
}

fn mask_from(regions: usize, sizes: &[usize]) -> MembershipMask {
    let mut map = BTreeMap::new();
    for (i, &n) in sizes.iter().enumerate() {
        let bits = i + 1;
        let flags = (0..regions).map(|r| bits >> r & 1 == 1).collect();
        map.insert(SubsetCode::new(flags).unwrap(), n);
    }
    MembershipMask::build_membership(regions, &map).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn mask_columns_follow_their_block_codes(regions in 2usize..5, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sizes: Vec<usize> = (0..(1 << regions) - 1).map(|_| rng.random_range(0..3)).collect();
        prop_assume!(sizes.iter().sum::<usize>() > 0);
        let m = mask_from(regions, &sizes);
        prop_assert_eq!(m.dims(), sizes.iter().sum::<usize>());
        let mut seen = 0;
        for b in m.blocks() {
            for &i in &b.indices {
                seen += 1;
                for r in 0..regions {
                    prop_assert_eq!(m.matrix()[r][i], b.code.claims(r));
                }
            }
        }
        prop_assert_eq!(seen, m.dims());
        for w in m.blocks().windows(2) {
            prop_assert!(w[0].code.popcount() >= w[1].code.popcount());
        }
    }

    #[test]
    fn fusion_passes_private_and_averages_shared(sizes in arb_sizes(3), rows in 1usize..4, seed in 0u64..1000) {
        let m = mask_from(3, &sizes);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let zs: Vec<Tensor> = (0..3).map(|_| random_tensor(&mut rng, &[rows, m.dims()])).collect();
        for path in [FusionPath::General] {
            let mut g = Graph::new();
            let vars: Vec<_> = zs.iter().map(|z| g.input(z.clone())).collect();
            let f = fuse_on_graph(&mut g, &vars, &m, path).unwrap();
            let out = g.value(f);
            for i in 0..m.dims() {
                let claim: Vec<usize> = (0..3).filter(|&r| m.matrix()[r][i]).collect();
                for row in 0..rows {
                    let mut s = 0.0;
                    for &r in &claim {
                        s += zs[r].get2(row, i);
                    }
                    let want = if claim.len() == 1 { zs[claim[0]].get2(row, i) } else { s / claim.len() as f64 };
                    prop_assert_eq!(out.get2(row, i), want);
                }
            }
        }
    }

    #[test]
    fn two_region_fusion_paths_agree(d_s in 1usize..4, d_1 in 0usize..3, d_2 in 0usize..3, seed in 0u64..1000) {
        let m = MembershipMask::build_two_region_masks(d_s, d_1, d_2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let zs: Vec<Tensor> = (0..2).map(|_| random_tensor(&mut rng, &[3, m.dims()])).collect();
        let run = |path| {
            let mut g = Graph::new();
            let vars: Vec<_> = zs.iter().map(|z| g.input(z.clone())).collect();
            let f = fuse_on_graph(&mut g, &vars, &m, path).unwrap();
            g.value(f).clone()
        };
        prop_assert_eq!(run(FusionPath::General), run(FusionPath::TwoRegion));
    }

    #[test]
    fn decoder_ignores_masked_out_dimensions(seed in 0u64..10_000) {
        let model = tiny(vec![3, 2], 5, &[("11", 2), ("10", 1), ("01", 2)]);
        let p = model.init_params(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = random_tensor(&mut rng, &[5, 5]);
        let mut z2 = z.clone();
        for r in 0..2 {
            let w = model.mask().region_weights(r);
            for i in 0..5 {
                if w[i] == 0.0 {
                    for t in 0..5 {
                        z2.data_mut()[i * 5 + t] = rng.random_range(-5.0..5.0);
                    }
                }
            }
            let a = model.decode_region(&p, r, &z, &w).unwrap();
            let b = model.decode_region(&p, r, &z2, &w).unwrap();
            prop_assert_eq!(a, b);
            z2 = z.clone();
        }
    }

    #[test]
    fn encoder_and_decoder_are_causal(seed in 0u64..10_000, t0 in 0usize..6) {
        let model = tiny(vec![3, 2], 6, &[("11", 2), ("10", 1), ("01", 1)]);
        let p = model.init_params(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_tensor(&mut rng, &[3, 6]);
        let mut x2 = x.clone();
        for n in 0..3 {
            x2.data_mut()[n * 6 + t0] += 1.0 + rng.random_range(0.0..1.0);
        }
        let a = model.encode_region(&p, 0, &x).unwrap();
        let b = model.encode_region(&p, 0, &x2).unwrap();
        for i in 0..4 {
            for t in 0..t0 {
                prop_assert_eq!(a.get2(i, t), b.get2(i, t));
            }
        }
        prop_assert!((0..4).any(|i| a.get2(i, t0) != b.get2(i, t0)));

        let w = model.mask().region_weights(1);
        let mut z2 = a.clone();
        for i in 0..4 {
            z2.data_mut()[i * 6 + t0] += 1.0;
        }
        let y = model.decode_region(&p, 1, &a, &w).unwrap();
        let y2 = model.decode_region(&p, 1, &z2, &w).unwrap();
        for n in 0..2 {
            for t in 0..t0 {
                prop_assert_eq!(y.get2(n, t), y2.get2(n, t));
            }
        }
    }
}

#[test]
fn batched_shapes_and_single_trial_agreement() {
    let model = tiny(vec![3, 4], 5, &[("11", 2), ("10", 1), ("01", 1)]);
    let p = model.init_params(7);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let xs: Vec<Tensor> = [3, 4].iter().map(|&n| random_tensor(&mut rng, &[n, 5])).collect();
    let bundle = model.latent_bundle(&p, &xs).unwrap();
    assert_eq!(bundle.fused.shape(), &[4, 5]);
    assert_eq!(bundle.blocks.shared().shape(), &[2, 5]);
    assert_eq!(bundle.blocks.private(1).shape(), &[1, 5]);

    // Two identical trials in one batch give the single-trial result twice.
    let mut g = Graph::new();
    let vars: Vec<_> = xs
        .iter()
        .map(|x| {
            let tm = x.transpose().unwrap();
            let mut d = tm.data().to_vec();
            d.extend_from_slice(tm.data());
            g.input(Tensor::new(vec![10, tm.shape()[1]], d).unwrap())
        })
        .collect();
    let fw = model.encode_all(&mut g, &p, &vars, 2, FusionPath::General, &mut Mode::Eval).unwrap();
    let fused = g.value(fw.fused);
    assert_eq!(fused.shape(), &[10, 4]);
    let single = bundle.fused.transpose().unwrap();
    for r in 0..5 {
        for i in 0..4 {
            assert!((fused.get2(r, i) - single.get2(r, i)).abs() < 1e-12);
            assert!((fused.get2(r + 5, i) - single.get2(r, i)).abs() < 1e-12);
        }
    }
    let w = model.mask().region_weights(0);
    let y = model.decode(&mut g, &p, 0, fw.fused, &w, 2, &mut Mode::Eval).unwrap();
    assert_eq!(g.shape(y), &[10, 3]);
}

#[test]
fn zeroed_output_head_returns_its_bias() {
    let model = tiny(vec![3, 2], 4, &[("11", 1), ("10", 1), ("01", 1)]);
    let mut p = model.init_params(3);
    let w = p.get_mut("enc0.out.w").unwrap();
    w.data_mut().iter_mut().for_each(|v| *v = 0.0);
    let bias = p.get("enc0.out.b").unwrap().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let z = model.encode_region(&p, 0, &random_tensor(&mut rng, &[3, 4])).unwrap();
    for i in 0..3 {
        for t in 0..4 {
            assert_eq!(z.get2(i, t), bias.data()[i]);
        }
    }
}

#[test]
fn init_is_seeded_and_checked() {
    let model = tiny(vec![3, 2], 4, &[("11", 1), ("10", 1), ("01", 1)]);
    assert_eq!(model.init_params(1), model.init_params(1));
    assert_ne!(model.init_params(1), model.init_params(2));
    let other = tiny(vec![3, 3], 4, &[("11", 1), ("10", 1), ("01", 1)]);
    assert!(model.check_params(&other.init_params(1)).is_err());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(model.encode_region(&model.init_params(1), 0, &random_tensor(&mut rng, &[2, 4])).is_err());
}
