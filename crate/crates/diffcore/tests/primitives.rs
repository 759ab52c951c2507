//! Gradient checks and oracles for every differentiable primitive.

use diffcore::{grad_check, Graph, ParameterSet, Result, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DELTA: f64 = 1e-4;
const TOL: f64 = 1e-4;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

/// Random weighting so the loss is not symmetric in its entries.
fn weighted_sum(g: &mut Graph, x: Var, rng_seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let shape = g.shape(x).to_vec();
    let w = rand_tensor(&mut rng, &shape, 1.0);
    let y = g.mul_const(x, w)?;
    g.sum(y)
}

fn check(params: &ParameterSet, build: impl Fn(&mut Graph, &ParameterSet) -> Result<Var>) -> f64 {
    grad_check(build, params, DELTA).unwrap().max_relative_error
}

fn assert_primitive(name: &str, mk: impl Fn(&mut ChaCha8Rng) -> (ParameterSet, Box<dyn Fn(&mut Graph, &ParameterSet) -> Result<Var>>)) {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let (params, build) = mk(&mut rng);
        let err = check(&params, build);
        assert!(err <= TOL, "{name} seed {seed}: relative error {err:e}");
    }
}

fn two(rng: &mut ChaCha8Rng, a: &[usize], b: &[usize]) -> ParameterSet {
    let mut p = ParameterSet::new();
    p.insert("a", rand_tensor(rng, a, 1.0)).unwrap();
    p.insert("b", rand_tensor(rng, b, 1.0)).unwrap();
    p
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = rand_tensor(&mut rng, &[3, 4], 2.0);
    let b = rand_tensor(&mut rng, &[4, 2], 2.0);
    let c = a.matmul(&b).unwrap();
    for i in 0..3 {
        for j in 0..2 {
            let mut acc = 0.0;
            for k in 0..4 {
                acc += a.get2(i, k) * b.get2(k, j);
            }
            assert!((c.get2(i, j) - acc).abs() < 1e-14);
        }
    }
}

#[test]
fn softmax_matches_high_precision_values() {
    let x = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
    let s = x.softmax_lastdim(None).unwrap();
    let want = [0.090_030_573_170_380_458, 0.244_728_471_054_797_652, 0.665_240_955_774_821_890];
    for (got, w) in s.data().iter().zip(want) {
        assert!((got - w).abs() < 1e-15, "{got} vs {w}");
    }
}

#[test]
fn layer_norm_output_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_tensor(&mut rng, &[1, 17], 5.0);
    let y = x.layer_norm(&Tensor::full(&[17], 1.0), &Tensor::zeros(&[17]), 1e-12).unwrap();
    let n = 17.0;
    let mean = y.sum() / n;
    let var = y.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    assert!(mean.abs() < 1e-12);
    assert!((var - 1.0).abs() < 1e-9);
}

#[test]
fn linear_loss_is_checked_to_rounding() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut p = ParameterSet::new();
    p.insert("w", rand_tensor(&mut rng, &[1, 6], 1.0)).unwrap();
    let x = rand_tensor(&mut rng, &[6, 1], 1.0);
    let report = grad_check(
        |g, p| {
            let w = g.param(p, "w")?;
            let xi = g.input(x.clone());
            let y = g.matmul(w, xi)?;
            g.sum(y)
        },
        &p,
        1e-5,
    )
    .unwrap();
    assert!(report.max_relative_error <= 1e-9, "{report:?}");
    assert_eq!(report.entries_checked, 6);
}

#[test]
fn grad_matmul() {
    assert_primitive("matmul", |rng| {
        (two(rng, &[3, 4], &[4, 2]), Box::new(|g, p| {
            let (a, b) = (g.param(p, "a")?, g.param(p, "b")?);
            let c = g.matmul(a, b)?;
            weighted_sum(g, c, 1)
        }))
    });
}

#[test]
fn grad_add_sub_mul() {
    assert_primitive("add/sub/mul", |rng| {
        (two(rng, &[2, 3], &[2, 3]), Box::new(|g, p| {
            let (a, b) = (g.param(p, "a")?, g.param(p, "b")?);
            let s = g.add(a, b)?;
            let d = g.sub(a, b)?;
            let m = g.mul(s, d)?;
            let m = g.mul(m, a)?;
            weighted_sum(g, m, 2)
        }))
    });
}

#[test]
fn grad_bias_scale_and_masks() {
    assert_primitive("add_bias/scale/mul_cols/div_cols", |rng| {
        (two(rng, &[4, 3], &[3]), Box::new(|g, p| {
            let (a, b) = (g.param(p, "a")?, g.param(p, "b")?);
            let y = g.add_bias(a, b)?;
            let y = g.scale(y, -1.7)?;
            let y = g.mul_cols(y, &[1.0, 0.0, 0.5])?;
            let y = g.div_cols(y, &[2.0, 1.0, 3.0])?;
            weighted_sum(g, y, 3)
        }))
    });
}

#[test]
fn grad_gelu_tanh() {
    assert_primitive("gelu/tanh", |rng| {
        (two(rng, &[3, 3], &[3, 3]), Box::new(|g, p| {
            let (a, b) = (g.param(p, "a")?, g.param(p, "b")?);
            let y = g.gelu(a)?;
            let z = g.tanh(b)?;
            let s = g.add(y, z)?;
            weighted_sum(g, s, 4)
        }))
    });
}

#[test]
fn grad_layer_norm() {
    assert_primitive("layer_norm", |rng| {
        let mut p = two(rng, &[3, 5], &[5]);
        p.insert("c", rand_tensor(rng, &[5], 1.0)).unwrap();
        (p, Box::new(|g, p| {
            let (x, gain, bias) = (g.param(p, "a")?, g.param(p, "b")?, g.param(p, "c")?);
            let y = g.layer_norm(x, gain, bias, 1e-5)?;
            weighted_sum(g, y, 5)
        }))
    });
}

#[test]
fn grad_softmax_with_mask() {
    assert_primitive("softmax", |rng| {
        (two(rng, &[3, 4], &[1]), Box::new(|g, p| {
            let a = g.param(p, "a")?;
            let ninf = f64::NEG_INFINITY;
            let mask = Tensor::new(vec![1, 4], vec![0.0, ninf, 0.0, 0.0]).unwrap();
            let s = g.softmax(a, Some(&mask))?;
            weighted_sum(g, s, 6)
        }))
    });
}

#[test]
fn grad_attention() {
    for causal in [true, false] {
        assert_primitive("attention", |rng| {
            let mut p = two(rng, &[6, 4], &[6, 4]);
            p.insert("c", rand_tensor(rng, &[6, 4], 1.0)).unwrap();
            (p, Box::new(move |g, p| {
                let (q, k, v) = (g.param(p, "a")?, g.param(p, "b")?, g.param(p, "c")?);
                let o = g.attention(q, k, v, 2, 2, causal)?;
                weighted_sum(g, o, 7)
            }))
        });
    }
}

#[test]
fn grad_tile_gram_reshape_reductions() {
    assert_primitive("tile/gram/reshape/sum_squares", |rng| {
        (two(rng, &[3, 2], &[1]), Box::new(|g, p| {
            let a = g.param(p, "a")?;
            let t = g.tile_rows(a, 2)?;
            let gm = g.batched_gram(t, 2)?;
            let r = g.reshape(gm, &[8])?;
            let s = g.sum_squares(r)?;
            let w = weighted_sum(g, t, 8)?;
            g.add(s, w)
        }))
    });
}

#[test]
fn attention_is_causal() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let q = rand_tensor(&mut rng, &[5, 4], 1.0);
    let k = rand_tensor(&mut rng, &[5, 4], 1.0);
    let v = rand_tensor(&mut rng, &[5, 4], 1.0);
    let run = |k: &Tensor, v: &Tensor| {
        let mut g = Graph::new();
        let (qi, ki, vi) = (g.input(q.clone()), g.input(k.clone()), g.input(v.clone()));
        let o = g.attention(qi, ki, vi, 1, 2, true).unwrap();
        g.value(o).clone()
    };
    let base = run(&k, &v);
    let (mut k2, mut v2) = (k.clone(), v.clone());
    for j in 12..20 {
        k2.data_mut()[j] += 3.0;
        v2.data_mut()[j] -= 2.0;
    }
    let pert = run(&k2, &v2);
    assert_eq!(&base.data()[..12], &pert.data()[..12]);
    assert_ne!(&base.data()[12..], &pert.data()[12..]);
}

#[test]
fn forward_is_deterministic() {
    let build = || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = rand_tensor(&mut rng, &[8, 6], 1.0);
        let mut g = Graph::new();
        let xi = g.input(x);
        let o = g.attention(xi, xi, xi, 2, 3, true).unwrap();
        let n = g.gelu(o).unwrap();
        g.value(n).clone()
    };
    assert_eq!(build().into_data(), build().into_data());
}

proptest! {
    #[test]
    fn softmax_slices_sum_to_one(values in prop::collection::vec(-50.0f64..50.0, 1..40), cols in 1usize..8) {
        let n = values.len() / cols * cols;
        prop_assume!(n > 0);
        let x = Tensor::new(vec![n / cols, cols], values[..n].to_vec()).unwrap();
        let s = x.softmax_lastdim(None).unwrap();
        for row in s.data().chunks(cols) {
            let total: f64 = row.iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
            prop_assert!(row.iter().all(|&p| p > 0.0 || p == 0.0));
        }
    }
}
