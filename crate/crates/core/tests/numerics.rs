mod common;

use common::{max_grad_error, rng, uniform};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wavbrivl::numerics::{
    layer_norm, EncoderLayer, LayerNorm, Mlp, Module, MultiHeadAttention, Tensor,
};

const SEEDS: [u64; 3] = [11, 22, 33];
const RTOL: f32 = 1e-3;

fn param(seed: u64, shape: &[usize]) -> Tensor {
    let mut r = rng(seed);
    Tensor::param(uniform(&mut r, shape.iter().product()), shape).unwrap()
}

#[test]
fn matmul_gradient_matches_central_differences() {
    for seed in SEEDS {
        let a = param(seed, &[3, 4]);
        let b = param(seed + 100, &[4, 2]);
        let err = max_grad_error(&[a.clone(), b.clone()], seed, &|| a.matmul(&b));
        assert!(err < RTOL, "seed {seed}: {err}");
    }
}

#[test]
fn softmax_gradient_matches_central_differences() {
    for seed in SEEDS {
        let x = param(seed, &[3, 5]);
        for axis in 0..2 {
            let err = max_grad_error(&[x.clone()], seed, &|| x.softmax(axis));
            assert!(err < RTOL, "seed {seed} axis {axis}: {err}");
        }
    }
}

#[test]
fn layer_norm_gradient_matches_central_differences() {
    for seed in SEEDS {
        let x = param(seed, &[4, 8]);
        let g = param(seed + 1, &[8]);
        let b = param(seed + 2, &[8]);
        let err = max_grad_error(&[x.clone(), g.clone(), b.clone()], seed, &|| layer_norm(&x, &g, &b, 1e-5));
        assert!(err < RTOL, "seed {seed}: {err}");
    }
}

#[test]
fn ffn_gradient_matches_central_differences() {
    for seed in SEEDS {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let ffn = Mlp::new(&mut r, 6, 24, 6);
        let x = param(seed + 5, &[3, 6]);
        let mut wrt = ffn.tensors();
        wrt.push(x.clone());
        let err = max_grad_error(&wrt, seed, &|| ffn.forward(&x));
        assert!(err < RTOL, "seed {seed}: {err}");
    }
}

#[test]
fn attention_gradient_matches_central_differences() {
    for seed in SEEDS {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mha = MultiHeadAttention::new(&mut r, 8, 2).unwrap();
        let x = param(seed + 7, &[3, 8]);
        let mut wrt = mha.tensors();
        wrt.push(x.clone());
        let err = max_grad_error(&wrt, seed, &|| mha.forward(&x));
        assert!(err < RTOL, "seed {seed}: {err}");
    }
}

#[test]
fn composite_encoder_layer_gradient() {
    for seed in SEEDS {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let layer = EncoderLayer::new(&mut r, 8, 2).unwrap();
        let x = param(seed + 9, &[4, 8]);
        let mut wrt = layer.tensors();
        wrt.push(x.clone());
        let err = max_grad_error(&wrt, seed, &|| layer.forward(&x));
        assert!(err < RTOL, "seed {seed}: {err}");
    }
}

#[test]
fn elementwise_and_reduction_gradients() {
    for seed in SEEDS {
        let x = param(seed, &[3, 4]);
        let y = param(seed + 1, &[3, 4]);
        let bias = param(seed + 2, &[4]);
        let wrt = [x.clone(), y.clone(), bias.clone()];
        let err = max_grad_error(&wrt, seed, &|| {
            let a = x.mul(&y)?.sub(&x.sigmoid())?.add_bias(&bias)?.scale(1.5);
            let rows = a.mean_rows()?;
            let cols = a.sum_cols()?.transpose()?;
            Tensor::concat(&[rows, cols.narrow_cols(0, 3)?, a.sum().reshape(&[1, 1])?], 1)
        });
        assert!(err < RTOL, "seed {seed}: {err}");
    }
}

#[test]
fn shape_op_gradients() {
    for seed in SEEDS {
        let x = param(seed, &[3, 4]);
        let y = param(seed + 1, &[3, 2]);
        let wrt = [x.clone(), y.clone()];
        let err = max_grad_error(&wrt, seed, &|| {
            let joined = Tensor::concat(&[x.clone(), y.clone()], 1)?;
            let stacked = Tensor::concat(&[joined.clone(), joined.narrow_cols(1, 4)?.transpose()?.reshape(&[2, 6])?], 0)?;
            let picked = stacked.select_rows(&[4, 0, 0, 2])?;
            Ok(picked)
        });
        assert!(err < RTOL, "seed {seed}: {err}");
    }
}

#[test]
fn normalize_and_cross_entropy_gradients() {
    for seed in SEEDS {
        let x = param(seed, &[3, 5]);
        let err = max_grad_error(&[x.clone()], seed, &|| {
            let n = x.l2_normalize_rows(1e-8)?;
            let ce = x.scale(3.0).cross_entropy(&[0, 4, 2])?.reshape(&[1, 1])?;
            Tensor::concat(&[n.reshape(&[1, 15])?, ce], 1)
        });
        assert!(err < RTOL, "seed {seed}: {err}");
    }
}

#[test]
fn attention_matches_per_head_loop() {
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let mha = MultiHeadAttention::new(&mut r, 8, 2).unwrap();
    let mut r = rng(6);
    let xv = uniform(&mut r, 24);
    let x = Tensor::new(xv.clone(), &[3, 8]).unwrap();
    let out = mha.forward(&x).unwrap().to_vec();

    let lin = |l: &wavbrivl::numerics::Linear, rows: &[Vec<f32>]| -> Vec<Vec<f32>> {
        let w = l.weight.to_vec();
        let b = l.bias.to_vec();
        let (i, o) = (l.in_dim(), l.out_dim());
        rows.iter()
            .map(|row| (0..o).map(|j| b[j] + (0..i).map(|k| row[k] * w[k * o + j]).sum::<f32>()).collect())
            .collect()
    };
    let rows: Vec<Vec<f32>> = xv.chunks(8).map(|c| c.to_vec()).collect();
    let (q, k, v) = (lin(&mha.query, &rows), lin(&mha.key, &rows), lin(&mha.value, &rows));
    let mut merged = vec![vec![0.0f32; 8]; 3];
    for h in 0..2 {
        let cols = h * 4..h * 4 + 4;
        for i in 0..3 {
            let scores: Vec<f32> = (0..3)
                .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f32>() / 2.0)
                .collect();
            let m = scores.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let e: Vec<f32> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f32 = e.iter().sum();
            for c in cols.clone() {
                merged[i][c] = (0..3).map(|j| e[j] / z * v[j][c]).sum();
            }
        }
    }
    let expect: Vec<f32> = lin(&mha.output, &merged).concat();
    for (a, b) in out.iter().zip(&expect) {
        assert!((a - b).abs() < 1e-5, "{a} vs {b}");
    }
}

#[test]
fn attention_rows_sum_to_one() {
    let mut r = ChaCha8Rng::seed_from_u64(8);
    let mha = MultiHeadAttention::new(&mut r, 16, 4).unwrap();
    let mut r = rng(9);
    let x = Tensor::new(uniform(&mut r, 7 * 16), &[7, 16]).unwrap();
    let (_, weights) = mha.forward_with_weights(&x).unwrap();
    assert_eq!(weights.len(), 4);
    for w in weights {
        for row in w.to_vec().chunks(7) {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn double_backward_accumulates_exactly_twice() {
    let mut r = ChaCha8Rng::seed_from_u64(12);
    let layer = EncoderLayer::new(&mut r, 8, 2).unwrap();
    let x = param(13, &[3, 8]);
    let w = Tensor::new(uniform(&mut rng(1), 24), &[3, 8]).unwrap();
    let loss = || layer.forward(&x).unwrap().mul(&w).unwrap().sum();
    loss().backward().unwrap();
    let once: Vec<Vec<f32>> = layer.tensors().iter().map(|t| t.grad().unwrap()).collect();
    let l = loss();
    l.backward().unwrap();
    let _ = l;
    for t in layer.tensors() {
        t.zero_grad();
    }
    x.zero_grad();
    let l = loss();
    l.backward().unwrap();
    l.backward().unwrap();
    for (t, g1) in layer.tensors().iter().zip(&once) {
        let g2 = t.grad().unwrap();
        for (a, b) in g2.iter().zip(g1) {
            assert_eq!(*a, 2.0 * b);
        }
    }
}

#[test]
fn forward_is_deterministic() {
    let build = || {
        let mut r = ChaCha8Rng::seed_from_u64(77);
        let layer = EncoderLayer::new(&mut r, 16, 4).unwrap();
        let mut r = rng(78);
        let x = Tensor::new(uniform(&mut r, 5 * 16), &[5, 16]).unwrap();
        layer.forward(&x).unwrap().to_vec()
    };
    let (a, b) = (build(), build());
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}

fn finite_rows(rows: usize, cols: usize) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-20.0f32..20.0, rows * cols)
}

proptest! {
    #[test]
    fn softmax_sums_to_one_and_ignores_shift(
        raw in prop::collection::vec(-20_480i32..20_480, 18),
        c in -50i32..50,
    ) {
        // Dyadic values keep `v + c` exact in f32.
        let v: Vec<f32> = raw.iter().map(|&r| r as f32 / 1024.0).collect();
        let c = c as f32;
        let x = Tensor::new(v.clone(), &[3, 6]).unwrap();
        let shifted = Tensor::new(v.iter().map(|a| a + c).collect(), &[3, 6]).unwrap();
        let y = x.softmax(1).unwrap().to_vec();
        let ys = shifted.softmax(1).unwrap().to_vec();
        for row in y.chunks(6) {
            prop_assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
        for (a, b) in y.iter().zip(&ys) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn layer_norm_standardizes_rows(v in finite_rows(4, 8)) {
        let x = Tensor::new(v.clone(), &[4, 8]).unwrap();
        let ln = LayerNorm::new(8);
        let y = ln.forward(&x).unwrap().to_vec();
        for (row, src) in y.chunks(8).zip(v.chunks(8)) {
            let m = src.iter().sum::<f32>() / 8.0;
            let var = src.iter().map(|a| (a - m) * (a - m)).sum::<f32>() / 8.0;
            // Rows whose variance is comparable to eps are not standardized.
            prop_assume!(var > 1e-1);
            let mean = row.iter().sum::<f32>() / 8.0;
            let v2 = row.iter().map(|a| (a - mean) * (a - mean)).sum::<f32>() / 8.0;
            prop_assert!(mean.abs() < 1e-5);
            prop_assert!((v2 - 1.0).abs() < 1e-4);
        }
    }
}
