use channelpage_tensor::{
    decode_checkpoint, encode_checkpoint, grad_check, Graph, ParamSet, Result, Tensor, Var,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-6;

fn random(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Random values bounded away from zero, for ops with a kink there.
fn away_from_zero(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(rows, cols, |_, _| {
        let v: f64 = rng.random_range(0.1..1.0);
        if rng.random::<bool>() {
            v
        } else {
            -v
        }
    })
}

/// Reduces `x` to a scalar through fixed random weights so every output
/// element carries a distinct upstream gradient.
fn weighted_sum(g: &mut Graph, x: Var, seed: u64) -> Result<Var> {
    let (r, c) = g.value(x).dims2("weighted_sum")?;
    let w = g.constant(random(r, c, seed));
    let prod = g.mul(x, w)?;
    g.sum(prod)
}

fn check(params: &[Tensor], f: impl Fn(&mut Graph, &[Var]) -> Result<Var>) -> f64 {
    let report = grad_check(params, f).unwrap();
    assert!(report.checked > 0);
    report.max_rel_error
}

#[test]
fn scalar_matmul() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::scalar(2.0));
    let b = g.constant(Tensor::scalar(3.0));
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.value(c).item(), 6.0);
}

#[test]
fn elementwise_values() {
    let mut g = Graph::new();
    let z = g.constant(Tensor::scalar(0.0));
    let t = g.tanh(z).unwrap();
    let s = g.sigmoid(z).unwrap();
    let m = g.constant(Tensor::scalar(-1.0));
    let r = g.relu(m).unwrap();
    assert_eq!(g.value(t).item(), 0.0);
    assert_eq!(g.value(s).item(), 0.5);
    assert_eq!(g.value(r).item(), 0.0);
}

#[test]
fn matmul_gradient() {
    let err = check(&[random(3, 4, 1), random(4, 2, 2)], |g, v| {
        let c = g.matmul(v[0], v[1])?;
        weighted_sum(g, c, 3)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn add_sub_mul_scale_gradients() {
    let err = check(&[random(2, 3, 4), random(2, 3, 5)], |g, v| {
        let a = g.add(v[0], v[1])?;
        let s = g.sub(a, v[1])?;
        let m = g.mul(s, v[1])?;
        let k = g.scale(m, -1.7)?;
        weighted_sum(g, k, 6)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn add_row_gradient() {
    let err = check(&[random(4, 3, 7), random(1, 3, 8)], |g, v| {
        let y = g.add_row(v[0], v[1])?;
        weighted_sum(g, y, 9)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn activation_gradients() {
    let x = away_from_zero(3, 3, 10);
    let err = check(std::slice::from_ref(&x), |g, v| {
        let y = g.tanh(v[0])?;
        weighted_sum(g, y, 11)
    });
    assert!(err < TOL, "tanh {err}");
    let err = check(std::slice::from_ref(&x), |g, v| {
        let y = g.sigmoid(v[0])?;
        weighted_sum(g, y, 12)
    });
    assert!(err < TOL, "sigmoid {err}");
    let err = check(std::slice::from_ref(&x), |g, v| {
        let y = g.relu(v[0])?;
        weighted_sum(g, y, 13)
    });
    assert!(err < TOL, "relu {err}");
}

#[test]
fn softmax_gradients_both_axes() {
    for axis in [0, 1] {
        let err = check(&[random(3, 4, 14)], |g, v| {
            let y = g.softmax(v[0], axis)?;
            weighted_sum(g, y, 15)
        });
        assert!(err < TOL, "axis {axis}: {err}");
    }
}

#[test]
fn softmax_of_matmul_chain() {
    let err = check(&[random(3, 4, 16), random(4, 3, 17)], |g, v| {
        let s = g.matmul(v[0], v[1])?;
        let p = g.softmax(s, 1)?;
        weighted_sum(g, p, 18)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn layer_norm_gradient() {
    let err = check(&[random(3, 5, 19), random(1, 5, 20), random(1, 5, 21)], |g, v| {
        let y = g.layer_norm(v[0], v[1], v[2])?;
        weighted_sum(g, y, 22)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn concat_gradients() {
    let err = check(&[random(2, 3, 23), random(1, 3, 24)], |g, v| {
        let y = g.concat(&[v[0], v[1]], 0)?;
        weighted_sum(g, y, 25)
    });
    assert!(err < TOL, "rows {err}");
    let err = check(&[random(2, 3, 26), random(2, 1, 27)], |g, v| {
        let y = g.concat(&[v[0], v[1], v[0]], 1)?;
        weighted_sum(g, y, 28)
    });
    assert!(err < TOL, "cols {err}");
}

#[test]
fn embedding_lookup_gradient() {
    let err = check(&[random(5, 3, 29)], |g, v| {
        let y = g.gather_rows(v[0], &[4, 1, 4, 0])?;
        weighted_sum(g, y, 30)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn transpose_gradient() {
    let err = check(&[random(2, 4, 31)], |g, v| {
        let y = g.transpose(v[0])?;
        weighted_sum(g, y, 32)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn bce_gradient() {
    let err = check(&[random(4, 1, 33)], |g, v| g.bce_with_logits(v[0], &[1.0, 0.0, 0.0, 1.0]));
    assert!(err < TOL, "{err}");
}

#[test]
fn dropout_gradient_with_fixed_mask() {
    let err = check(&[random(3, 4, 34)], |g, v| {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let y = g.dropout(v[0], 0.3, &mut rng, true)?;
        weighted_sum(g, y, 36)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn dropout_identity_cases() {
    let mut g = Graph::new();
    let x = g.constant(random(2, 2, 37));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = g.dropout(x, 0.0, &mut rng, true).unwrap();
    let b = g.dropout(x, 0.5, &mut rng, false).unwrap();
    assert_eq!(g.value(a), g.value(x));
    assert_eq!(g.value(b), g.value(x));
}

#[test]
fn composed_two_layer_network() {
    let err = check(
        &[random(4, 3, 38), random(3, 5, 39), random(1, 5, 40), random(5, 1, 41)],
        |g, v| {
            let h = g.matmul(v[0], v[1])?;
            let h = g.add_row(h, v[2])?;
            let h = g.tanh(h)?;
            let o = g.matmul(h, v[3])?;
            g.bce_with_logits(o, &[1.0, 0.0, 1.0, 0.0])
        },
    );
    assert!(err < 1e-4, "{err}");
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(vals in prop::collection::vec(-50.0f64..50.0, 1..24), cols in 1usize..6) {
        let rows = vals.len().div_ceil(cols);
        let mut data = vals.clone();
        data.resize(rows * cols, 0.0);
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![rows, cols], data).unwrap());
        let y = g.softmax(x, 1).unwrap();
        let t = g.value(y);
        for r in 0..rows {
            let s: f64 = t.row_slice(r).iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-12, "row {} sums to {}", r, s);
            prop_assert!(t.row_slice(r).iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn seeded_dropout_is_reproducible(seed in any::<u64>(), p in 0.0f64..0.9) {
        let run = || {
            let mut g = Graph::new();
            let x = g.constant(random(4, 4, 42));
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y = g.dropout(x, p, &mut rng, true).unwrap();
            g.value(y).clone()
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact(vals in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..30)) {
        let mut ps = ParamSet::new();
        ps.push("w", Tensor::new(vec![1, vals.len()], vals.clone()).unwrap());
        ps.push("b", Tensor::scalar(-0.0));
        let back = decode_checkpoint(&encode_checkpoint(&ps)).unwrap();
        prop_assert_eq!(back.names(), ps.names());
        for (a, b) in back.tensors().iter().zip(ps.tensors()) {
            prop_assert_eq!(a.shape(), b.shape());
            let bits_a: Vec<u64> = a.data().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = b.data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(bits_a, bits_b);
        }
    }
}
