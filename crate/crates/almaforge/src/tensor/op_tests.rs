//! Forward-value and gradient tests for every tape op.
//!
//! Gradient checks follow one pattern: record the op, reduce to a scalar with
//! `weighted_sum` (fixed random weights so the upstream signal is
//! non-degenerate), take analytic gradients from `backward`, and compare
//! against central finite differences of a forward-only closure.

use super::gradcheck;
use super::{AttentionMask, Tape, Tensor};
use crate::rng::stream;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-4;
const TOL: f64 = 1e-5;
const INSTANCES: u64 = 20;

fn rt(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor<f64> {
    Tensor::randn(r, c, 1.0, rng)
}

fn dim(rng: &mut ChaCha8Rng) -> usize {
    rng.random_range(1..=5)
}

/// Run one gradient check: `record` must build the graph from leaves over
/// `inputs` and return the scalar loss node. Every input gets
/// `requires_grad`; the same closure serves the analytic and numeric paths.
fn run_check<F>(inputs: &[Tensor<f64>], record: F, ctx: &str)
where
    F: Fn(&mut Tape<f64>, &[super::NodeId]) -> super::NodeId,
{
    let mut tape = Tape::new();
    let ids: Vec<_> = inputs
        .iter()
        .map(|t| tape.leaf(t.clone(), true))
        .collect();
    let loss = record(&mut tape, &ids);
    let mut grads = tape.backward(loss).expect("backward");
    let analytic: Vec<Option<Tensor<f64>>> = ids.iter().map(|id| grads.take(*id)).collect();

    let f = |probe: &[Tensor<f64>]| -> f64 {
        let mut tape = Tape::new();
        let ids: Vec<_> = probe.iter().map(|t| tape.leaf(t.clone(), true)).collect();
        let loss = record(&mut tape, &ids);
        tape.value(loss).get(0, 0)
    };
    if let Err(msg) = gradcheck::check(f, inputs, &analytic, EPS, TOL) {
        panic!("{ctx}: {msg}");
    }
}

#[test]
fn matmul_forward_identity_and_dot() {
    let mut tape = Tape::<f64>::new();
    let i2 = tape.leaf(Tensor::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap(), false);
    let v = tape.leaf(Tensor::new(2, 1, vec![3.0, 4.0]).unwrap(), false);
    let y = tape.matmul(i2, v).unwrap();
    assert_eq!(tape.value(y).data(), &[3.0, 4.0]);

    let a = tape.leaf(Tensor::new(1, 2, vec![1.0, 2.0]).unwrap(), false);
    let b = tape.leaf(Tensor::new(2, 1, vec![3.0, 4.0]).unwrap(), false);
    let y = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(y).data(), &[11.0]);
}

#[test]
fn matmul_rejects_inner_dim_mismatch() {
    let mut tape = Tape::<f64>::new();
    let a = tape.leaf(Tensor::zeros(2, 3), false);
    let b = tape.leaf(Tensor::zeros(4, 2), false);
    let err = tape.matmul(a, b).unwrap_err().to_string();
    assert!(err.contains("[2, 3]") && err.contains("[4, 2]"), "{err}");
}

#[test]
fn matmul_gradcheck() {
    for i in 0..INSTANCES {
        let mut rng = stream(i, "gc.matmul");
        let (m, k, n) = (dim(&mut rng), dim(&mut rng), dim(&mut rng));
        let inputs = vec![rt(&mut rng, m, k), rt(&mut rng, k, n)];
        let w = rt(&mut rng, m, n);
        run_check(
            &inputs,
            move |tape, ids| {
                let y = tape.matmul(ids[0], ids[1]).unwrap();
                tape.weighted_sum(y, &w).unwrap()
            },
            "matmul",
        );
    }
}

#[test]
fn matmul_seq_gradcheck() {
    for i in 0..INSTANCES {
        let mut rng = stream(i, "gc.matmul_seq");
        let (m, k, n) = (dim(&mut rng), dim(&mut rng), dim(&mut rng));
        let inputs = vec![rt(&mut rng, m, k), rt(&mut rng, k, n)];
        let w = rt(&mut rng, m, n);
        run_check(
            &inputs,
            move |tape, ids| {
                let y = tape.matmul_seq(ids[0], ids[1]).unwrap();
                tape.weighted_sum(y, &w).unwrap()
            },
            "matmul_seq",
        );
    }
}

#[test]
fn matmul_seq_agrees_with_matmul_up_to_rounding() {
    let mut rng = stream(3, "gc.matmul_seq.fwd");
    let a = rt(&mut rng, 7, 13);
    let b = rt(&mut rng, 13, 4);
    let mut tape = Tape::<f64>::new();
    let (ai, bi) = (tape.leaf(a, false), tape.leaf(b, false));
    let blocked = tape.matmul(ai, bi).unwrap();
    let seq = tape.matmul_seq(ai, bi).unwrap();
    for (x, y) in tape
        .value(blocked)
        .data()
        .iter()
        .zip(tape.value(seq).data())
    {
        assert!((x - y).abs() < 1e-12, "{x} vs {y}");
    }
}

#[test]
fn transpose_gradcheck() {
    for i in 0..INSTANCES {
        let mut rng = stream(i, "gc.transpose");
        let (m, n) = (dim(&mut rng), dim(&mut rng));
        let inputs = vec![rt(&mut rng, m, n)];
        let w = rt(&mut rng, n, m);
        run_check(
            &inputs,
            move |tape, ids| {
                let y = tape.transpose(ids[0]);
                tape.weighted_sum(y, &w).unwrap()
            },
            "transpose",
        );
    }
}

#[test]
fn add_and_scale_gradcheck() {
    for i in 0..INSTANCES {
        let mut rng = stream(i, "gc.add_scale");
        let (m, n) = (dim(&mut rng), dim(&mut rng));
        let inputs = vec![rt(&mut rng, m, n), rt(&mut rng, m, n)];
        let w = rt(&mut rng, m, n);
        let c = rng.random_range(-2.0..2.0);
        run_check(
            &inputs,
            move |tape, ids| {
                let s = tape.add(ids[0], ids[1]).unwrap();
                let y = tape.scale(s, c);
                tape.weighted_sum(y, &w).unwrap()
            },
            "add+scale",
        );
    }
}

#[test]
fn add_bias_gradcheck() {
    for i in 0..INSTANCES {
        let mut rng = stream(i, "gc.add_bias");
        let (m, n) = (dim(&mut rng), dim(&mut rng));
        let inputs = vec![rt(&mut rng, m, n), rt(&mut rng, 1, n)];
        let w = rt(&mut rng, m, n);
        run_check(
            &inputs,
            move |tape, ids| {
                let y = tape.add_bias(ids[0], ids[1]).unwrap();
                tape.weighted_sum(y, &w).unwrap()
            },
            "add_bias",
        );
    }
}

#[test]
fn gelu_values_and_gradcheck() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::new(1, 3, vec![0.0, 3.0, -3.0]).unwrap(), false);
    let y = tape.gelu(x);
    assert_eq!(tape.value(y).get(0, 0), 0.0);
    // Tanh-form GELU at 3.0; nearly the identity this far into the tail.
    assert!((tape.value(y).get(0, 1) - 2.99636).abs() < 1e-4);
    assert!(tape.value(y).get(0, 2).abs() < 0.01);

    for i in 0..INSTANCES {
        let mut rng = stream(i, "gc.gelu");
        let (m, n) = (dim(&mut rng), dim(&mut rng));
        let inputs = vec![rt(&mut rng, m, n)];
        let w = rt(&mut rng, m, n);
        run_check(
            &inputs,
            move |tape, ids| {
                let y = tape.gelu(ids[0]);
                tape.weighted_sum(y, &w).unwrap()
            },
            "gelu",
        );
    }
}

#[test]
fn softmax_rows_forward_examples() {
    let mut tape = Tape::<f32>::new();
    let x = tape.leaf(Tensor::new(1, 4, vec![0.0; 4]).unwrap(), false);
    let y = tape.softmax_rows(x).unwrap();
    for v in tape.value(y).data() {
        assert!((v - 0.25).abs() < 1e-7);
    }

    let big = tape.leaf(Tensor::new(1, 2, vec![1000.0, 1000.0]).unwrap(), false);
    let y = tape.softmax_rows(big).unwrap();
    for v in tape.value(y).data() {
        assert!(v.is_finite() && (v - 0.5).abs() < 1e-7);
    }

    // Independent 64-bit evaluation of softmax([1,2,3]).
    let x = tape.leaf(Tensor::new(1, 3, vec![1.0, 2.0, 3.0]).unwrap(), false);
    let y = tape.softmax_rows(x).unwrap();
    let z: f64 = (1..=3).map(|i| (i as f64).exp()).sum();
    for (j, v) in tape.value(y).data().iter().enumerate() {
        let want = ((j + 1) as f64).exp() / z;
        assert!((*v as f64 - want).abs() < 1e-6, "{v} vs {want}");
    }
}

#[test]
fn softmax_rows_sum_and_shift_invariance() {
    for i in 0..INSTANCES {
        let mut rng = stream(i, "softmax.shift");
        let (m, n) = (dim(&mut rng), dim(&mut rng));
        let x = rt(&mut rng, m, n).cast::<f32>();
        let c: f32 = rng.random_range(-5.0..5.0);
        let mut shifted = x.clone();
        for v in shifted.data_mut() {
            *v += c;
        }
        let mut tape = Tape::<f32>::new();
        let a = tape.leaf(x, false);
        let b = tape.leaf(shifted, false);
        let pa = tape.softmax_rows(a).unwrap();
        let pb = tape.softmax_rows(b).unwrap();
        for r in 0..m {
            let s: f32 = tape.value(pa).row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
        for (u, v) in tape.value(pa).data().iter().zip(tape.value(pb).data()) {
            assert!((u - v).abs() < 1e-6);
        }
    }
}

#[test]
fn softmax_rows_gradcheck() {
    for i in 0..INSTANCES {
        let mut rng = stream(i, "gc.softmax");
        let (m, n) = (dim(&mut rng), dim(&mut rng));
        let inputs = vec![rt(&mut rng, m, n)];
        let w = rt(&mut rng, m, n);
        run_check(
            &inputs,
            move |tape, ids| {
                let y = tape.softmax_rows(ids[0]).unwrap();
                tape.weighted_sum(y, &w).unwrap()
            },
            "softmax_rows",
        );
    }
}

#[test]
fn masked_softmax_rows_zeroes_disallowed_and_gradchecks() {
    let mask = AttentionMask::causal(3);
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(rt(&mut stream(0, "ms"), 3, 3), false);
    let p = tape.masked_softmax_rows(x, &mask).unwrap();
    for i in 0..3 {
        let mut sum = 0.0;
        for j in 0..3 {
            let v = tape.value(p).get(i, j);
            if j > i {
                assert_eq!(v, 0.0, "disallowed position must hold exactly 0");
            }
            sum += v;
        }
        assert!((sum - 1.0).abs() < 1e-12);
    }

    for i in 0..INSTANCES {
        let mut rng = stream(i, "gc.masked_softmax");
        let n = rng.random_range(2..=5);
        let prefix = rng.random_range(0..=n);
        let mask = AttentionMask::prefix(prefix, n).unwrap();
        let inputs = vec![rt(&mut rng, n, n)];
        let w = rt(&mut rng, n, n);
        run_check(
            &inputs,
            move |tape, ids| {
                let y = tape.masked_softmax_rows(ids[0], &mask).unwrap();
                tape.weighted_sum(y, &w).unwrap()
            },
            "masked_softmax_rows",
        );
    }
}

#[test]
fn layer_norm_gradcheck() {
    for i in 0..INSTANCES {
        let mut rng = stream(i, "gc.layer_norm");
        let (m, n) = (dim(&mut rng), 1 + dim(&mut rng));
        let inputs = vec![rt(&mut rng, m, n), rt(&mut rng, 1, n), rt(&mut rng, 1, n)];
        let w = rt(&mut rng, m, n);
        run_check(
            &inputs,
            move |tape, ids| {
                let y = tape.layer_norm(ids[0], ids[1], ids[2]).unwrap();
                tape.weighted_sum(y, &w).unwrap()
            },
            "layer_norm",
        );
    }
}

#[test]
fn layer_norm_normalizes_rows() {
    let mut rng = stream(3, "ln.rows");
    let x = rt(&mut rng, 4, 8);
    let mut tape = Tape::<f64>::new();
    let xid = tape.leaf(x, false);
    let gain = tape.leaf(Tensor::filled(1, 8, 1.0), false);
    let bias = tape.leaf(Tensor::zeros(1, 8), false);
    let y = tape.layer_norm(xid, gain, bias).unwrap();
    for r in 0..4 {
        let row = tape.value(y).row(r);
        let mean: f64 = row.iter().sum::<f64>() / 8.0;
        let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 8.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-4, "unit variance up to epsilon");
    }
}

#[test]
fn embedding_lookup_gathers_and_gradchecks() {
    let mut tape = Tape::<f64>::new();
    let table = tape.leaf(
        Tensor::new(3, 2, vec![0.0, 1.0, 10.0, 11.0, 20.0, 21.0]).unwrap(),
        false,
    );
    let y = tape.embedding_lookup(table, &[2, 0, 2]).unwrap();
    assert_eq!(tape.value(y).data(), &[20.0, 21.0, 0.0, 1.0, 20.0, 21.0]);
    assert!(tape.embedding_lookup(table, &[3]).is_err());

    for i in 0..INSTANCES {
        let mut rng = stream(i, "gc.embedding");
        let v = rng.random_range(2..=6);
        let d = dim(&mut rng);
        let len = rng.random_range(1..=6);
        let ids: Vec<u32> = (0..len).map(|_| rng.random_range(0..v as u32)).collect();
        let inputs = vec![rt(&mut rng, v, d)];
        let w = rt(&mut rng, len, d);
        run_check(
            &inputs,
            move |tape, tids| {
                let y = tape.embedding_lookup(tids[0], &ids).unwrap();
                tape.weighted_sum(y, &w).unwrap()
            },
            "embedding_lookup",
        );
    }
}

#[test]
fn slice_and_concat_gradcheck() {
    for i in 0..INSTANCES {
        let mut rng = stream(i, "gc.slice_concat");
        let (m, n) = (2 + dim(&mut rng), 2 + dim(&mut rng));
        let r0 = rng.random_range(0..m - 1);
        let rows = rng.random_range(1..=m - r0);
        let c0 = rng.random_range(0..n - 1);
        let cols = rng.random_range(1..=n - c0);
        let inputs = vec![rt(&mut rng, m, n), rt(&mut rng, rows, cols)];
        let w = rt(&mut rng, rows, 2 * cols);
        let w2 = rt(&mut rng, 2 * rows, cols);
        run_check(
            &inputs,
            move |tape, ids| {
                let block = tape.slice_block(ids[0], r0, rows, c0, cols).unwrap();
                let side = tape.concat_cols(&[block, ids[1]]).unwrap();
                let tall = tape.concat_rows(&[block, ids[1]]).unwrap();
                let s1 = tape.weighted_sum(side, &w).unwrap();
                let s2 = tape.weighted_sum(tall, &w2).unwrap();
                tape.add(s1, s2).unwrap()
            },
            "slice/concat",
        );
    }
}

#[test]
fn masked_cross_entropy_uniform_logits() {
    let mut tape = Tape::<f64>::new();
    let logits = tape.leaf(Tensor::zeros(1, 4), false);
    let (_, stats) = tape.masked_cross_entropy(logits, &[2], &[1]).unwrap();
    assert!((stats.sum - 4.0f64.ln()).abs() < 1e-12);
    assert_eq!(stats.count, 1);
}

#[test]
fn masked_cross_entropy_mask_selects_single_position() {
    let mut rng = stream(9, "ce.select");
    let logits = rt(&mut rng, 5, 7);
    let targets: Vec<u32> = (0..5).map(|_| rng.random_range(0..7)).collect();
    let mut mask = vec![0u8; 5];
    mask[4] = 1;

    let mut tape = Tape::<f64>::new();
    let l = tape.leaf(logits.clone(), false);
    let (_, stats) = tape.masked_cross_entropy(l, &targets, &mask).unwrap();

    let row = logits.row(4);
    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = row.iter().map(|x| (x - mx).exp()).sum();
    let want = mx + z.ln() - row[targets[4] as usize];
    assert!((stats.sum - want).abs() < 1e-12);
    assert_eq!(stats.count, 1);
}

#[test]
fn masked_cross_entropy_ignores_masked_targets_bitwise() {
    let mut rng = stream(11, "ce.perturb");
    let logits = rt(&mut rng, 6, 5);
    let targets: Vec<u32> = (0..6).map(|_| rng.random_range(0..5)).collect();
    let mask = vec![1, 0, 1, 0, 0, 1];

    let run = |targets: &[u32]| -> u64 {
        let mut tape = Tape::<f64>::new();
        let l = tape.leaf(logits.clone(), false);
        let (_, stats) = tape.masked_cross_entropy(l, targets, &mask).unwrap();
        stats.sum.to_bits()
    };
    let base = run(&targets);
    for trial in 0..10 {
        let mut perturbed = targets.clone();
        let mut prng = stream(trial, "ce.perturb.targets");
        for (i, m) in mask.iter().enumerate() {
            if *m == 0 {
                perturbed[i] = prng.random_range(0..5);
            }
        }
        assert_eq!(base, run(&perturbed), "masked-out targets must not matter");
    }
}

#[test]
fn masked_cross_entropy_rejects_empty_mask() {
    let mut tape = Tape::<f64>::new();
    let l = tape.leaf(Tensor::zeros(2, 3), false);
    let err = tape
        .masked_cross_entropy(l, &[0, 0], &[0, 0])
        .unwrap_err()
        .to_string();
    assert!(err.contains("no rows"), "{err}");
}

#[test]
fn masked_cross_entropy_gradcheck() {
    for i in 0..INSTANCES {
        let mut rng = stream(i, "gc.ce");
        let t = rng.random_range(1..=5);
        let v = rng.random_range(2..=6);
        let targets: Vec<u32> = (0..t).map(|_| rng.random_range(0..v as u32)).collect();
        let mut mask: Vec<u8> = (0..t).map(|_| rng.random_range(0..2) as u8).collect();
        mask[0] = 1;
        let inputs = vec![rt(&mut rng, t, v)];
        run_check(
            &inputs,
            move |tape, ids| {
                let (loss, _) = tape.masked_cross_entropy(ids[0], &targets, &mask).unwrap();
                loss
            },
            "masked_cross_entropy",
        );
    }
}

#[test]
fn weighted_sum_gradcheck() {
    for i in 0..INSTANCES {
        let mut rng = stream(i, "gc.weighted_sum");
        let (m, n) = (dim(&mut rng), dim(&mut rng));
        let inputs = vec![rt(&mut rng, m, n)];
        let w = rt(&mut rng, m, n);
        run_check(
            &inputs,
            move |tape, ids| tape.weighted_sum(ids[0], &w).unwrap(),
            "weighted_sum",
        );
    }
}

#[test]
fn backward_twice_is_an_error() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::new(1, 1, vec![2.0]).unwrap(), true);
    let y = tape.scale(x, 3.0);
    tape.backward(y).unwrap();
    assert!(matches!(
        tape.backward(y),
        Err(super::TensorError::BackwardSpent)
    ));
}

#[test]
fn gradients_skip_frozen_leaves() {
    let mut tape = Tape::<f64>::new();
    let frozen = tape.leaf(Tensor::new(1, 2, vec![1.0, 2.0]).unwrap(), false);
    let live = tape.leaf(Tensor::new(2, 1, vec![3.0, 4.0]).unwrap(), true);
    let y = tape.matmul(frozen, live).unwrap();
    let mut grads = tape.backward(y).unwrap();
    assert!(grads.get(frozen).is_none());
    assert!(grads.take(live).is_some());
}

#[test]
fn forward_and_backward_are_bitwise_reproducible() {
    let run = || -> (Vec<u64>, Vec<u64>) {
        let mut rng = stream(17, "repro");
        let a = rt(&mut rng, 6, 9).cast::<f32>();
        let b = rt(&mut rng, 9, 4).cast::<f32>();
        let w = rt(&mut rng, 6, 4).cast::<f32>();
        let mut tape = Tape::<f32>::new();
        let ai = tape.leaf(a, true);
        let bi = tape.leaf(b, true);
        let y = tape.matmul(ai, bi).unwrap();
        let g = tape.gelu(y);
        let loss = tape.weighted_sum(g, &w).unwrap();
        let value_bits: Vec<u64> = tape
            .value(g)
            .data()
            .iter()
            .map(|v| v.to_bits() as u64)
            .collect();
        let mut grads = tape.backward(loss).unwrap();
        let grad_bits: Vec<u64> = grads
            .take(ai)
            .unwrap()
            .data()
            .iter()
            .map(|v| v.to_bits() as u64)
            .collect();
        (value_bits, grad_bits)
    };
    assert_eq!(run(), run());
}
