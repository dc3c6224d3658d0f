//! Gradient verification for every tape primitive against central finite
//! differences, plus frozen forward values computed with independent
//! oracles before the implementation existed.

use super::*;

const FD_EPS: f64 = 1e-5;
const FD_TOL: f64 = 1e-6;

fn eval(inputs: &[Tensor<f64>], build: &dyn Fn(&mut Tape<f64>, &[Var]) -> Var) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let loss = build(&mut tape, &vars);
    tape.scalar_value(loss)
}

/// Analytic gradients of a scalar-valued graph vs central differences.
fn fd_check(inputs: &[Tensor<f64>], build: &dyn Fn(&mut Tape<f64>, &[Var]) -> Var) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let loss = build(&mut tape, &vars);
    tape.backward(loss).unwrap();
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]))
        .collect();

    for (ti, t) in inputs.iter().enumerate() {
        for c in 0..t.len() {
            let mut plus = inputs.to_vec();
            plus[ti].data_mut()[c] += FD_EPS;
            let mut minus = inputs.to_vec();
            minus[ti].data_mut()[c] -= FD_EPS;
            let numeric = (eval(&plus, build) - eval(&minus, build)) / (2.0 * FD_EPS);
            let a = analytic[ti][c];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            assert!(
                rel < FD_TOL,
                "input {ti} component {c}: analytic={a:.12e} numeric={numeric:.12e} rel={rel:.3e}"
            );
        }
    }
}

/// Deterministic pseudo-random matrix so jacobians are probed densely.
fn probe(shape: Vec<usize>, phase: f64) -> Tensor<f64> {
    let volume: usize = shape.iter().product();
    let data = (0..volume).map(|i| (0.7 * i as f64 + phase).sin() * 0.8).collect();
    Tensor::from_vec(shape, data).unwrap()
}

fn grad_probe(shape: Vec<usize>, phase: f64) -> Tensor<f64> {
    let mut t = probe(shape, phase);
    t.requires_grad = true;
    t
}

/// Turns a matrix-valued node into a scalar through a fixed weighting, so the
/// full jacobian is exercised.
fn weighted_sum(tape: &mut Tape<f64>, out: Var) -> Var {
    let shape = tape.shape(out).to_vec();
    let volume: usize = shape.iter().product();
    let weights: Vec<f64> = (0..volume).map(|i| ((0.31 * i as f64).cos() + 1.3) * 0.5).collect();
    let w = tape.constant(shape, weights).unwrap();
    let prod = tape.mul(out, w).unwrap();
    tape.sum(prod).unwrap()
}

// ── Per-primitive gradients ─────────────────────────────────────────────

#[test]
fn fd_matmul() {
    fd_check(&[grad_probe(vec![3, 4], 0.1), grad_probe(vec![4, 2], 1.3)], &|t, v| {
        let y = t.matmul(v[0], v[1]).unwrap();
        weighted_sum(t, y)
    });
}

#[test]
fn fd_add_mul_scale() {
    fd_check(&[grad_probe(vec![2, 5], 0.4), grad_probe(vec![2, 5], 2.0)], &|t, v| {
        let s = t.add(v[0], v[1]).unwrap();
        let p = t.mul(s, v[0]).unwrap();
        let sc = t.scale(p, -1.7).unwrap();
        weighted_sum(t, sc)
    });
}

#[test]
fn fd_add_bias_and_transpose() {
    fd_check(&[grad_probe(vec![3, 4], 0.9), grad_probe(vec![4], 1.8)], &|t, v| {
        let y = t.add_bias(v[0], v[1]).unwrap();
        let yt = t.transpose(y).unwrap();
        weighted_sum(t, yt)
    });
}

#[test]
fn fd_concat_and_slice() {
    fd_check(&[grad_probe(vec![2, 3], 0.0), grad_probe(vec![3, 3], 0.5)], &|t, v| {
        let stacked = t.concat_rows(&[v[0], v[1], v[0]]).unwrap();
        let mid = t.slice_rows(stacked, 1, 4).unwrap();
        let cols = t.slice_cols(mid, 1, 2).unwrap();
        let wide = t.concat_cols(&[cols, cols]).unwrap();
        weighted_sum(t, wide)
    });
}

#[test]
fn fd_gather_rows() {
    fd_check(&[grad_probe(vec![4, 3], 0.7)], &|t, v| {
        let g = t.gather_rows(v[0], &[2, 0, 2, 3]).unwrap();
        weighted_sum(t, g)
    });
}

#[test]
fn fd_elem_max() {
    // Values are well separated so the FD step cannot cross an argmax tie.
    let a = Tensor::from_vec(vec![2, 2], vec![1.0, -3.0, 0.5, 2.0]).unwrap();
    let b = Tensor::from_vec(vec![2, 2], vec![-1.0, 4.0, 0.1, 2.5]).unwrap();
    let mut inputs = [a, b];
    for t in &mut inputs {
        t.requires_grad = true;
    }
    fd_check(&inputs, &|t, v| {
        let m = t.elem_max(&[v[0], v[1]]).unwrap();
        weighted_sum(t, m)
    });
}

#[test]
fn fd_layer_norm() {
    fd_check(
        &[grad_probe(vec![3, 6], 0.2), grad_probe(vec![6], 1.1), grad_probe(vec![6], 2.2)],
        &|t, v| {
            let y = t.layer_norm(v[0], v[1], v[2]).unwrap();
            weighted_sum(t, y)
        },
    );
}

#[test]
fn fd_mean_pool_rows() {
    fd_check(&[grad_probe(vec![5, 3], 0.6)], &|t, v| {
        let y = t.mean_pool_rows(v[0]).unwrap();
        weighted_sum(t, y)
    });
}

#[test]
fn fd_gelu_softmax_mask() {
    fd_check(&[grad_probe(vec![2, 4], 0.8)], &|t, v| {
        let g = t.gelu(v[0]).unwrap();
        let mask = vec![0.0, 0.0, -1e30, 0.0, 0.0, 0.0, 0.0, -1e30];
        let masked = t.mask_add(g, &mask).unwrap();
        let s = t.softmax_rows(masked).unwrap();
        weighted_sum(t, s)
    });
}

#[test]
fn fd_cross_entropy_plain_and_smoothed() {
    for smoothing in [0.0, 0.1] {
        fd_check(&[grad_probe(vec![4, 5], 1.9)], &|t, v| {
            // Row 2 is padding and must not receive gradient.
            t.cross_entropy(v[0], &[1, 4, 0, 3], 0, smoothing).unwrap().loss
        });
    }
}

#[test]
fn fd_attention_composite() {
    fd_check(
        &[grad_probe(vec![2, 3], 0.3), grad_probe(vec![4, 3], 1.0), grad_probe(vec![4, 2], 2.7)],
        &|t, v| {
            let (out, _) = t.attention(v[0], v[1], v[2], None).unwrap();
            weighted_sum(t, out)
        },
    );
}

// ── Frozen forward oracles ──────────────────────────────────────────────

#[test]
fn attention_single_key_returns_value_row() {
    let mut tape = Tape::<f64>::new();
    let q = tape.constant(vec![1, 3], vec![0.3, -2.0, 5.0]).unwrap();
    let k = tape.constant(vec![1, 3], vec![1.0, 1.0, -4.0]).unwrap();
    let v = tape.constant(vec![1, 2], vec![7.5, -2.25]).unwrap();
    let out = tape.scaled_dot_attention(q, k, v).unwrap();
    assert_eq!(tape.value(out), &[7.5, -2.25]);
}

#[test]
fn attention_identical_keys_average_values() {
    let mut tape = Tape::<f64>::new();
    let q = tape.constant(vec![1, 2], vec![0.9, -0.4]).unwrap();
    let k = tape.constant(vec![3, 2], vec![0.5, 1.0, 0.5, 1.0, 0.5, 1.0]).unwrap();
    let v = tape.constant(vec![3, 2], vec![3.0, 0.0, 0.0, 6.0, 3.0, 0.0]).unwrap();
    let out = tape.scaled_dot_attention(q, k, v).unwrap();
    for (got, want) in tape.value(out).iter().zip([2.0, 2.0]) {
        assert!((got - want).abs() < 1e-12);
    }
}

#[test]
fn attention_two_key_oracle() {
    // Hand-computed: scores [1/sqrt(2), 0], weights [e^s/(e^s+1), 1/(e^s+1)].
    let mut tape = Tape::<f64>::new();
    let q = tape.constant(vec![1, 2], vec![1.0, 0.0]).unwrap();
    let k = tape.constant(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let v = tape.constant(vec![2, 2], vec![2.0, 0.0, 0.0, 2.0]).unwrap();
    let (out, weights) = tape.attention(q, k, v, None).unwrap();
    let w = tape.value(weights);
    assert!((w[0] - 0.6697615493266569).abs() < 1e-12);
    assert!((w[1] - 0.3302384506733431).abs() < 1e-12);
    let o = tape.value(out);
    assert!((o[0] - 1.3395230986533138).abs() < 1e-12);
    assert!((o[1] - 0.6604769013466862).abs() < 1e-12);
}

#[test]
fn attention_rejects_bad_shapes() {
    let mut tape = Tape::<f64>::new();
    let q = tape.constant(vec![1, 3], vec![0.0; 3]).unwrap();
    let k = tape.constant(vec![2, 2], vec![0.0; 4]).unwrap();
    let v = tape.constant(vec![2, 2], vec![0.0; 4]).unwrap();
    assert!(matches!(
        tape.attention(q, k, v, None),
        Err(TensorError::ShapeMismatch { op: "attention", .. })
    ));
    let empty_k = tape.constant(vec![0, 3], vec![]).unwrap();
    let empty_v = tape.constant(vec![0, 2], vec![]).unwrap();
    assert!(matches!(
        tape.attention(q, empty_k, empty_v, None),
        Err(TensorError::EmptyInput { op: "attention" })
    ));
}

#[test]
fn gelu_reference_values() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(vec![1, 3], vec![0.0, 1.0, -1.0]).unwrap();
    let y = tape.gelu(x).unwrap();
    let out = tape.value(y);
    assert_eq!(out[0], 0.0);
    // Phi(1) computed from the erf oracle.
    assert!((out[1] - 0.8413447460685429).abs() < 1e-12);
}

#[test]
fn gelu_reflection_identity() {
    // gelu(x) - gelu(-x) = x because Phi(x) + Phi(-x) = 1.
    let xs: Vec<f64> = (-60..=60).map(|i| i as f64 * 0.1).collect();
    let mut tape = Tape::<f64>::new();
    let pos = tape.constant(vec![1, xs.len()], xs.clone()).unwrap();
    let neg = tape.scale(pos, -1.0).unwrap();
    let gp = tape.gelu(pos).unwrap();
    let gn = tape.gelu(neg).unwrap();
    for ((p, n), x) in tape.value(gp).iter().zip(tape.value(gn)).zip(&xs) {
        assert!((p - n - x).abs() < 1e-12, "x={x}");
    }
}

#[test]
fn softmax_reference_rows() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(vec![2, 2], vec![0.0, 0.0, 2.0f64.ln(), 0.0]).unwrap();
    let s = tape.softmax_rows(x).unwrap();
    let out = tape.value(s);
    assert!((out[0] - 0.5).abs() < 1e-15);
    assert!((out[1] - 0.5).abs() < 1e-15);
    assert!((out[2] - 2.0 / 3.0).abs() < 1e-12);
    assert!((out[3] - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn cross_entropy_reference_values() {
    let mut tape = Tape::<f64>::new();
    // Uniform logits over V classes: loss = ln V.
    let v = 7;
    let logits = tape.constant(vec![2, v], vec![0.4; 2 * v]).unwrap();
    let out = tape.cross_entropy(logits, &[3, 6], 0, 0.0).unwrap();
    assert!((tape.scalar_value(out.loss) - (v as f64).ln()).abs() < 1e-12);

    // V=2, logits [ln 3, 0], target 0: loss = -ln(3/4).
    let mut tape = Tape::<f64>::new();
    let logits = tape.constant(vec![1, 2], vec![3.0f64.ln(), 0.0]).unwrap();
    let out = tape.cross_entropy(logits, &[0], 9, 0.0).unwrap();
    assert!((tape.scalar_value(out.loss) - 0.2876820724517809).abs() < 1e-12);

    // Dominant true-class logit drives the loss to zero.
    let mut tape = Tape::<f64>::new();
    let logits = tape.constant(vec![1, 3], vec![80.0, 0.0, 0.0]).unwrap();
    let out = tape.cross_entropy(logits, &[0], 9, 0.0).unwrap();
    assert!(tape.scalar_value(out.loss) < 1e-12);
}

#[test]
fn cross_entropy_all_ignored_is_zero_with_flag() {
    let mut tape = Tape::<f64>::new();
    let logits = tape.constant(vec![2, 3], vec![0.5; 6]).unwrap();
    let out = tape.cross_entropy(logits, &[0, 0], 0, 0.0).unwrap();
    assert!(out.all_ignored());
    assert_eq!(tape.scalar_value(out.loss), 0.0);
}

#[test]
fn cross_entropy_rejects_out_of_range_target() {
    let mut tape = Tape::<f64>::new();
    let logits = tape.constant(vec![1, 3], vec![0.0; 3]).unwrap();
    assert!(matches!(
        tape.cross_entropy(logits, &[3], 0, 0.0),
        Err(TensorError::TokenOutOfRange { id: 3, vocab: 3 })
    ));
}

// ── Backward contracts ──────────────────────────────────────────────────

#[test]
fn backward_product_rule() {
    let mut x = Tensor::scalar(3.0);
    let mut y = Tensor::scalar(5.0);
    x.requires_grad = true;
    y.requires_grad = true;
    let mut tape = Tape::<f64>::new();
    let (vx, vy) = (tape.leaf(&x), tape.leaf(&y));
    let prod = tape.mul(vx, vy).unwrap();
    let loss = tape.sum(prod).unwrap();
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(vx).unwrap(), &[5.0]);
    assert_eq!(tape.grad(vy).unwrap(), &[3.0]);
}

#[test]
fn backward_gelu_at_zero_is_half() {
    let mut x = Tensor::zeros(vec![1, 4]);
    x.requires_grad = true;
    let mut tape = Tape::<f64>::new();
    let vx = tape.leaf(&x);
    let g = tape.gelu(vx).unwrap();
    let loss = tape.sum(g).unwrap();
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(vx).unwrap(), &[0.5; 4]);
}

#[test]
fn backward_fanout_adds_branch_gradients() {
    // loss = sum(x*a) + sum(x*b) so grad(x) must equal a + b exactly.
    let x = grad_probe(vec![2, 3], 0.0);
    let a = probe(vec![2, 3], 1.0);
    let b = probe(vec![2, 3], 2.0);
    let mut tape = Tape::<f64>::new();
    let vx = tape.leaf(&x);
    let va = tape.leaf(&a);
    let vb = tape.leaf(&b);
    let fa = tape.mul(vx, va).unwrap();
    let fb = tape.mul(vx, vb).unwrap();
    let sa = tape.sum(fa).unwrap();
    let sb = tape.sum(fb).unwrap();
    let loss = tape.add(sa, sb).unwrap();
    tape.backward(loss).unwrap();
    let g = tape.grad(vx).unwrap();
    for i in 0..g.len() {
        assert_eq!(g[i], a.data()[i] + b.data()[i]);
    }
}

#[test]
fn backward_requires_scalar_loss() {
    let x = grad_probe(vec![2, 2], 0.0);
    let mut tape = Tape::<f64>::new();
    let vx = tape.leaf(&x);
    assert!(matches!(tape.backward(vx), Err(TensorError::NonScalarLoss { .. })));
}

#[test]
fn backward_twice_is_a_state_error() {
    let x = grad_probe(vec![1, 1], 0.0);
    let mut tape = Tape::<f64>::new();
    let vx = tape.leaf(&x);
    let loss = tape.sum(vx).unwrap();
    tape.backward(loss).unwrap();
    assert_eq!(tape.backward(loss), Err(TensorError::TapeConsumed));
}

#[test]
fn constants_receive_no_gradient() {
    let x = grad_probe(vec![2, 2], 0.3);
    let c = probe(vec![2, 2], 0.9);
    let mut tape = Tape::<f64>::new();
    let vx = tape.leaf(&x);
    let vc = tape.leaf(&c);
    let p = tape.mul(vx, vc).unwrap();
    let loss = tape.sum(p).unwrap();
    tape.backward(loss).unwrap();
    assert!(tape.grad(vc).is_none());
    assert!(tape.grad(vx).is_some());
}

// ── Properties ──────────────────────────────────────────────────────────

mod properties {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(rows in proptest::collection::vec(
            proptest::collection::vec(-30.0f64..30.0, 1..9), 1..6)
        ) {
            let m = rows[0].len();
            prop_assume!(rows.iter().all(|r| r.len() == m));
            let n = rows.len();
            let mut tape = Tape::<f64>::new();
            let x = tape.constant(vec![n, m], rows.concat()).unwrap();
            let s = tape.softmax_rows(x).unwrap();
            let out = tape.value(s);
            for r in 0..n {
                let sum: f64 = out[r * m..(r + 1) * m].iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-9);
                prop_assert!(out[r * m..(r + 1) * m].iter().all(|&p| p >= 0.0));
            }
        }

        #[test]
        fn softmax_shift_invariance(row in proptest::collection::vec(-20.0f64..20.0, 1..8),
                                    shift in -50.0f64..50.0) {
            let m = row.len();
            let mut tape = Tape::<f64>::new();
            let x = tape.constant(vec![1, m], row.clone()).unwrap();
            let shifted_data: Vec<f64> = row.iter().map(|v| v + shift).collect();
            let y = tape.constant(vec![1, m], shifted_data).unwrap();
            let sx = tape.softmax_rows(x).unwrap();
            let sy = tape.softmax_rows(y).unwrap();
            for (a, b) in tape.value(sx).iter().zip(tape.value(sy)) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
