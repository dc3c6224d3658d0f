use super::*;
use crate::segment::plan_layout;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn toy_config(mode: EncoderMode) -> EncoderConfig {
    EncoderConfig {
        input_dim: 5,
        model_dim: 6,
        inter_dim: 4,
        intra_dim: 3,
        widths: vec![4, 6, 8],
        stride: 2,
        max_positions: 16,
        mode,
    }
}

fn toy_params(mode: EncoderMode, seed: u64) -> EncoderParams<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    EncoderParams::new(toy_config(mode), &mut rng)
}

fn toy_sequence(frames: usize, dim: usize, seed: u64) -> FeatureSequence {
    let data: Vec<f32> =
        (0..frames * dim).map(|i| ((i as f32 * 0.61 + seed as f32).sin()) * 0.9).collect();
    FeatureSequence::new("toy", frames, dim, data).unwrap()
}

fn constant_matrix(tape: &mut Tape<f64>, rows: usize, cols: usize, phase: f64) -> Var {
    let data: Vec<f64> = (0..rows * cols).map(|i| (i as f64 * 0.43 + phase).cos()).collect();
    tape.constant(vec![rows, cols], data).unwrap()
}

// ── Reference implementations (plain f64 loops, no tape) ────────────────

fn matmul_ref(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (m, k, n) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; n]; m];
    for i in 0..m {
        for p in 0..k {
            for j in 0..n {
                out[i][j] += a[i][p] * b[p][j];
            }
        }
    }
    out
}

fn softmax_ref(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

fn self_attention_ref(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = x[0].len() as f64;
    let mut out = vec![vec![0.0; x[0].len()]; x.len()];
    for i in 0..x.len() {
        let scores: Vec<f64> = x
            .iter()
            .map(|row| {
                row.iter().zip(&x[i]).map(|(a, b)| a * b).sum::<f64>() / d.sqrt()
            })
            .collect();
        let weights = softmax_ref(&scores);
        for (j, w) in weights.iter().enumerate() {
            for c in 0..x[0].len() {
                out[i][c] += w * x[j][c];
            }
        }
    }
    out
}

fn gelu_ref(x: f64) -> f64 {
    x * 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn rows_of(tensor: &Tensor<f64>) -> Vec<Vec<f64>> {
    (0..tensor.rows()).map(|r| tensor.row(r).to_vec()).collect()
}

fn ffn_ref(x: &[Vec<f64>], w1: &Tensor<f64>, b1: &Tensor<f64>, w2: &Tensor<f64>, b2: &Tensor<f64>) -> Vec<Vec<f64>> {
    let h = matmul_ref(x, &rows_of(w1));
    let act: Vec<Vec<f64>> = h
        .iter()
        .map(|row| row.iter().zip(b1.data()).map(|(v, b)| gelu_ref(v + b)).collect())
        .collect();
    let out = matmul_ref(&act, &rows_of(w2));
    out.iter()
        .map(|row| row.iter().zip(b2.data()).map(|(v, b)| v + b).collect())
        .collect()
}

// ── Positional encoding ─────────────────────────────────────────────────

#[test]
fn zero_pos_table_is_identity() {
    let params = toy_params(EncoderMode::Sequential, 1);
    let mut tape = Tape::new();
    let mut binding = Vec::new();
    let vars = params.register(&mut tape, &mut binding);
    let a = constant_matrix(&mut tape, 7, 6, 0.0);
    let b = constant_matrix(&mut tape, 7, 6, 1.0);
    let out = shared_positional_encode(&mut tape, &[a, b], vars.pos_table, 7).unwrap();
    assert_eq!(tape.value(out[0]), tape.value(a));
    assert_eq!(tape.value(out[1]), tape.value(b));
}

#[test]
fn positional_rows_are_shared_across_scales() {
    let mut params = toy_params(EncoderMode::Sequential, 2);
    for (i, v) in params.pos_table.data_mut().iter_mut().enumerate() {
        *v = (i as f64) * 0.01;
    }
    let mut tape = Tape::new();
    let mut binding = Vec::new();
    let vars = params.register(&mut tape, &mut binding);
    let zero_a = tape.constant(vec![3, 6], vec![0.0; 18]).unwrap();
    let zero_b = tape.constant(vec![3, 6], vec![0.0; 18]).unwrap();
    let out = shared_positional_encode(&mut tape, &[zero_a, zero_b], vars.pos_table, 3).unwrap();
    // Both scales read the identical table rows 0..3.
    assert_eq!(tape.value(out[0]), tape.value(out[1]));
    assert_eq!(tape.value(out[0]), &params.pos_table.data()[0..18]);
}

#[test]
fn capacity_error_when_sequence_outgrows_table() {
    let params = toy_params(EncoderMode::Single, 3);
    let mut tape = Tape::new();
    let mut binding = Vec::new();
    let vars = params.register(&mut tape, &mut binding);
    let x = constant_matrix(&mut tape, 17, 6, 0.2);
    let err = shared_positional_encode(&mut tape, &[x], vars.pos_table, 17).unwrap_err();
    assert!(matches!(err, EncoderError::Capacity { have: 17, max: 16 }));
}

// ── Inter-scale aggregation ─────────────────────────────────────────────

#[test]
fn single_scale_neighborhood_reduces_to_ffn_of_projection() {
    // M = 1: every neighborhood is just its pivot, single-key attention is
    // the identity on values, so the stage equals FFN(proj(x)).
    let mut cfg = toy_config(EncoderMode::Sequential);
    cfg.widths = vec![4];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = EncoderParams::<f64>::new(cfg, &mut rng);
    let layout = plan_layout(12, &[4], 2).unwrap();

    let mut tape = Tape::new();
    let mut binding = Vec::new();
    let vars = params.register(&mut tape, &mut binding);
    let x = constant_matrix(&mut tape, layout.pivot_count, 6, 0.7);
    let neighborhoods: Vec<_> =
        (0..layout.pivot_count).map(|k| layout.surrounding_neighborhood(k).unwrap()).collect();
    let got = inter_scale_aggregate(&mut tape, &vars, &[x], &neighborhoods, None).unwrap();

    let projected = tape.matmul(x, vars.inter_proj).unwrap();
    let want = feed_forward(
        &mut tape,
        projected,
        vars.inter_fc1_weight,
        vars.inter_fc1_bias,
        vars.inter_fc2_weight,
        vars.inter_fc2_bias,
    )
    .unwrap();
    for (a, b) in tape.value(got).iter().zip(tape.value(want)) {
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn identical_rows_make_context_independent_of_attention() {
    // Every member projects to the same vector v, so the attended context is
    // v and each output row is FFN(v).
    let params = toy_params(EncoderMode::Sequential, 6);
    let layout = plan_layout(20, &[4, 6, 8], 2).unwrap();
    let l = layout.pivot_count;
    let mut tape = Tape::new();
    let mut binding = Vec::new();
    let vars = params.register(&mut tape, &mut binding);
    let row: Vec<f64> = (0..6).map(|i| 0.3 * i as f64 - 0.8).collect();
    let feats: Vec<Var> = (0..3)
        .map(|_| {
            let data: Vec<f64> = (0..l).flat_map(|_| row.clone()).collect();
            tape.constant(vec![l, 6], data).unwrap()
        })
        .collect();
    let neighborhoods: Vec<_> =
        (0..l).map(|k| layout.surrounding_neighborhood(k).unwrap()).collect();
    let got = inter_scale_aggregate(&mut tape, &vars, &feats, &neighborhoods, None).unwrap();

    let v = matmul_ref(&[row], &rows_of(&params.inter_proj));
    let want = ffn_ref(
        &v,
        &params.inter_fc1_weight,
        &params.inter_fc1_bias,
        &params.inter_fc2_weight,
        &params.inter_fc2_bias,
    );
    for r in 0..l {
        for (a, b) in tape.value(got)[r * 6..(r + 1) * 6].iter().zip(&want[0]) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}

#[test]
fn zero_output_weight_leaves_only_bias() {
    let mut params = toy_params(EncoderMode::Sequential, 7);
    for v in params.inter_fc2_weight.data_mut() {
        *v = 0.0;
    }
    for (i, v) in params.inter_fc2_bias.data_mut().iter_mut().enumerate() {
        *v = i as f64;
    }
    let layout = plan_layout(20, &[4, 6, 8], 2).unwrap();
    let l = layout.pivot_count;
    let mut tape = Tape::new();
    let mut binding = Vec::new();
    let vars = params.register(&mut tape, &mut binding);
    let feats: Vec<Var> = (0..3).map(|s| constant_matrix(&mut tape, l, 6, s as f64)).collect();
    let neighborhoods: Vec<_> =
        (0..l).map(|k| layout.surrounding_neighborhood(k).unwrap()).collect();
    let out = inter_scale_aggregate(&mut tape, &vars, &feats, &neighborhoods, None).unwrap();
    for r in 0..l {
        assert_eq!(tape.value(out)[r * 6..(r + 1) * 6], [0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
    }
}

#[test]
fn locality_outside_the_neighborhood_is_bit_exact() {
    // Perturbing a segment that is not a member of pivot 6's neighborhood
    // must leave row 6 of the stage output bit-identical.
    let params = toy_params(EncoderMode::Sequential, 8);
    let layout = plan_layout(20, &[4, 6, 8], 2).unwrap();
    let l = layout.pivot_count;
    let pivot = 6;
    let members = layout.surrounding_neighborhood(pivot).unwrap().members;
    // (1, 0) is outside: 0 * 2 + 6 = 6 < pivot start 12.
    assert!(!members.contains(&layout.segment(1, 0)));

    let run = |perturb: bool| -> Vec<f64> {
        let mut tape = Tape::new();
        let mut binding = Vec::new();
        let vars = params.register(&mut tape, &mut binding);
        let feats: Vec<Var> = (0..3)
            .map(|s| {
                let mut data: Vec<f64> =
                    (0..l * 6).map(|i| ((i + s * 100) as f64 * 0.17).sin()).collect();
                if perturb && s == 1 {
                    data[3] += 17.5;
                }
                tape.constant(vec![l, 6], data).unwrap()
            })
            .collect();
        let neighborhoods: Vec<_> =
            (0..l).map(|k| layout.surrounding_neighborhood(k).unwrap()).collect();
        let out = inter_scale_aggregate(&mut tape, &vars, &feats, &neighborhoods, None).unwrap();
        tape.value(out)[pivot * 6..(pivot + 1) * 6].to_vec()
    };
    let base = run(false);
    let perturbed = run(true);
    assert_eq!(base, perturbed);
}

#[test]
fn permuting_non_pivot_members_leaves_context_unchanged() {
    let params = toy_params(EncoderMode::Sequential, 9);
    let layout = plan_layout(20, &[4, 6, 8], 2).unwrap();
    let l = layout.pivot_count;
    let mut tape = Tape::new();
    let mut binding = Vec::new();
    let vars = params.register(&mut tape, &mut binding);
    let feats: Vec<Var> = (0..3).map(|s| constant_matrix(&mut tape, l, 6, 2.0 + s as f64)).collect();

    let ordered: Vec<_> = (0..l).map(|k| layout.surrounding_neighborhood(k).unwrap()).collect();
    let mut shuffled = ordered.clone();
    for n in &mut shuffled {
        n.members[1..].reverse();
    }
    let a = inter_scale_aggregate(&mut tape, &vars, &feats, &ordered, None).unwrap();
    let b = inter_scale_aggregate(&mut tape, &vars, &feats, &shuffled, None).unwrap();
    for (x, y) in tape.value(a).iter().zip(tape.value(b)) {
        assert!((x - y).abs() <= 1e-12);
    }
}

#[test]
fn inter_rejects_extended_neighborhoods() {
    let params = toy_params(EncoderMode::Sequential, 10);
    let layout = plan_layout(20, &[4, 6, 8], 2).unwrap();
    let l = layout.pivot_count;
    let mut tape = Tape::new();
    let mut binding = Vec::new();
    let vars = params.register(&mut tape, &mut binding);
    let feats: Vec<Var> = (0..3).map(|s| constant_matrix(&mut tape, l, 6, s as f64)).collect();
    let wrong: Vec<_> =
        (0..l).map(|k| layout.extended_surrounding_neighborhood(k).unwrap()).collect();
    assert!(matches!(
        inter_scale_aggregate(&mut tape, &vars, &feats, &wrong, None),
        Err(EncoderError::NeighborhoodShape { pivot: 0 })
    ));
}

// ── Intra-scale aggregation ─────────────────────────────────────────────

#[test]
fn intra_single_position_attention_is_identity_on_values() {
    let params = toy_params(EncoderMode::Single, 11);
    let mut tape = Tape::new();
    let mut binding = Vec::new();
    let vars = params.register(&mut tape, &mut binding);
    let h = constant_matrix(&mut tape, 1, 6, 0.4);
    let got = intra_scale_aggregate(&mut tape, &vars, h).unwrap();

    // Reference: e = proj(h), then the feed-forward pair.
    let e = matmul_ref(&vec![tape.value(h).to_vec()], &rows_of(&params.intra_proj));
    let want = ffn_ref(
        &e,
        &params.intra_fc1_weight,
        &params.intra_fc1_bias,
        &params.intra_fc2_weight,
        &params.intra_fc2_bias,
    );
    for (a, b) in tape.value(got).iter().zip(&want[0]) {
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn intra_equal_rows_give_equal_outputs() {
    let params = toy_params(EncoderMode::Single, 12);
    let mut tape = Tape::new();
    let mut binding = Vec::new();
    let vars = params.register(&mut tape, &mut binding);
    let row: Vec<f64> = (0..6).map(|i| (i as f64).sqrt() - 1.0).collect();
    let data: Vec<f64> = (0..4).flat_map(|_| row.clone()).collect();
    let h = tape.constant(vec![4, 6], data).unwrap();
    let out = intra_scale_aggregate(&mut tape, &vars, h).unwrap();
    let first = tape.value(out)[0..6].to_vec();
    for r in 1..4 {
        for (a, b) in tape.value(out)[r * 6..(r + 1) * 6].iter().zip(&first) {
            assert!((a - b).abs() <= 1e-13);
        }
    }
}

#[test]
fn intra_matches_dense_oracle() {
    // L=3, D = D'' = 2, random input, against a scripted dense computation.
    let cfg = EncoderConfig {
        input_dim: 2,
        model_dim: 2,
        inter_dim: 2,
        intra_dim: 2,
        widths: vec![4],
        stride: 2,
        max_positions: 8,
        mode: EncoderMode::Single,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let params = EncoderParams::<f64>::new(cfg, &mut rng);
    let mut tape = Tape::new();
    let mut binding = Vec::new();
    let vars = params.register(&mut tape, &mut binding);
    let h_rows = vec![vec![0.3, -1.2], vec![0.9, 0.1], vec![-0.5, 0.7]];
    let h = tape.constant(vec![3, 2], h_rows.concat()).unwrap();
    let got = intra_scale_aggregate(&mut tape, &vars, h).unwrap();

    let projected = matmul_ref(&h_rows, &rows_of(&params.intra_proj));
    let attended = self_attention_ref(&projected);
    let want = ffn_ref(
        &attended,
        &params.intra_fc1_weight,
        &params.intra_fc1_bias,
        &params.intra_fc2_weight,
        &params.intra_fc2_bias,
    );
    for r in 0..3 {
        for c in 0..2 {
            assert!((tape.value(got)[r * 2 + c] - want[r][c]).abs() < 1e-12);
        }
    }
}

// ── Joint aggregation ───────────────────────────────────────────────────

#[test]
fn joint_single_member_keeps_projected_pivot() {
    let mut cfg = toy_config(EncoderMode::Joint);
    cfg.widths = vec![4];
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let params = EncoderParams::<f64>::new(cfg, &mut rng);
    let layout = plan_layout(4, &[4], 2).unwrap();
    assert_eq!(layout.pivot_count, 1);

    let mut tape = Tape::new();
    let mut binding = Vec::new();
    let vars = params.register(&mut tape, &mut binding);
    let x = constant_matrix(&mut tape, 1, 6, 1.4);
    let neighborhoods = vec![layout.extended_surrounding_neighborhood(0).unwrap()];
    let got = joint_aggregate(&mut tape, &vars, &[x], &neighborhoods, None).unwrap();

    let projected = matmul_ref(&vec![tape.value(x).to_vec()], &rows_of(&params.joint_proj));
    let want = ffn_ref(
        &projected,
        &params.joint_fc1_weight,
        &params.joint_fc1_bias,
        &params.joint_fc2_weight,
        &params.joint_fc2_bias,
    );
    for (a, b) in tape.value(got).iter().zip(&want[0]) {
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn joint_matches_dense_oracle_on_pivot_rows() {
    // L=2, M=2: needs the full self-attention over each extended
    // neighborhood with the pivot output row selected.
    let cfg = EncoderConfig {
        input_dim: 2,
        model_dim: 3,
        inter_dim: 2,
        intra_dim: 2,
        widths: vec![4, 6],
        stride: 4,
        max_positions: 8,
        mode: EncoderMode::Joint,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let params = EncoderParams::<f64>::new(cfg, &mut rng);
    let layout = plan_layout(8, &[4, 6], 4).unwrap();
    assert_eq!(layout.pivot_count, 2);

    let mut tape = Tape::new();
    let mut binding = Vec::new();
    let vars = params.register(&mut tape, &mut binding);
    let rows0 = vec![vec![0.2, -0.4, 0.6], vec![1.0, 0.3, -0.2]];
    let rows1 = vec![vec![-0.7, 0.5, 0.1], vec![0.4, 0.4, 0.9]];
    let x0 = tape.constant(vec![2, 3], rows0.concat()).unwrap();
    let x1 = tape.constant(vec![2, 3], rows1.concat()).unwrap();
    let neighborhoods: Vec<_> =
        (0..2).map(|k| layout.extended_surrounding_neighborhood(k).unwrap()).collect();
    let got = joint_aggregate(&mut tape, &vars, &[x0, x1], &neighborhoods, None).unwrap();

    let all_rows = [rows0, rows1];
    let mut contexts = Vec::new();
    for n in &neighborhoods {
        let members: Vec<Vec<f64>> = n
            .members
            .iter()
            .map(|m| {
                matmul_ref(&vec![all_rows[m.scale][m.index].clone()], &rows_of(&params.joint_proj))
                    .remove(0)
            })
            .collect();
        contexts.push(self_attention_ref(&members)[0].clone());
    }
    let want = ffn_ref(
        &contexts,
        &params.joint_fc1_weight,
        &params.joint_fc1_bias,
        &params.joint_fc2_weight,
        &params.joint_fc2_bias,
    );
    for r in 0..2 {
        for c in 0..3 {
            assert!((tape.value(got)[r * 3 + c] - want[r][c]).abs() < 1e-12);
        }
    }
}

#[test]
fn joint_rejects_non_extended_neighborhoods() {
    let params = toy_params(EncoderMode::Joint, 16);
    let layout = plan_layout(20, &[4, 6, 8], 2).unwrap();
    let l = layout.pivot_count;
    let mut tape = Tape::new();
    let mut binding = Vec::new();
    let vars = params.register(&mut tape, &mut binding);
    let feats: Vec<Var> = (0..3).map(|s| constant_matrix(&mut tape, l, 6, s as f64)).collect();
    let wrong: Vec<_> = (0..l).map(|k| layout.surrounding_neighborhood(k).unwrap()).collect();
    assert!(matches!(
        joint_aggregate(&mut tape, &vars, &feats, &wrong, None),
        Err(EncoderError::NeighborhoodShape { pivot: 0 })
    ));
}

// ── Whole-encoder dispatch ──────────────────────────────────────────────

#[test]
fn every_mode_yields_l_by_d_memory() {
    let seq = toy_sequence(20, 5, 3);
    for mode in EncoderMode::ALL {
        let params = toy_params(mode, 20);
        let layout = params.cfg.plan(seq.frames()).unwrap();
        let encoded = encode(&params, &seq, &layout, false).unwrap();
        assert_eq!(encoded.memory.shape(), &[9, 6], "mode {}", mode.name());
        assert_eq!(encoded.memory.rows(), layout.pivot_count);
    }
}

#[test]
fn pool_mode_with_identical_scales_equals_single_mode() {
    // Constant frames pool to the same feature at every scale, so the
    // position-wise max is the scale-0 sequence and pool == single.
    let frames: Vec<f32> = (0..20).flat_map(|_| vec![0.3f32, -1.0, 0.5, 2.0, -0.25]).collect();
    let seq = FeatureSequence::new("const", 20, 5, frames).unwrap();
    let pool = toy_params(EncoderMode::Pool, 21);
    let mut single = pool.clone();
    single.cfg.mode = EncoderMode::Single;
    let layout = pool.cfg.plan(seq.frames()).unwrap();
    let a = encode(&pool, &seq, &layout, false).unwrap();
    let b = encode(&single, &seq, &layout, false).unwrap();
    assert_eq!(a.memory.data(), b.memory.data());
}

#[test]
fn pool_fusion_is_position_wise() {
    // The fused feature at position k only sees the M features at k:
    // perturbing another position of some scale leaves row k unchanged.
    let mut tape = Tape::<f64>::new();
    let build = |tape: &mut Tape<f64>, perturb: bool| {
        let parts: Vec<Var> = (0..3)
            .map(|s| {
                let mut data: Vec<f64> = (0..5 * 4).map(|i| ((i + s * 31) as f64 * 0.7).sin()).collect();
                if perturb && s == 2 {
                    data[2 * 4 + 1] += 9.0;
                }
                tape.constant(vec![5, 4], data).unwrap()
            })
            .collect();
        tape.elem_max(&parts).unwrap()
    };
    let base = build(&mut tape, false);
    let perturbed = build(&mut tape, true);
    for k in [0usize, 1, 3, 4] {
        assert_eq!(tape.value(base)[k * 4..(k + 1) * 4], tape.value(perturbed)[k * 4..(k + 1) * 4]);
    }
    assert_ne!(tape.value(base)[8..12], tape.value(perturbed)[8..12]);
}

#[test]
fn attention_trace_rows_sum_to_one() {
    let seq = toy_sequence(20, 5, 5);
    for mode in [EncoderMode::Sequential, EncoderMode::Joint, EncoderMode::Nonrestrictive] {
        let params = toy_params(mode, 22);
        let layout = params.cfg.plan(seq.frames()).unwrap();
        let encoded = encode(&params, &seq, &layout, true).unwrap();
        let trace = encoded.attention_trace.expect("trace requested");
        assert_eq!(trace.len(), layout.pivot_count);
        for pivot in &trace {
            let sum: f64 = pivot.members.iter().map(|(_, w)| w).sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert_eq!(pivot.members[0].0.scale, 0);
            assert_eq!(pivot.members[0].0.index, pivot.pivot);
        }
    }
}

#[test]
fn single_mode_ignores_larger_scales() {
    // Single mode reads only scale 0; changing larger widths in the layout
    // cannot affect it as long as scale-0 geometry is unchanged.
    let seq = toy_sequence(20, 5, 6);
    let params_a = toy_params(EncoderMode::Single, 23);
    let mut params_b = params_a.clone();
    params_b.cfg.widths = vec![4, 10, 12];
    let layout_a = params_a.cfg.plan(seq.frames()).unwrap();
    let layout_b = params_b.cfg.plan(seq.frames()).unwrap();
    let a = encode(&params_a, &seq, &layout_a, false).unwrap();
    let b = encode(&params_b, &seq, &layout_b, false).unwrap();
    assert_eq!(a.memory.data(), b.memory.data());
}

#[test]
fn encode_rejects_wrong_feature_dim() {
    let params = toy_params(EncoderMode::Single, 24);
    let seq = toy_sequence(20, 4, 7);
    let layout = params.cfg.plan(20).unwrap();
    assert!(matches!(
        encode(&params, &seq, &layout, false),
        Err(EncoderError::Feature(FeatureError::DimMismatch { expected: 5, got: 4 }))
    ));
}
