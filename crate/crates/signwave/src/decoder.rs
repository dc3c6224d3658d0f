//! Transformer decoder over the encoder memory: teacher-forced training
//! logits plus greedy and length-normalized beam inference.
//!
//! Pre-norm residual blocks, learned positional embeddings, multi-head
//! attention with H heads. Tie-breaking during decoding always picks the
//! lowest token id so results are platform-deterministic.

use crate::corpus::{BOS, EOS, PAD};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, TensorError, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum DecoderError {
    #[error("sequence of {got} positions exceeds decoder capacity {max}")]
    TooLong { got: usize, max: usize },
    #[error("model dim {dim} is not divisible by {heads} heads")]
    BadHeadSplit { dim: usize, heads: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub vocab_size: usize,
    pub model_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    /// Positional capacity: longest teacher-forcing input (bos + tokens).
    pub max_len: usize,
}

/// Generated token ids (content only: no bos, no eos, no padding).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
}

impl TokenSequence {
    pub fn new(ids: Vec<u32>) -> Self {
        TokenSequence { ids }
    }

    /// Checks the storage invariants: at most one eos and pad only as a
    /// suffix.
    pub fn well_formed(&self) -> bool {
        let eos_count = self.ids.iter().filter(|&&t| t == EOS).count();
        let first_pad = self.ids.iter().position(|&t| t == PAD);
        let pad_suffix = match first_pad {
            Some(p) => self.ids[p..].iter().all(|&t| t == PAD),
            None => true,
        };
        eos_count <= 1 && pad_suffix
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

// ── Parameters ──────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct AttentionBlockParams<T: Scalar> {
    pub query_w: Tensor<T>,
    pub query_b: Tensor<T>,
    pub key_w: Tensor<T>,
    pub key_b: Tensor<T>,
    pub value_w: Tensor<T>,
    pub value_b: Tensor<T>,
    pub out_w: Tensor<T>,
    pub out_b: Tensor<T>,
}

impl<T: Scalar> AttentionBlockParams<T> {
    fn new<R: Rng>(dim: usize, rng: &mut R) -> Self {
        AttentionBlockParams {
            query_w: Tensor::fan_in_init(dim, vec![dim, dim], rng),
            query_b: Tensor::trainable_zeros(vec![dim]),
            key_w: Tensor::fan_in_init(dim, vec![dim, dim], rng),
            key_b: Tensor::trainable_zeros(vec![dim]),
            value_w: Tensor::fan_in_init(dim, vec![dim, dim], rng),
            value_b: Tensor::trainable_zeros(vec![dim]),
            out_w: Tensor::fan_in_init(dim, vec![dim, dim], rng),
            out_b: Tensor::trainable_zeros(vec![dim]),
        }
    }

    fn visit(&self, prefix: &str, f: &mut impl FnMut(&str, &Tensor<T>)) {
        f(&format!("{prefix}.query_w"), &self.query_w);
        f(&format!("{prefix}.query_b"), &self.query_b);
        f(&format!("{prefix}.key_w"), &self.key_w);
        f(&format!("{prefix}.key_b"), &self.key_b);
        f(&format!("{prefix}.value_w"), &self.value_w);
        f(&format!("{prefix}.value_b"), &self.value_b);
        f(&format!("{prefix}.out_w"), &self.out_w);
        f(&format!("{prefix}.out_b"), &self.out_b);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(&str, &mut Tensor<T>)) {
        f(&format!("{prefix}.query_w"), &mut self.query_w);
        f(&format!("{prefix}.query_b"), &mut self.query_b);
        f(&format!("{prefix}.key_w"), &mut self.key_w);
        f(&format!("{prefix}.key_b"), &mut self.key_b);
        f(&format!("{prefix}.value_w"), &mut self.value_w);
        f(&format!("{prefix}.value_b"), &mut self.value_b);
        f(&format!("{prefix}.out_w"), &mut self.out_w);
        f(&format!("{prefix}.out_b"), &mut self.out_b);
    }
}

#[derive(Debug, Clone)]
pub struct DecoderLayerParams<T: Scalar> {
    pub self_norm_gain: Tensor<T>,
    pub self_norm_bias: Tensor<T>,
    pub self_attn: AttentionBlockParams<T>,
    pub cross_norm_gain: Tensor<T>,
    pub cross_norm_bias: Tensor<T>,
    pub cross_attn: AttentionBlockParams<T>,
    pub ffn_norm_gain: Tensor<T>,
    pub ffn_norm_bias: Tensor<T>,
    pub ffn_w1: Tensor<T>,
    pub ffn_b1: Tensor<T>,
    pub ffn_w2: Tensor<T>,
    pub ffn_b2: Tensor<T>,
}

fn ones<T: Scalar>(len: usize) -> Tensor<T> {
    let mut t = Tensor::from_vec(vec![len], vec![T::one(); len]).expect("shape consistent");
    t.requires_grad = true;
    t
}

impl<T: Scalar> DecoderLayerParams<T> {
    fn new<R: Rng>(dim: usize, ffn_dim: usize, rng: &mut R) -> Self {
        DecoderLayerParams {
            self_norm_gain: ones(dim),
            self_norm_bias: Tensor::trainable_zeros(vec![dim]),
            self_attn: AttentionBlockParams::new(dim, rng),
            cross_norm_gain: ones(dim),
            cross_norm_bias: Tensor::trainable_zeros(vec![dim]),
            cross_attn: AttentionBlockParams::new(dim, rng),
            ffn_norm_gain: ones(dim),
            ffn_norm_bias: Tensor::trainable_zeros(vec![dim]),
            ffn_w1: Tensor::fan_in_init(dim, vec![dim, ffn_dim], rng),
            ffn_b1: Tensor::trainable_zeros(vec![ffn_dim]),
            ffn_w2: Tensor::fan_in_init(ffn_dim, vec![ffn_dim, dim], rng),
            ffn_b2: Tensor::trainable_zeros(vec![dim]),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DecoderParams<T: Scalar> {
    pub cfg: DecoderConfig,
    pub embed: Tensor<T>,
    pub pos_table: Tensor<T>,
    pub layers: Vec<DecoderLayerParams<T>>,
    pub final_norm_gain: Tensor<T>,
    pub final_norm_bias: Tensor<T>,
    pub out_weight: Tensor<T>,
    pub out_bias: Tensor<T>,
}

impl<T: Scalar> DecoderParams<T> {
    pub fn new<R: Rng>(cfg: DecoderConfig, rng: &mut R) -> Result<Self, DecoderError> {
        if cfg.model_dim % cfg.heads != 0 {
            return Err(DecoderError::BadHeadSplit { dim: cfg.model_dim, heads: cfg.heads });
        }
        let d = cfg.model_dim;
        Ok(DecoderParams {
            embed: Tensor::fan_in_init(d, vec![cfg.vocab_size, d], rng),
            pos_table: Tensor::trainable_zeros(vec![cfg.max_len, d]),
            layers: (0..cfg.layers).map(|_| DecoderLayerParams::new(d, cfg.ffn_dim, rng)).collect(),
            final_norm_gain: ones(d),
            final_norm_bias: Tensor::trainable_zeros(vec![d]),
            out_weight: Tensor::fan_in_init(d, vec![d, cfg.vocab_size], rng),
            out_bias: Tensor::trainable_zeros(vec![cfg.vocab_size]),
            cfg,
        })
    }

    pub fn visit(&self, f: &mut impl FnMut(&str, &Tensor<T>)) {
        f("decoder.embed", &self.embed);
        f("decoder.pos_table", &self.pos_table);
        for (i, layer) in self.layers.iter().enumerate() {
            let p = format!("decoder.layers.{i}");
            f(&format!("{p}.self_norm_gain"), &layer.self_norm_gain);
            f(&format!("{p}.self_norm_bias"), &layer.self_norm_bias);
            layer.self_attn.visit(&format!("{p}.self_attn"), f);
            f(&format!("{p}.cross_norm_gain"), &layer.cross_norm_gain);
            f(&format!("{p}.cross_norm_bias"), &layer.cross_norm_bias);
            layer.cross_attn.visit(&format!("{p}.cross_attn"), f);
            f(&format!("{p}.ffn_norm_gain"), &layer.ffn_norm_gain);
            f(&format!("{p}.ffn_norm_bias"), &layer.ffn_norm_bias);
            f(&format!("{p}.ffn_w1"), &layer.ffn_w1);
            f(&format!("{p}.ffn_b1"), &layer.ffn_b1);
            f(&format!("{p}.ffn_w2"), &layer.ffn_w2);
            f(&format!("{p}.ffn_b2"), &layer.ffn_b2);
        }
        f("decoder.final_norm_gain", &self.final_norm_gain);
        f("decoder.final_norm_bias", &self.final_norm_bias);
        f("decoder.out_weight", &self.out_weight);
        f("decoder.out_bias", &self.out_bias);
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&str, &mut Tensor<T>)) {
        f("decoder.embed", &mut self.embed);
        f("decoder.pos_table", &mut self.pos_table);
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let p = format!("decoder.layers.{i}");
            f(&format!("{p}.self_norm_gain"), &mut layer.self_norm_gain);
            f(&format!("{p}.self_norm_bias"), &mut layer.self_norm_bias);
            layer.self_attn.visit_mut(&format!("{p}.self_attn"), f);
            f(&format!("{p}.cross_norm_gain"), &mut layer.cross_norm_gain);
            f(&format!("{p}.cross_norm_bias"), &mut layer.cross_norm_bias);
            layer.cross_attn.visit_mut(&format!("{p}.cross_attn"), f);
            f(&format!("{p}.ffn_norm_gain"), &mut layer.ffn_norm_gain);
            f(&format!("{p}.ffn_norm_bias"), &mut layer.ffn_norm_bias);
            f(&format!("{p}.ffn_w1"), &mut layer.ffn_w1);
            f(&format!("{p}.ffn_b1"), &mut layer.ffn_b1);
            f(&format!("{p}.ffn_w2"), &mut layer.ffn_w2);
            f(&format!("{p}.ffn_b2"), &mut layer.ffn_b2);
        }
        f("decoder.final_norm_gain", &mut self.final_norm_gain);
        f("decoder.final_norm_bias", &mut self.final_norm_bias);
        f("decoder.out_weight", &mut self.out_weight);
        f("decoder.out_bias", &mut self.out_bias);
    }

    /// Registers all tensors on a tape, collecting (name, var) bindings.
    pub fn register(&self, tape: &mut Tape<T>, binding: &mut Vec<(String, Var)>) -> DecoderVars {
        let attn =
            |tape: &mut Tape<T>, binding: &mut Vec<(String, Var)>, p: &AttentionBlockParams<T>, prefix: &str| {
                let mut vars = Vec::with_capacity(8);
                for (name, tensor) in [
                    (format!("{prefix}.query_w"), &p.query_w),
                    (format!("{prefix}.query_b"), &p.query_b),
                    (format!("{prefix}.key_w"), &p.key_w),
                    (format!("{prefix}.key_b"), &p.key_b),
                    (format!("{prefix}.value_w"), &p.value_w),
                    (format!("{prefix}.value_b"), &p.value_b),
                    (format!("{prefix}.out_w"), &p.out_w),
                    (format!("{prefix}.out_b"), &p.out_b),
                ] {
                    let v = tape.leaf(tensor);
                    binding.push((name, v));
                    vars.push(v);
                }
                AttentionBlockVars {
                    query_w: vars[0],
                    query_b: vars[1],
                    key_w: vars[2],
                    key_b: vars[3],
                    value_w: vars[4],
                    value_b: vars[5],
                    out_w: vars[6],
                    out_b: vars[7],
                }
            };

        let reg = |tape: &mut Tape<T>, binding: &mut Vec<(String, Var)>, name: String, t: &Tensor<T>| {
            let v = tape.leaf(t);
            binding.push((name, v));
            v
        };

        let embed = reg(tape, binding, "decoder.embed".into(), &self.embed);
        let pos_table = reg(tape, binding, "decoder.pos_table".into(), &self.pos_table);
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, layer)| {
                let p = format!("decoder.layers.{i}");
                DecoderLayerVars {
                    self_norm_gain: reg(tape, binding, format!("{p}.self_norm_gain"), &layer.self_norm_gain),
                    self_norm_bias: reg(tape, binding, format!("{p}.self_norm_bias"), &layer.self_norm_bias),
                    self_attn: attn(tape, binding, &layer.self_attn, &format!("{p}.self_attn")),
                    cross_norm_gain: reg(tape, binding, format!("{p}.cross_norm_gain"), &layer.cross_norm_gain),
                    cross_norm_bias: reg(tape, binding, format!("{p}.cross_norm_bias"), &layer.cross_norm_bias),
                    cross_attn: attn(tape, binding, &layer.cross_attn, &format!("{p}.cross_attn")),
                    ffn_norm_gain: reg(tape, binding, format!("{p}.ffn_norm_gain"), &layer.ffn_norm_gain),
                    ffn_norm_bias: reg(tape, binding, format!("{p}.ffn_norm_bias"), &layer.ffn_norm_bias),
                    ffn_w1: reg(tape, binding, format!("{p}.ffn_w1"), &layer.ffn_w1),
                    ffn_b1: reg(tape, binding, format!("{p}.ffn_b1"), &layer.ffn_b1),
                    ffn_w2: reg(tape, binding, format!("{p}.ffn_w2"), &layer.ffn_w2),
                    ffn_b2: reg(tape, binding, format!("{p}.ffn_b2"), &layer.ffn_b2),
                }
            })
            .collect();
        DecoderVars {
            embed,
            pos_table,
            layers,
            final_norm_gain: reg(tape, binding, "decoder.final_norm_gain".into(), &self.final_norm_gain),
            final_norm_bias: reg(tape, binding, "decoder.final_norm_bias".into(), &self.final_norm_bias),
            out_weight: reg(tape, binding, "decoder.out_weight".into(), &self.out_weight),
            out_bias: reg(tape, binding, "decoder.out_bias".into(), &self.out_bias),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionBlockVars {
    pub query_w: Var,
    pub query_b: Var,
    pub key_w: Var,
    pub key_b: Var,
    pub value_w: Var,
    pub value_b: Var,
    pub out_w: Var,
    pub out_b: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderLayerVars {
    pub self_norm_gain: Var,
    pub self_norm_bias: Var,
    pub self_attn: AttentionBlockVars,
    pub cross_norm_gain: Var,
    pub cross_norm_bias: Var,
    pub cross_attn: AttentionBlockVars,
    pub ffn_norm_gain: Var,
    pub ffn_norm_bias: Var,
    pub ffn_w1: Var,
    pub ffn_b1: Var,
    pub ffn_w2: Var,
    pub ffn_b2: Var,
}

#[derive(Debug, Clone)]
pub struct DecoderVars {
    pub embed: Var,
    pub pos_table: Var,
    pub layers: Vec<DecoderLayerVars>,
    pub final_norm_gain: Var,
    pub final_norm_bias: Var,
    pub out_weight: Var,
    pub out_bias: Var,
}

// ── Forward ─────────────────────────────────────────────────────────────

fn multi_head_attention<T: Scalar>(
    tape: &mut Tape<T>,
    queries_from: Var,
    keys_from: Var,
    block: &AttentionBlockVars,
    heads: usize,
    mask: Option<&[T]>,
) -> Result<Var, TensorError> {
    let q = tape.linear(queries_from, block.query_w, block.query_b)?;
    let k = tape.linear(keys_from, block.key_w, block.key_b)?;
    let v = tape.linear(keys_from, block.value_w, block.value_b)?;
    let dim = tape.shape(q)[1];
    let head_dim = dim / heads;
    let mut outputs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * head_dim, head_dim)?;
        let kh = tape.slice_cols(k, h * head_dim, head_dim)?;
        let vh = tape.slice_cols(v, h * head_dim, head_dim)?;
        let (oh, _) = tape.attention(qh, kh, vh, mask)?;
        outputs.push(oh);
    }
    let merged = tape.concat_cols(&outputs)?;
    tape.linear(merged, block.out_w, block.out_b)
}

fn causal_mask<T: Scalar>(len: usize) -> Vec<T> {
    let blocked = T::from_f64(-1e30);
    let mut mask = vec![T::zero(); len * len];
    for i in 0..len {
        for j in (i + 1)..len {
            mask[i * len + j] = blocked;
        }
    }
    mask
}

/// Teacher-forced forward pass: `input_ids` starts with bos; the returned
/// logits row `t` conditions only on the memory and `input_ids[0..=t]`.
pub fn decode_train<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &DecoderVars,
    cfg: &DecoderConfig,
    memory: Var,
    input_ids: &[u32],
) -> Result<Var, DecoderError> {
    let len = input_ids.len();
    if len == 0 || len > cfg.max_len {
        return Err(DecoderError::TooLong { got: len, max: cfg.max_len });
    }
    let tokens = tape.embedding(vars.embed, input_ids)?;
    let positions = tape.slice_rows(vars.pos_table, 0, len)?;
    let mut x = tape.add(tokens, positions)?;
    let mask = causal_mask::<T>(len);
    for layer in &vars.layers {
        let normed = tape.layer_norm(x, layer.self_norm_gain, layer.self_norm_bias)?;
        let self_out =
            multi_head_attention(tape, normed, normed, &layer.self_attn, cfg.heads, Some(&mask))?;
        x = tape.add(x, self_out)?;

        let normed = tape.layer_norm(x, layer.cross_norm_gain, layer.cross_norm_bias)?;
        let cross_out =
            multi_head_attention(tape, normed, memory, &layer.cross_attn, cfg.heads, None)?;
        x = tape.add(x, cross_out)?;

        let normed = tape.layer_norm(x, layer.ffn_norm_gain, layer.ffn_norm_bias)?;
        let hidden = tape.linear(normed, layer.ffn_w1, layer.ffn_b1)?;
        let activated = tape.gelu(hidden)?;
        let ffn_out = tape.linear(activated, layer.ffn_w2, layer.ffn_b2)?;
        x = tape.add(x, ffn_out)?;
    }
    let x = tape.layer_norm(x, vars.final_norm_gain, vars.final_norm_bias)?;
    Ok(tape.linear(x, vars.out_weight, vars.out_bias)?)
}

// ── Inference ───────────────────────────────────────────────────────────

/// Log-softmax computed in f64 regardless of compute precision, shared by
/// greedy, beam, and the exhaustive oracle so tie behavior is identical.
pub fn log_softmax_f64<T: Scalar>(row: &[T]) -> Vec<f64> {
    let vals: Vec<f64> = row.iter().map(|v| v.as_f64()).collect();
    let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = vals.iter().map(|v| (v - max).exp()).sum();
    let lse = max + sum.ln();
    vals.into_iter().map(|v| v - lse).collect()
}

fn next_token_log_probs<T: Scalar>(
    params: &DecoderParams<T>,
    memory: &Tensor<T>,
    prefix: &[u32],
) -> Result<Vec<f64>, DecoderError> {
    let mut tape = Tape::new();
    let mut binding = Vec::new();
    let vars = params.register(&mut tape, &mut binding);
    let mem = tape.constant(memory.shape().to_vec(), memory.data().to_vec())?;
    let mut input = Vec::with_capacity(prefix.len() + 1);
    input.push(BOS);
    input.extend_from_slice(prefix);
    let logits = decode_train(&mut tape, &vars, &params.cfg, mem, &input)?;
    let vocab = params.cfg.vocab_size;
    let last = &tape.value(logits)[(input.len() - 1) * vocab..input.len() * vocab];
    Ok(log_softmax_f64(last))
}

fn argmax_lowest_id(log_probs: &[f64]) -> u32 {
    let mut best = 0usize;
    for (i, &lp) in log_probs.iter().enumerate().skip(1) {
        if lp > log_probs[best] {
            best = i;
        }
    }
    best as u32
}

/// Greedy decoding: argmax token per step (ties to the lowest id), stopping
/// at eos or after `max_len` generated tokens.
pub fn greedy_decode<T: Scalar>(
    params: &DecoderParams<T>,
    memory: &Tensor<T>,
    max_len: usize,
) -> Result<TokenSequence, DecoderError> {
    let steps = max_len.min(params.cfg.max_len.saturating_sub(1));
    let mut tokens: Vec<u32> = Vec::new();
    for _ in 0..steps {
        let log_probs = next_token_log_probs(params, memory, &tokens)?;
        let best = argmax_lowest_id(&log_probs);
        if best == EOS {
            break;
        }
        tokens.push(best);
    }
    Ok(TokenSequence::new(tokens))
}

#[derive(Debug, Clone)]
struct Hypothesis {
    tokens: Vec<u32>,
    log_prob: f64,
    /// Number of scored steps (eos counts when taken).
    steps: usize,
}

impl Hypothesis {
    fn normalized(&self, alpha: f64) -> f64 {
        if self.steps == 0 {
            self.log_prob
        } else {
            self.log_prob / (self.steps as f64).powf(alpha)
        }
    }
}

fn better(a: (f64, &[u32]), b: (f64, &[u32])) -> bool {
    a.0 > b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// Length-normalized beam search (`score = log_prob / steps^alpha`). Returns
/// the best finished hypothesis, falling back to the best unfinished one at
/// `max_len`. Width 1 coincides with greedy decoding exactly.
pub fn beam_decode<T: Scalar>(
    params: &DecoderParams<T>,
    memory: &Tensor<T>,
    width: usize,
    max_len: usize,
    alpha: f64,
) -> Result<TokenSequence, DecoderError> {
    let width = width.max(1);
    let steps = max_len.min(params.cfg.max_len.saturating_sub(1));
    let mut alive = vec![Hypothesis { tokens: Vec::new(), log_prob: 0.0, steps: 0 }];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for _ in 0..steps {
        // Expand every alive hypothesis by the full vocabulary, then keep
        // the `width` best continuations by cumulative log-probability.
        // Ties order by token id then parent index.
        let mut candidates: Vec<(f64, u32, usize)> = Vec::new();
        for (parent, hyp) in alive.iter().enumerate() {
            let log_probs = next_token_log_probs(params, memory, &hyp.tokens)?;
            for (tok, lp) in log_probs.iter().enumerate() {
                candidates.push((hyp.log_prob + lp, tok as u32, parent));
            }
        }
        candidates.sort_by(|a, b| {
            b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
        });
        candidates.truncate(width);

        let mut next_alive = Vec::with_capacity(width);
        for (log_prob, tok, parent) in candidates {
            let src = &alive[parent];
            let hyp = Hypothesis {
                tokens: if tok == EOS {
                    src.tokens.clone()
                } else {
                    let mut t = src.tokens.clone();
                    t.push(tok);
                    t
                },
                log_prob,
                steps: src.steps + 1,
            };
            if tok == EOS {
                finished.push(hyp);
            } else {
                next_alive.push(hyp);
            }
        }
        alive = next_alive;
        if alive.is_empty() {
            break;
        }
    }

    let pool = if finished.is_empty() { &alive } else { &finished };
    let mut best: Option<(f64, &Hypothesis)> = None;
    for hyp in pool {
        let score = hyp.normalized(alpha);
        let replace = match &best {
            None => true,
            Some((s, b)) => better((score, &hyp.tokens), (*s, &b.tokens)),
        };
        if replace {
            best = Some((score, hyp));
        }
    }
    Ok(TokenSequence::new(best.map(|(_, h)| h.tokens.clone()).unwrap_or_default()))
}
