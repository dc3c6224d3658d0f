//! End-to-end optimization: batching with padding masks, the Adam training
//! loop, teacher-forced accuracy, and corpus evaluation.
//!
//! Determinism contract: given (seed, config, corpus), parameter init,
//! shuffling, and every update are reproduced bit-for-bit on one platform.
//! All randomness comes from one ChaCha8 stream.

use crate::corpus::{CorpusEntry, Vocab, BOS, PAD};
use crate::decoder::{
    beam_decode, decode_train, greedy_decode, DecoderConfig, DecoderError, DecoderParams,
    DecoderVars, TokenSequence,
};
use crate::encoder::{
    encode_on_tape, EncoderConfig, EncoderError, EncoderMode, EncoderParams, EncoderVars,
};
use crate::features::FeatureError;
use crate::metrics::{corpus_scores, rouge_l, tokens, MetricsError, ScoreReport};
use crate::scalar::Scalar;
use crate::segment::{LayoutError, MultiScaleLayout};
use crate::tensor::{AdamConfig, AdamState, Tape, TensorError, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("entry {id}: feature dim {got} does not match corpus dim {expected}")]
    MixedFeatureDims { id: String, expected: usize, got: usize },
    #[error("entry {id}: target length {got} exceeds max_target_len {max}")]
    TargetTooLong { id: String, got: usize, max: usize },
    #[error("loss diverged (non-finite) at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Decoder(#[from] DecoderError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn dtype(&self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

/// Everything one training run needs, also the checkpointed config snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub widths: Vec<usize>,
    pub stride: usize,
    pub mode: EncoderMode,
    pub model_dim: usize,
    pub inter_dim: usize,
    pub intra_dim: usize,
    pub max_positions: usize,
    pub decoder_layers: usize,
    pub decoder_heads: usize,
    pub decoder_ffn_dim: usize,
    pub max_target_len: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub label_smoothing: f64,
    pub seed: u64,
    pub precision: Precision,
    /// Epochs between checkpoint snapshots; 0 disables interval snapshots.
    pub checkpoint_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            widths: vec![8, 12, 16],
            stride: 2,
            mode: EncoderMode::Joint,
            model_dim: 128,
            inter_dim: 128,
            intra_dim: 128,
            max_positions: 256,
            decoder_layers: 2,
            decoder_heads: 4,
            decoder_ffn_dim: 512,
            max_target_len: 32,
            learning_rate: 1e-4,
            weight_decay: 1e-4,
            epochs: 200,
            batch_size: 8,
            label_smoothing: 0.0,
            seed: 42,
            precision: Precision::F64,
            checkpoint_interval: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.widths.is_empty() || self.widths.windows(2).any(|w| w[1] <= w[0]) {
            return fail("widths must be non-empty and strictly ascending");
        }
        if self.stride == 0 {
            return fail("stride must be >= 1");
        }
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return fail("learning_rate must be > 0");
        }
        if self.weight_decay < 0.0 {
            return fail("weight_decay must be >= 0");
        }
        if self.epochs == 0 {
            return fail("epochs must be >= 1");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1");
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return fail("label_smoothing must be in [0, 1)");
        }
        if self.model_dim == 0 || self.inter_dim == 0 || self.intra_dim == 0 {
            return fail("model dims must be >= 1");
        }
        if self.decoder_heads == 0 || self.model_dim % self.decoder_heads != 0 {
            return fail("model_dim must divide evenly into decoder_heads");
        }
        if self.max_target_len < 2 {
            return fail("max_target_len must be >= 2");
        }
        Ok(())
    }

    pub fn encoder_config(&self, input_dim: usize) -> EncoderConfig {
        EncoderConfig {
            input_dim,
            model_dim: self.model_dim,
            inter_dim: self.inter_dim,
            intra_dim: self.intra_dim,
            widths: self.widths.clone(),
            stride: self.stride,
            max_positions: self.max_positions,
            mode: self.mode,
        }
    }

    pub fn decoder_config(&self, vocab_size: usize) -> DecoderConfig {
        DecoderConfig {
            vocab_size,
            model_dim: self.model_dim,
            layers: self.decoder_layers,
            heads: self.decoder_heads,
            ffn_dim: self.decoder_ffn_dim,
            max_len: self.max_target_len,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig::new(self.learning_rate, self.weight_decay)
    }
}

// ── Model bundle ────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct TranslationModel<T: Scalar> {
    pub encoder: EncoderParams<T>,
    pub decoder: DecoderParams<T>,
}

pub struct ModelVars {
    pub encoder: EncoderVars,
    pub decoder: DecoderVars,
}

impl<T: Scalar> TranslationModel<T> {
    pub fn new(
        cfg: &TrainConfig,
        input_dim: usize,
        vocab_size: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, TrainError> {
        Ok(TranslationModel {
            encoder: EncoderParams::new(cfg.encoder_config(input_dim), rng),
            decoder: DecoderParams::new(cfg.decoder_config(vocab_size), rng)?,
        })
    }

    pub fn visit(&self, f: &mut impl FnMut(&str, &crate::tensor::Tensor<T>)) {
        self.encoder.visit(f);
        self.decoder.visit(f);
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&str, &mut crate::tensor::Tensor<T>)) {
        self.encoder.visit_mut(f);
        self.decoder.visit_mut(f);
    }

    pub fn register(&self, tape: &mut Tape<T>, binding: &mut Vec<(String, Var)>) -> ModelVars {
        ModelVars {
            encoder: self.encoder.register(tape, binding),
            decoder: self.decoder.register(tape, binding),
        }
    }
}

// ── Batching ────────────────────────────────────────────────────────────

/// One padded batch: teacher inputs `[bos, w..]` and gold rows `[w.., eos]`,
/// both right-padded with the pad id to the batch width. Pad positions are
/// excluded from the loss; causality keeps them from influencing real
/// positions.
#[derive(Debug, Clone)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub teacher_inputs: Vec<Vec<u32>>,
    pub gold_targets: Vec<Vec<u32>>,
    pub width: usize,
    pub live_tokens: usize,
}

pub fn make_batch(corpus: &[CorpusEntry], indices: &[usize]) -> Batch {
    let width = indices.iter().map(|&i| corpus[i].target_tokens.len()).max().unwrap_or(0);
    let mut teacher_inputs = Vec::with_capacity(indices.len());
    let mut gold_targets = Vec::with_capacity(indices.len());
    let mut live_tokens = 0usize;
    for &i in indices {
        let target = &corpus[i].target_tokens;
        live_tokens += target.len();
        let mut input = Vec::with_capacity(width);
        input.push(BOS);
        input.extend_from_slice(&target[..target.len() - 1]);
        input.resize(width, PAD);
        let mut gold = target.clone();
        gold.resize(width, PAD);
        teacher_inputs.push(input);
        gold_targets.push(gold);
    }
    Batch { indices: indices.to_vec(), teacher_inputs, gold_targets, width, live_tokens }
}

/// Forward pass of one batch on an open tape. The returned loss equals the
/// live-token weighted mean of the per-sentence losses.
pub fn batch_loss_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &ModelVars,
    model: &TranslationModel<T>,
    corpus: &[CorpusEntry],
    layouts: &[MultiScaleLayout],
    batch: &Batch,
    label_smoothing: f64,
) -> Result<(Var, usize), TrainError> {
    let mut logit_blocks = Vec::with_capacity(batch.indices.len());
    let mut gold: Vec<u32> = Vec::with_capacity(batch.indices.len() * batch.width);
    for (slot, &i) in batch.indices.iter().enumerate() {
        let entry = &corpus[i];
        let (memory, _) = encode_on_tape(
            tape,
            &vars.encoder,
            &model.encoder.cfg,
            &entry.features,
            &layouts[i],
            false,
        )?;
        let logits = decode_train(
            tape,
            &vars.decoder,
            &model.decoder.cfg,
            memory,
            &batch.teacher_inputs[slot],
        )?;
        logit_blocks.push(logits);
        gold.extend_from_slice(&batch.gold_targets[slot]);
    }
    let all_logits =
        if logit_blocks.len() == 1 { logit_blocks[0] } else { tape.concat_rows(&logit_blocks)? };
    let ce = tape.cross_entropy(all_logits, &gold, PAD, T::from_f64(label_smoothing))?;
    Ok((ce.loss, ce.live_positions))
}

// ── Training loop ───────────────────────────────────────────────────────

/// One line of the JSON-Lines training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub wall_ms: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_bleu4: Option<f64>,
}

/// Mutable training state handed to the per-epoch callback (checkpointing,
/// validation scoring) and returned at the end.
pub struct TrainState<T: Scalar> {
    pub model: TranslationModel<T>,
    pub optimizer: AdamState<T>,
    pub rng: ChaCha8Rng,
    pub epoch: usize,
    pub input_dim: usize,
}

fn layouts_for(corpus: &[CorpusEntry], cfg: &TrainConfig) -> Result<Vec<MultiScaleLayout>, TrainError> {
    let enc = cfg.encoder_config(0);
    let mut layouts = Vec::with_capacity(corpus.len());
    for entry in corpus {
        let layout = crate::segment::plan_layout(entry.features.frames(), &cfg.widths, cfg.stride)?;
        if layout.pivot_count > enc.max_positions {
            return Err(EncoderError::Capacity {
                have: layout.pivot_count,
                max: enc.max_positions,
            }
            .into());
        }
        layouts.push(layout);
    }
    Ok(layouts)
}

fn check_corpus(corpus: &[CorpusEntry], cfg: &TrainConfig) -> Result<usize, TrainError> {
    let first = corpus.first().ok_or(TrainError::EmptyCorpus)?;
    let dim = first.features.dim();
    for entry in corpus {
        if entry.features.dim() != dim {
            return Err(TrainError::MixedFeatureDims {
                id: entry.features.video_id.clone(),
                expected: dim,
                got: entry.features.dim(),
            });
        }
        if entry.target_tokens.len() > cfg.max_target_len {
            return Err(TrainError::TargetTooLong {
                id: entry.features.video_id.clone(),
                got: entry.target_tokens.len(),
                max: cfg.max_target_len,
            });
        }
    }
    Ok(dim)
}

/// Runs the full optimization. `on_epoch` fires after every epoch with the
/// record (val metrics may be filled in) and the current state; it is the
/// hook for interval checkpoints and validation BLEU.
pub fn train<T: Scalar>(
    corpus: &[CorpusEntry],
    vocab: &Vocab,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&mut EpochRecord, &TrainState<T>),
) -> Result<(TrainState<T>, Vec<EpochRecord>), TrainError> {
    let input_dim = check_corpus(corpus, cfg)?;
    let layouts = layouts_for(corpus, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = TranslationModel::<T>::new(cfg, input_dim, vocab.size(), &mut rng)?;
    let mut state = TrainState {
        model,
        optimizer: AdamState::new(),
        rng,
        epoch: 0,
        input_dim,
    };
    let adam_cfg = cfg.adam();
    let mut log = Vec::with_capacity(cfg.epochs);

    // Shuffle, then bucket nearby-length videos inside windows of a few
    // batches to bound padding waste without fixing the batch makeup.
    let window = cfg.batch_size * 4;
    let mut order: Vec<usize> = (0..corpus.len()).collect();

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut state.rng);
        for chunk in order.chunks_mut(window) {
            chunk.sort_by_key(|&i| layouts[i].pivot_count);
        }

        let mut loss_sum = 0.0f64;
        let mut token_sum = 0usize;
        for (batch_no, ids) in order.chunks(cfg.batch_size).enumerate() {
            let batch = make_batch(corpus, ids);
            let mut tape = Tape::new();
            let mut binding = Vec::new();
            let vars = state.model.register(&mut tape, &mut binding);
            let (loss, live) = batch_loss_on_tape(
                &mut tape,
                &vars,
                &state.model,
                corpus,
                &layouts,
                &batch,
                cfg.label_smoothing,
            )?;
            let loss_value = tape.scalar_value(loss).as_f64();
            if !loss_value.is_finite() {
                return Err(TrainError::Diverged { epoch, batch: batch_no });
            }
            tape.backward(loss)?;

            state.optimizer.begin_step();
            let grads: Vec<(String, Option<Vec<T>>)> = binding
                .iter()
                .map(|(name, var)| (name.clone(), tape.grad(*var).map(<[T]>::to_vec)))
                .collect();
            let optimizer = &mut state.optimizer;
            let mut grad_iter = grads.iter();
            state.model.visit_mut(&mut |name, tensor| {
                let (bound_name, grad) = grad_iter.next().expect("binding covers every tensor");
                assert_eq!(bound_name, name, "registration order matches visit order");
                match grad {
                    Some(g) => optimizer.update(&adam_cfg, name, tensor, g),
                    None => {
                        let zeros = vec![T::zero(); tensor.len()];
                        optimizer.update(&adam_cfg, name, tensor, &zeros);
                    }
                }
            });

            loss_sum += loss_value * live as f64;
            token_sum += live;
        }

        state.epoch = epoch;
        let mut record = EpochRecord {
            epoch,
            loss: loss_sum / token_sum.max(1) as f64,
            lr: cfg.learning_rate,
            wall_ms: started.elapsed().as_millis() as u64,
            val_bleu4: None,
        };
        on_epoch(&mut record, &state);
        log.push(record);
    }
    Ok((state, log))
}

// ── Frozen-model helpers ────────────────────────────────────────────────

/// Encoder memory of one entry under frozen parameters.
fn frozen_memory<T: Scalar>(
    model: &TranslationModel<T>,
    entry: &CorpusEntry,
    layout: &MultiScaleLayout,
) -> Result<crate::tensor::Tensor<T>, TrainError> {
    let encoded = crate::encoder::encode(&model.encoder, &entry.features, layout, false)?;
    Ok(encoded.memory)
}

/// Fraction of gold tokens (eos included) the model predicts by argmax under
/// teacher forcing.
pub fn teacher_forced_accuracy<T: Scalar>(
    corpus: &[CorpusEntry],
    model: &TranslationModel<T>,
    cfg: &TrainConfig,
) -> Result<f64, TrainError> {
    let layouts = layouts_for(corpus, cfg)?;
    let mut hits = 0usize;
    let mut total = 0usize;
    for (entry, layout) in corpus.iter().zip(&layouts) {
        let mut tape = Tape::new();
        let mut binding = Vec::new();
        let vars = model.register(&mut tape, &mut binding);
        let target = &entry.target_tokens;
        let mut input = Vec::with_capacity(target.len());
        input.push(BOS);
        input.extend_from_slice(&target[..target.len() - 1]);
        let (memory, _) =
            encode_on_tape(&mut tape, &vars.encoder, &model.encoder.cfg, &entry.features, layout, false)?;
        let logits = decode_train(&mut tape, &vars.decoder, &model.decoder.cfg, memory, &input)?;
        let vocab_size = model.decoder.cfg.vocab_size;
        let values = tape.value(logits);
        for (t, &gold) in target.iter().enumerate() {
            let row = &values[t * vocab_size..(t + 1) * vocab_size];
            let mut best = 0usize;
            for (j, v) in row.iter().enumerate().skip(1) {
                if *v > row[best] {
                    best = j;
                }
            }
            if best as u32 == gold {
                hits += 1;
            }
            total += 1;
        }
    }
    Ok(hits as f64 / total.max(1) as f64)
}

// ── Evaluation ──────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DecodeOptions {
    /// 1 decodes greedily; larger widths run length-normalized beam search.
    pub beam_width: usize,
    pub max_len: usize,
    pub length_penalty: f64,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions { beam_width: 1, max_len: 32, length_penalty: 1.0 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SentenceEval {
    pub id: String,
    pub reference: String,
    pub hypothesis: String,
    pub rouge_l: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub scores: ScoreReport,
    pub sentences: Vec<SentenceEval>,
}

pub fn translate_one<T: Scalar>(
    model: &TranslationModel<T>,
    vocab: &Vocab,
    entry: &CorpusEntry,
    layout: &MultiScaleLayout,
    opts: &DecodeOptions,
) -> Result<(TokenSequence, String), TrainError> {
    let memory = frozen_memory(model, entry, layout)?;
    let seq = if opts.beam_width <= 1 {
        greedy_decode(&model.decoder, &memory, opts.max_len)?
    } else {
        beam_decode(&model.decoder, &memory, opts.beam_width, opts.max_len, opts.length_penalty)?
    };
    let text = vocab.decode(&seq.ids);
    Ok((seq, text))
}

/// Decodes and scores a whole corpus. Sentences are split across `threads`
/// worker threads (the model is frozen and shared); results keep corpus
/// order regardless of scheduling.
pub fn evaluate<T: Scalar>(
    corpus: &[CorpusEntry],
    vocab: &Vocab,
    model: &TranslationModel<T>,
    cfg: &TrainConfig,
    opts: &DecodeOptions,
    threads: usize,
) -> Result<EvalReport, TrainError> {
    if corpus.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let layouts = layouts_for(corpus, cfg)?;
    let threads = threads.clamp(1, corpus.len());
    let mut hypotheses: Vec<Option<String>> = vec![None; corpus.len()];

    if threads == 1 {
        for (i, entry) in corpus.iter().enumerate() {
            let (_, text) = translate_one(model, vocab, entry, &layouts[i], opts)?;
            hypotheses[i] = Some(text);
        }
    } else {
        let chunk = corpus.len().div_ceil(threads);
        let results: Vec<Vec<(usize, Result<String, TrainError>)>> = std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for (worker, ids) in (0..corpus.len()).collect::<Vec<_>>().chunks(chunk).enumerate() {
                let ids = ids.to_vec();
                let layouts = &layouts;
                let _ = worker;
                handles.push(scope.spawn(move || {
                    ids.into_iter()
                        .map(|i| {
                            let out = translate_one(model, vocab, &corpus[i], &layouts[i], opts)
                                .map(|(_, text)| text);
                            (i, out)
                        })
                        .collect()
                }));
            }
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        });
        for chunk in results {
            for (i, out) in chunk {
                hypotheses[i] = Some(out?);
            }
        }
    }

    let mut cands: Vec<Vec<String>> = Vec::with_capacity(corpus.len());
    let mut refs: Vec<Vec<String>> = Vec::with_capacity(corpus.len());
    let mut sentences = Vec::with_capacity(corpus.len());
    for (entry, hyp) in corpus.iter().zip(&hypotheses) {
        let hypothesis = hyp.clone().expect("every sentence decoded");
        let cand = tokens(&hypothesis);
        let reference = tokens(&entry.raw_text);
        let sentence_rouge = if cand.is_empty() || reference.is_empty() {
            0.0
        } else {
            rouge_l(&cand, &reference)?
        };
        sentences.push(SentenceEval {
            id: entry.features.video_id.clone(),
            reference: entry.raw_text.clone(),
            hypothesis,
            rouge_l: sentence_rouge,
        });
        cands.push(cand);
        refs.push(reference);
    }
    let scores = corpus_scores(&cands, &refs, false)?;
    Ok(EvalReport { scores, sentences })
}

#[cfg(test)]
mod tests;
