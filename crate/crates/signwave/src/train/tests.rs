use super::*;
use crate::corpus::{generate_synthetic_corpus, synthetic_vocab, ReorderRule, SyntheticConfig};

fn tiny_corpus(n: usize, seed: u64) -> (Vec<CorpusEntry>, Vocab) {
    let cfg = SyntheticConfig {
        gesture_vocab: 6,
        feature_dim: 5,
        duration_range: (4, 7),
        noise_sigma: 0.02,
        sentence_len_range: (2, 4),
        reorder: ReorderRule::Identity,
        seed,
    };
    (generate_synthetic_corpus(&cfg, n).unwrap(), synthetic_vocab(6))
}

fn tiny_train_config() -> TrainConfig {
    TrainConfig {
        widths: vec![4, 6],
        stride: 2,
        mode: EncoderMode::Sequential,
        model_dim: 8,
        inter_dim: 8,
        intra_dim: 8,
        max_positions: 32,
        decoder_layers: 1,
        decoder_heads: 2,
        decoder_ffn_dim: 16,
        max_target_len: 8,
        learning_rate: 1e-3,
        weight_decay: 1e-4,
        epochs: 2,
        batch_size: 3,
        label_smoothing: 0.0,
        seed: 7,
        precision: Precision::F64,
        checkpoint_interval: 0,
    }
}

fn single_sentence_loss(
    model: &TranslationModel<f64>,
    corpus: &[CorpusEntry],
    layouts: &[MultiScaleLayout],
    index: usize,
    smoothing: f64,
) -> (f64, usize) {
    let mut tape = Tape::new();
    let mut binding = Vec::new();
    let vars = model.register(&mut tape, &mut binding);
    let batch = make_batch(corpus, &[index]);
    let (loss, live) =
        batch_loss_on_tape(&mut tape, &vars, model, corpus, layouts, &batch, smoothing).unwrap();
    (tape.scalar_value(loss), live)
}

#[test]
fn config_validation_rejects_bad_fields() {
    let ok = tiny_train_config();
    assert!(ok.validate().is_ok());
    for (mutate, _why) in [
        ((&mut |c: &mut TrainConfig| c.widths = vec![]) as &mut dyn FnMut(&mut TrainConfig), "no widths"),
        (&mut |c: &mut TrainConfig| c.widths = vec![8, 8], "not ascending"),
        (&mut |c: &mut TrainConfig| c.stride = 0, "stride"),
        (&mut |c: &mut TrainConfig| c.learning_rate = 0.0, "lr"),
        (&mut |c: &mut TrainConfig| c.epochs = 0, "epochs"),
        (&mut |c: &mut TrainConfig| c.batch_size = 0, "batch"),
        (&mut |c: &mut TrainConfig| c.label_smoothing = 1.0, "smoothing"),
        (&mut |c: &mut TrainConfig| c.decoder_heads = 3, "head split"),
    ] {
        let mut bad = ok.clone();
        mutate(&mut bad);
        assert!(bad.validate().is_err());
    }
}

#[test]
fn batch_of_one_equals_unbatched_bitwise() {
    let (corpus, vocab) = tiny_corpus(4, 1);
    let cfg = tiny_train_config();
    let layouts = layouts_for(&corpus, &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = TranslationModel::<f64>::new(&cfg, 5, vocab.size(), &mut rng).unwrap();

    for index in 0..corpus.len() {
        // "Unbatched": direct encode + decode + cross-entropy.
        let entry = &corpus[index];
        let mut tape = Tape::new();
        let mut binding = Vec::new();
        let vars = model.register(&mut tape, &mut binding);
        let target = &entry.target_tokens;
        let mut input = vec![BOS];
        input.extend_from_slice(&target[..target.len() - 1]);
        let (memory, _) = encode_on_tape(
            &mut tape,
            &vars.encoder,
            &model.encoder.cfg,
            &entry.features,
            &layouts[index],
            false,
        )
        .unwrap();
        let logits =
            decode_train(&mut tape, &vars.decoder, &model.decoder.cfg, memory, &input).unwrap();
        let ce = tape.cross_entropy(logits, target, PAD, 0.0).unwrap();
        let direct = tape.scalar_value(ce.loss);

        let (batched, live) = single_sentence_loss(&model, &corpus, &layouts, index, 0.0);
        assert_eq!(direct, batched);
        assert_eq!(live, target.len());
    }
}

#[test]
fn identical_sentences_share_their_loss() {
    let (mut corpus, vocab) = tiny_corpus(2, 2);
    corpus[1] = corpus[0].clone();
    let cfg = tiny_train_config();
    let layouts = layouts_for(&corpus, &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let model = TranslationModel::<f64>::new(&cfg, 5, vocab.size(), &mut rng).unwrap();
    let (a, _) = single_sentence_loss(&model, &corpus, &layouts, 0, 0.0);
    let (b, _) = single_sentence_loss(&model, &corpus, &layouts, 1, 0.0);
    assert_eq!(a, b);
}

#[test]
fn mixed_length_batch_loss_is_weighted_mean_of_sentence_losses() {
    let (corpus, vocab) = tiny_corpus(5, 3);
    let cfg = tiny_train_config();
    let layouts = layouts_for(&corpus, &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model = TranslationModel::<f64>::new(&cfg, 5, vocab.size(), &mut rng).unwrap();

    let ids: Vec<usize> = (0..corpus.len()).collect();
    let batch = make_batch(&corpus, &ids);
    let mut tape = Tape::new();
    let mut binding = Vec::new();
    let vars = model.register(&mut tape, &mut binding);
    let (loss, live) =
        batch_loss_on_tape(&mut tape, &vars, &model, &corpus, &layouts, &batch, 0.0).unwrap();
    let batch_value = tape.scalar_value(loss);

    let mut weighted = 0.0;
    let mut total = 0usize;
    for index in 0..corpus.len() {
        let (l, n) = single_sentence_loss(&model, &corpus, &layouts, index, 0.0);
        weighted += l * n as f64;
        total += n;
    }
    assert_eq!(total, live);
    assert!((batch_value - weighted / total as f64).abs() < 1e-12);
}

#[test]
fn batch_builder_pads_with_suffix_only() {
    let (corpus, _) = tiny_corpus(4, 6);
    let ids: Vec<usize> = (0..corpus.len()).collect();
    let batch = make_batch(&corpus, &ids);
    for (input, gold) in batch.teacher_inputs.iter().zip(&batch.gold_targets) {
        assert_eq!(input.len(), batch.width);
        assert_eq!(gold.len(), batch.width);
        assert_eq!(input[0], BOS);
        let first_pad = gold.iter().position(|&t| t == PAD).unwrap_or(gold.len());
        assert!(gold[first_pad..].iter().all(|&t| t == PAD));
        assert!(TokenSequence::new(gold.clone()).well_formed());
    }
}

#[test]
fn zero_learning_rate_keeps_parameters_bit_identical() {
    // validate() demands lr > 0 at the config boundary, but the loop itself
    // runs with lr = 0 and must then be a no-op when decay is off.
    let (corpus, vocab) = tiny_corpus(3, 7);
    let cfg = TrainConfig {
        learning_rate: 0.0,
        weight_decay: 0.0,
        epochs: 2,
        ..tiny_train_config()
    };
    let (state, _) = train::<f64>(&corpus, &vocab, &cfg, |_, _| {}).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let fresh = TranslationModel::<f64>::new(&cfg, 5, vocab.size(), &mut rng).unwrap();
    let mut all_equal = true;
    let mut fresh_tensors = Vec::new();
    fresh.visit(&mut |name, t| fresh_tensors.push((name.to_string(), t.data().to_vec())));
    let mut iter = fresh_tensors.into_iter();
    state.model.visit(&mut |_, t| {
        let (_, expected) = iter.next().unwrap();
        if t.data() != expected.as_slice() {
            all_equal = false;
        }
    });
    assert!(all_equal);
}

#[test]
fn same_seed_trains_bit_identically() {
    let (corpus, vocab) = tiny_corpus(6, 8);
    let cfg = tiny_train_config();
    let (state_a, log_a) = train::<f64>(&corpus, &vocab, &cfg, |_, _| {}).unwrap();
    let (state_b, log_b) = train::<f64>(&corpus, &vocab, &cfg, |_, _| {}).unwrap();
    for (a, b) in log_a.iter().zip(&log_b) {
        assert_eq!(a.loss.to_bits(), b.loss.to_bits());
    }
    let mut tensors_a = Vec::new();
    state_a.model.visit(&mut |name, t| tensors_a.push((name.to_string(), t.data().to_vec())));
    let mut iter = tensors_a.into_iter();
    state_b.model.visit(&mut |name, t| {
        let (expected_name, expected) = iter.next().unwrap();
        assert_eq!(name, expected_name);
        assert_eq!(t.data(), expected.as_slice());
    });
}

#[test]
fn training_reduces_loss_and_accuracy_rises() {
    let (corpus, vocab) = tiny_corpus(6, 9);
    let cfg = TrainConfig { epochs: 30, learning_rate: 3e-3, ..tiny_train_config() };
    let (state, log) = train::<f64>(&corpus, &vocab, &cfg, |_, _| {}).unwrap();
    assert!(log.last().unwrap().loss < log.first().unwrap().loss);
    let acc = teacher_forced_accuracy(&corpus, &state.model, &cfg).unwrap();
    assert!(acc > 0.3, "accuracy after 30 epochs: {acc}");
}

#[test]
fn evaluate_scores_references_against_themselves_as_hundred() {
    // An oracle "model" is overkill here: feed the references as hypotheses
    // by scoring a corpus against itself directly. Sentences must have at
    // least four tokens for the 4-gram precision to be defined.
    let cfg = SyntheticConfig {
        gesture_vocab: 6,
        feature_dim: 5,
        duration_range: (4, 7),
        noise_sigma: 0.0,
        sentence_len_range: (4, 6),
        reorder: ReorderRule::Identity,
        seed: 10,
    };
    let corpus = generate_synthetic_corpus(&cfg, 4).unwrap();
    let refs: Vec<Vec<String>> = corpus.iter().map(|e| tokens(&e.raw_text)).collect();
    let report = corpus_scores(&refs, &refs, false).unwrap();
    assert!((report.bleu[3] - 100.0).abs() < 1e-9);
    assert!((report.rouge_l - 100.0).abs() < 1e-9);
}

#[test]
fn evaluate_is_deterministic_and_thread_count_invariant() {
    let (corpus, vocab) = tiny_corpus(5, 11);
    let cfg = TrainConfig { epochs: 2, ..tiny_train_config() };
    let (state, _) = train::<f64>(&corpus, &vocab, &cfg, |_, _| {}).unwrap();
    let opts = DecodeOptions { beam_width: 1, max_len: 8, length_penalty: 1.0 };
    let single = evaluate(&corpus, &vocab, &state.model, &cfg, &opts, 1).unwrap();
    let multi = evaluate(&corpus, &vocab, &state.model, &cfg, &opts, 3).unwrap();
    assert_eq!(single.scores.bleu, multi.scores.bleu);
    for (a, b) in single.sentences.iter().zip(&multi.sentences) {
        assert_eq!(a.hypothesis, b.hypothesis);
        assert_eq!(a.id, b.id);
    }
    assert!(single.sentences.iter().all(|s| !s.reference.is_empty()));
}

#[test]
fn empty_corpus_is_rejected() {
    let (_, vocab) = tiny_corpus(1, 12);
    let cfg = tiny_train_config();
    assert!(matches!(
        train::<f64>(&[], &vocab, &cfg, |_, _| {}),
        Err(TrainError::EmptyCorpus)
    ));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let model = TranslationModel::<f64>::new(&cfg, 5, vocab.size(), &mut rng).unwrap();
    assert!(matches!(
        evaluate(&[], &vocab, &model, &cfg, &DecodeOptions::default(), 1),
        Err(TrainError::EmptyCorpus)
    ));
}

#[test]
fn overlong_target_is_rejected_up_front() {
    let (corpus, vocab) = tiny_corpus(3, 13);
    let cfg = TrainConfig { max_target_len: 2, ..tiny_train_config() };
    assert!(matches!(
        train::<f64>(&corpus, &vocab, &cfg, |_, _| {}),
        Err(TrainError::TargetTooLong { .. })
    ));
}

#[test]
fn f32_precision_path_trains() {
    let (corpus, vocab) = tiny_corpus(3, 14);
    let cfg = TrainConfig { epochs: 2, precision: Precision::F32, ..tiny_train_config() };
    let (state, log) = train::<f32>(&corpus, &vocab, &cfg, |_, _| {}).unwrap();
    assert_eq!(log.len(), 2);
    assert!(log.iter().all(|r| r.loss.is_finite()));
    let acc = teacher_forced_accuracy(&corpus, &state.model, &cfg).unwrap();
    assert!((0.0..=1.0).contains(&acc));
}
