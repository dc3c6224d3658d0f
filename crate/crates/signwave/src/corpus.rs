//! Training corpora: tokenization, the JSON-Lines manifest, and a synthetic
//! gesture-stream generator used for controlled experiments.
//!
//! The tokenizer is a plain whitespace split with four reserved ids
//! (0 = pad, 1 = bos, 2 = eos, 3 = unk). All randomness flows from a seeded
//! ChaCha8 stream (`rand_chacha::ChaCha8Rng`, Gaussian noise via
//! `rand_distr::StandardNormal`), so a corpus is a pure function of its
//! config.

use crate::features::{FeatureError, FeatureSequence};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("manifest {path} line {line}: {detail}")]
    Manifest { path: String, line: usize, detail: String },
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("invalid synthetic config: {0}")]
    BadSyntheticConfig(String),
}

// ── Tokenizer ───────────────────────────────────────────────────────────

/// Whitespace-token vocabulary with reserved control ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Builds from an iterator of sentences; non-reserved ids are assigned
    /// in first-appearance order.
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, u32> =
            tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        for text in texts {
            for word in text.split_whitespace() {
                if !index.contains_key(word) {
                    index.insert(word.to_string(), tokens.len() as u32);
                    tokens.push(word.to_string());
                }
            }
        }
        Vocab { tokens, index }
    }

    /// Restores a vocabulary from its id-ordered token list (checkpoints).
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Vocab { tokens, index }
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn word(&self, id: u32) -> &str {
        self.tokens.get(id as usize).map_or("<unk>", String::as_str)
    }

    /// Content ids for a sentence (no bos/eos added here).
    pub fn encode(&self, text: &str) -> Vec<u32> {
        text.split_whitespace().map(|w| self.id(w)).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter().map(|&id| self.word(id)).collect::<Vec<_>>().join(" ")
    }
}

// ── Corpus entries and manifest ─────────────────────────────────────────

/// One training pair: a feature sequence and its target sentence. The token
/// ids end with the eos terminal.
#[derive(Debug, Clone)]
pub struct CorpusEntry {
    pub features: FeatureSequence,
    pub target_tokens: Vec<u32>,
    pub raw_text: String,
}

impl CorpusEntry {
    pub fn new(features: FeatureSequence, raw_text: String, vocab: &Vocab) -> Self {
        let mut target_tokens = vocab.encode(&raw_text);
        target_tokens.push(EOS);
        CorpusEntry { features, target_tokens, raw_text }
    }
}

/// One manifest line: `{"id": ..., "features": ..., "text": ...}`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub features: PathBuf,
    pub text: String,
}

pub fn parse_manifest_line(line: &str) -> Result<ManifestEntry, serde_json::Error> {
    serde_json::from_str(line)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>, CorpusError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let file = std::fs::File::open(path)
        .map_err(|source| CorpusError::Io { path: display.clone(), source })?;
    let mut entries = Vec::new();
    for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io { path: display.clone(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = parse_manifest_line(&line).map_err(|e| CorpusError::Manifest {
            path: display.clone(),
            line: lineno + 1,
            detail: e.to_string(),
        })?;
        entries.push(entry);
    }
    Ok(entries)
}

pub fn write_manifest(
    path: impl AsRef<Path>,
    entries: &[ManifestEntry],
) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let wrap = |source| CorpusError::Io { path: display.clone(), source };
    let mut f = std::fs::File::create(path).map_err(wrap)?;
    for entry in entries {
        let line = serde_json::to_string(entry).expect("manifest entries serialize");
        writeln!(f, "{line}").map_err(wrap)?;
    }
    Ok(())
}

/// Loads every manifest entry, resolving feature paths relative to the
/// manifest's directory, and tokenizes targets with the given vocabulary.
pub fn load_corpus(
    manifest_path: impl AsRef<Path>,
    vocab: &Vocab,
) -> Result<Vec<CorpusEntry>, CorpusError> {
    let manifest_path = manifest_path.as_ref();
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut corpus = Vec::new();
    for entry in read_manifest(manifest_path)? {
        let feature_path =
            if entry.features.is_absolute() { entry.features.clone() } else { base.join(&entry.features) };
        let mut features = FeatureSequence::read_file(&feature_path)?;
        features.video_id = entry.id.clone();
        corpus.push(CorpusEntry::new(features, entry.text, vocab));
    }
    Ok(corpus)
}

/// Builds the training vocabulary from manifest texts alone.
pub fn vocab_from_manifest(path: impl AsRef<Path>) -> Result<Vocab, CorpusError> {
    let entries = read_manifest(path)?;
    Ok(Vocab::from_texts(entries.iter().map(|e| e.text.as_str())))
}

// ── Synthetic corpus ────────────────────────────────────────────────────

/// How gesture order maps to word order in the target sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReorderRule {
    /// Target words in gesture order.
    Identity,
    /// Adjacent pairs swap: gestures [a,b,c,d] translate to [b,a,d,c],
    /// imitating syntactic misalignment between the two streams.
    PairSwap,
}

impl ReorderRule {
    pub fn apply(&self, gestures: &[usize]) -> Vec<usize> {
        match self {
            ReorderRule::Identity => gestures.to_vec(),
            ReorderRule::PairSwap => {
                let mut out = gestures.to_vec();
                for pair in out.chunks_exact_mut(2) {
                    pair.swap(0, 1);
                }
                out
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    /// Number of distinct gestures.
    pub gesture_vocab: usize,
    /// Feature dimension of emitted frames.
    pub feature_dim: usize,
    /// Inclusive frames-per-gesture range.
    pub duration_range: (usize, usize),
    /// Per-component Gaussian noise on top of the unit-norm prototype.
    pub noise_sigma: f64,
    /// Inclusive gestures-per-sentence range.
    pub sentence_len_range: (usize, usize),
    pub reorder: ReorderRule,
    pub seed: u64,
}

impl SyntheticConfig {
    fn validate(&self) -> Result<(), CorpusError> {
        if self.gesture_vocab == 0 || self.feature_dim == 0 {
            return Err(CorpusError::BadSyntheticConfig("vocab and dim must be >= 1".into()));
        }
        if self.duration_range.0 == 0 || self.duration_range.0 > self.duration_range.1 {
            return Err(CorpusError::BadSyntheticConfig("bad duration range".into()));
        }
        if self.sentence_len_range.0 == 0 || self.sentence_len_range.0 > self.sentence_len_range.1 {
            return Err(CorpusError::BadSyntheticConfig("bad sentence length range".into()));
        }
        if self.noise_sigma < 0.0 {
            return Err(CorpusError::BadSyntheticConfig("sigma must be >= 0".into()));
        }
        Ok(())
    }
}

/// The word a synthetic gesture id translates to.
pub fn gesture_word(gesture: usize) -> String {
    format!("g{gesture}")
}

/// The canonical vocabulary of a synthetic corpus: reserved ids then
/// `g0..g{vocab-1}` in order.
pub fn synthetic_vocab(gesture_vocab: usize) -> Vocab {
    let words: Vec<String> = (0..gesture_vocab).map(gesture_word).collect();
    let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
    tokens.extend(words);
    Vocab::from_tokens(tokens)
}

/// Deterministic sentence generator: each sentence is a uniform random
/// gesture sequence; each gesture emits `duration` frames of its unit-norm
/// prototype plus Gaussian noise; targets are the gesture words passed
/// through the reorder rule. Gesture boundaries are not marked anywhere in
/// the features.
pub fn generate_synthetic_corpus(
    cfg: &SyntheticConfig,
    n_sentences: usize,
) -> Result<Vec<CorpusEntry>, CorpusError> {
    cfg.validate()?;
    if n_sentences == 0 {
        return Err(CorpusError::BadSyntheticConfig("need at least one sentence".into()));
    }
    let vocab = synthetic_vocab(cfg.gesture_vocab);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // Draw order is fixed: prototypes first, then per sentence the length,
    // the gesture ids, and per gesture the duration then the frame noise.
    let prototypes: Vec<Vec<f64>> = (0..cfg.gesture_vocab)
        .map(|_| {
            let raw: Vec<f64> =
                (0..cfg.feature_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            raw.into_iter().map(|v| v / norm).collect()
        })
        .collect();

    let mut corpus = Vec::with_capacity(n_sentences);
    for sentence in 0..n_sentences {
        let len = rng.random_range(cfg.sentence_len_range.0..=cfg.sentence_len_range.1);
        let gestures: Vec<usize> =
            (0..len).map(|_| rng.random_range(0..cfg.gesture_vocab)).collect();
        let mut frames: Vec<f32> = Vec::new();
        let mut n_frames = 0usize;
        for &g in &gestures {
            let duration = rng.random_range(cfg.duration_range.0..=cfg.duration_range.1);
            for _ in 0..duration {
                for &p in &prototypes[g] {
                    let noise: f64 =
                        if cfg.noise_sigma > 0.0 { StandardNormal.sample(&mut rng) } else { 0.0 };
                    frames.push((p + cfg.noise_sigma * noise) as f32);
                }
                n_frames += 1;
            }
        }
        let id = format!("synth-{sentence:05}");
        let features = FeatureSequence::new(id, n_frames, cfg.feature_dim, frames)?;
        let words: Vec<String> =
            cfg.reorder.apply(&gestures).into_iter().map(gesture_word).collect();
        corpus.push(CorpusEntry::new(features, words.join(" "), &vocab));
    }
    Ok(corpus)
}

/// Writes a corpus as a manifest plus one feature file per entry under
/// `dir/features/`.
pub fn write_corpus_files(dir: impl AsRef<Path>, corpus: &[CorpusEntry]) -> Result<PathBuf, CorpusError> {
    let dir = dir.as_ref();
    let feature_dir = dir.join("features");
    std::fs::create_dir_all(&feature_dir)
        .map_err(|source| CorpusError::Io { path: feature_dir.display().to_string(), source })?;
    let mut entries = Vec::with_capacity(corpus.len());
    for entry in corpus {
        let rel = Path::new("features").join(format!("{}.tspf", entry.features.video_id));
        entry.features.write_file(dir.join(&rel))?;
        entries.push(ManifestEntry {
            id: entry.features.video_id.clone(),
            features: rel,
            text: entry.raw_text.clone(),
        });
    }
    let manifest = dir.join("manifest.jsonl");
    write_manifest(&manifest, &entries)?;
    Ok(manifest)
}
