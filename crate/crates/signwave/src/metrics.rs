//! Translation quality metrics: corpus BLEU-n with clipped modified n-gram
//! precision and a brevity penalty, and sentence-averaged ROUGE-L (plain F1
//! over longest common subsequences). Scores are on a 0..100 scale.
//!
//! Conventions pinned for exact oracles: one reference per candidate, no
//! smoothing by default (any zero precision zeroes the score; an optional
//! flooring smoother exists for tiny corpora), scoring tokens come from the
//! same whitespace split used everywhere else, no case folding.

use serde::Serialize;
use std::collections::HashMap;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("candidate and reference counts differ: {candidates} vs {references}")]
    CountMismatch { candidates: usize, references: usize },
    #[error("corpus must be non-empty")]
    EmptyCorpus,
    #[error("rouge-l requires non-empty sequences")]
    EmptySequence,
}

/// Corpus-level scores plus the components they came from.
#[derive(Debug, Clone, Serialize)]
pub struct ScoreReport {
    /// `bleu[n-1]` holds BLEU-n, n in 1..=4, scaled 0..100.
    pub bleu: [f64; 4],
    pub rouge_l: f64,
    pub brevity_penalty: f64,
    /// Modified n-gram precisions p_1..p_4 (unscaled, in 0..1).
    pub precisions: [f64; 4],
    pub candidate_tokens: usize,
    pub reference_tokens: usize,
}

/// Multiset of n-grams of one order.
fn ngram_counts<Token: Eq + std::hash::Hash + Clone>(
    tokens: &[Token],
    n: usize,
) -> HashMap<Vec<Token>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            *counts.entry(window.to_vec()).or_insert(0) += 1;
        }
    }
    counts
}

#[derive(Debug, Clone, Copy, Default)]
struct NgramTally {
    matched: usize,
    total: usize,
}

/// Corpus BLEU up to `max_n`, following the clipped modified precision
/// definition: per-order counts pool over the corpus, the geometric mean of
/// p_1..p_n multiplies the brevity penalty `min(1, e^(1 - r/c))`.
pub fn bleu<S: AsRef<str>>(
    candidates: &[Vec<S>],
    references: &[Vec<S>],
    max_n: usize,
    smooth: bool,
) -> Result<(Vec<f64>, [f64; 4], f64), MetricsError> {
    if candidates.len() != references.len() {
        return Err(MetricsError::CountMismatch {
            candidates: candidates.len(),
            references: references.len(),
        });
    }
    if candidates.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let max_n = max_n.clamp(1, 4);
    let mut tallies = [NgramTally::default(); 4];
    let mut candidate_len = 0usize;
    let mut reference_len = 0usize;
    for (cand, reference) in candidates.iter().zip(references) {
        let cand: Vec<&str> = cand.iter().map(AsRef::as_ref).collect();
        let reference: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
        candidate_len += cand.len();
        reference_len += reference.len();
        for (order, tally) in tallies.iter_mut().enumerate().take(max_n) {
            let n = order + 1;
            let cand_counts = ngram_counts(&cand, n);
            let ref_counts = ngram_counts(&reference, n);
            for (gram, count) in &cand_counts {
                let clip = ref_counts.get(gram).copied().unwrap_or(0);
                tally.matched += count.min(&clip);
            }
            tally.total += cand.len().saturating_sub(n - 1);
        }
    }

    let mut precisions = [0.0f64; 4];
    for (order, tally) in tallies.iter().enumerate().take(max_n) {
        precisions[order] = if tally.total == 0 {
            0.0
        } else if smooth && tally.matched == 0 {
            1.0 / (2.0 * tally.total as f64)
        } else {
            tally.matched as f64 / tally.total as f64
        };
    }

    let brevity_penalty = if candidate_len == 0 {
        0.0
    } else if candidate_len >= reference_len {
        1.0
    } else {
        (1.0 - reference_len as f64 / candidate_len as f64).exp()
    };

    let mut scores = Vec::with_capacity(max_n);
    for n in 1..=max_n {
        let ps = &precisions[..n];
        let score = if ps.iter().any(|&p| p == 0.0) {
            0.0
        } else {
            let log_mean = ps.iter().map(|p| p.ln()).sum::<f64>() / n as f64;
            100.0 * brevity_penalty * log_mean.exp()
        };
        scores.push(score);
    }
    Ok((scores, precisions, brevity_penalty))
}

/// Longest common subsequence length, standard quadratic dynamic program.
pub fn lcs_length<Token: PartialEq>(a: &[Token], b: &[Token]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut previous = vec![0usize; b.len() + 1];
    let mut current = vec![0usize; b.len() + 1];
    for item_a in a {
        for (j, item_b) in b.iter().enumerate() {
            current[j + 1] =
                if item_a == item_b { previous[j] + 1 } else { previous[j + 1].max(current[j]) };
        }
        std::mem::swap(&mut previous, &mut current);
    }
    previous[b.len()]
}

/// Sentence ROUGE-L: F1 of LCS precision and recall, scaled to 0..100.
/// Defined as 0 when precision + recall is 0.
pub fn rouge_l<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> Result<f64, MetricsError> {
    if candidate.is_empty() || reference.is_empty() {
        return Err(MetricsError::EmptySequence);
    }
    let cand: Vec<&str> = candidate.iter().map(AsRef::as_ref).collect();
    let reference: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
    let lcs = lcs_length(&cand, &reference) as f64;
    let precision = lcs / cand.len() as f64;
    let recall = lcs / reference.len() as f64;
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(100.0 * 2.0 * precision * recall / (precision + recall))
}

/// Full corpus report: BLEU-1..4 plus sentence-averaged ROUGE-L. Empty
/// hypotheses score 0 for their sentence's ROUGE-L.
pub fn corpus_scores<S: AsRef<str>>(
    candidates: &[Vec<S>],
    references: &[Vec<S>],
    smooth: bool,
) -> Result<ScoreReport, MetricsError> {
    let (scores, precisions, brevity_penalty) = bleu(candidates, references, 4, smooth)?;
    let mut rouge_sum = 0.0;
    for (cand, reference) in candidates.iter().zip(references) {
        if !cand.is_empty() && !reference.is_empty() {
            rouge_sum += rouge_l(cand, reference)?;
        }
    }
    Ok(ScoreReport {
        bleu: [scores[0], scores[1], scores[2], scores[3]],
        rouge_l: rouge_sum / candidates.len() as f64,
        brevity_penalty,
        precisions,
        candidate_tokens: candidates.iter().map(Vec::len).sum(),
        reference_tokens: references.iter().map(Vec::len).sum(),
    })
}

/// Whitespace scoring tokens of a sentence.
pub fn tokens(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}
