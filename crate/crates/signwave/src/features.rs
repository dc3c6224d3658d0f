//! Per-frame feature storage and frame-to-segment pooling.
//!
//! Features arrive from disk in the `TSPF` container (or are synthesized by
//! [`crate::corpus`]); a segment's feature is the mean of its frame vectors,
//! with frames past the end of the video reading as the last real frame.
//!
//! File layout (little-endian, bit-exact):
//! `"TSPF"` magic, `u32` version = 1, `u32` frame count, `u32` feature dim,
//! then `frames * dim` `f32` values row-major. No trailing bytes.

use crate::scalar::Scalar;
use crate::segment::{MultiScaleLayout, SegmentIndex};
use crate::tensor::Tensor;
use std::io::{Read, Write};
use std::path::Path;

pub const FEATURE_MAGIC: [u8; 4] = *b"TSPF";
pub const FEATURE_VERSION: u32 = 1;

/// Parse failures carry the byte offset where the problem was detected.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic at offset {offset}: expected \"TSPF\"")]
    BadMagic { offset: usize },
    #[error("unsupported version {version} at offset {offset}")]
    BadVersion { offset: usize, version: u32 },
    #[error("zero frame count or feature dim at offset {offset}")]
    ZeroDimension { offset: usize },
    #[error("frame count times dim overflows at offset {offset}")]
    Overflow { offset: usize },
    #[error("truncated payload at offset {offset}: need {needed} more bytes")]
    Truncated { offset: usize, needed: usize },
    #[error("{extra} trailing bytes after payload at offset {offset}")]
    TrailingBytes { offset: usize, extra: usize },
    #[error("non-finite value at offset {offset}")]
    NonFinite { offset: usize },
}

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("feature file {path}: {source}")]
    Format { path: String, source: FormatError },
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("segment [{start}, {end}) exceeds padded length {padded}")]
    SegmentOutOfBounds { start: usize, end: usize, padded: usize },
    #[error("feature dim {got} does not match expected {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("empty or ragged feature matrix")]
    BadMatrix,
}

/// Per-frame feature vectors of one video, row-major `frames x dim`.
/// Stored in `f32`, the on-disk precision; compute precision is chosen at
/// pooling time.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub video_id: String,
    frames: usize,
    dim: usize,
    data: Vec<f32>,
}

impl FeatureSequence {
    pub fn new(video_id: impl Into<String>, frames: usize, dim: usize, data: Vec<f32>) -> Result<Self, FeatureError> {
        if frames == 0 || dim == 0 || data.len() != frames * dim || !data.iter().all(|v| v.is_finite()) {
            return Err(FeatureError::BadMatrix);
        }
        Ok(FeatureSequence { video_id: video_id.into(), frames, dim, data })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    /// Frame with repeat-last padding: indices past the end read the final
    /// real frame.
    pub fn padded_frame(&self, t: usize) -> &[f32] {
        self.frame(t.min(self.frames - 1))
    }

    pub fn raw(&self) -> &[f32] {
        &self.data
    }

    // ── TSPF container ──────────────────────────────────────────────────

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.data.len() * 4);
        out.extend_from_slice(&FEATURE_MAGIC);
        out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.frames as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Strict parse of a TSPF buffer; `write(read(x))` is byte-identical.
    pub fn from_bytes(video_id: impl Into<String>, bytes: &[u8]) -> Result<Self, FormatError> {
        let take4 = |offset: usize| -> Result<[u8; 4], FormatError> {
            bytes
                .get(offset..offset + 4)
                .map(|s| [s[0], s[1], s[2], s[3]])
                .ok_or_else(|| FormatError::Truncated { offset, needed: offset + 4 - bytes.len() })
        };
        if take4(0)? != FEATURE_MAGIC {
            return Err(FormatError::BadMagic { offset: 0 });
        }
        let version = u32::from_le_bytes(take4(4)?);
        if version != FEATURE_VERSION {
            return Err(FormatError::BadVersion { offset: 4, version });
        }
        let frames = u32::from_le_bytes(take4(8)?) as usize;
        let dim = u32::from_le_bytes(take4(12)?) as usize;
        if frames == 0 || dim == 0 {
            return Err(FormatError::ZeroDimension { offset: 8 });
        }
        let count = frames.checked_mul(dim).ok_or(FormatError::Overflow { offset: 8 })?;
        let end = count
            .checked_mul(4)
            .and_then(|payload| payload.checked_add(16))
            .ok_or(FormatError::Overflow { offset: 8 })?;
        let payload = bytes.get(16..end).ok_or_else(|| FormatError::Truncated {
            offset: bytes.len(),
            needed: end - bytes.len(),
        })?;
        if bytes.len() > end {
            return Err(FormatError::TrailingBytes { offset: end, extra: bytes.len() - end });
        }
        let mut data = Vec::with_capacity(count);
        for (i, chunk) in payload.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
            if !v.is_finite() {
                return Err(FormatError::NonFinite { offset: 16 + i * 4 });
            }
            data.push(v);
        }
        Ok(FeatureSequence { video_id: video_id.into(), frames, dim, data })
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<(), FeatureError> {
        let path = path.as_ref();
        let wrap = |source| FeatureError::Io { path: path.display().to_string(), source };
        let mut f = std::fs::File::create(path).map_err(wrap)?;
        f.write_all(&self.to_bytes()).map_err(wrap)
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self, FeatureError> {
        let path = path.as_ref();
        let display = path.display().to_string();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|source| FeatureError::Io { path: display.clone(), source })?;
        let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Self::from_bytes(id, &bytes).map_err(|source| FeatureError::Format { path: display, source })
    }
}

/// Mean of the frame vectors under one window, in compute precision `T`.
/// Frames at or past the real length repeat the last frame.
pub fn segment_feature<T: Scalar>(
    seq: &FeatureSequence,
    seg: &SegmentIndex,
    layout: &MultiScaleLayout,
) -> Result<Vec<T>, FeatureError> {
    if seg.end() > layout.padded_len {
        return Err(FeatureError::SegmentOutOfBounds {
            start: seg.start,
            end: seg.end(),
            padded: layout.padded_len,
        });
    }
    let dim = seq.dim();
    let mut acc = vec![T::zero(); dim];
    for t in seg.start..seg.end() {
        let frame = seq.padded_frame(t);
        for (a, &v) in acc.iter_mut().zip(frame) {
            *a = *a + T::from_f64(v as f64);
        }
    }
    let inv = T::from_f64(1.0 / seg.width as f64);
    for a in &mut acc {
        *a = *a * inv;
    }
    Ok(acc)
}

/// Pooled features for every segment of one scale, as an `L x dim` tensor.
pub fn scale_feature_matrix<T: Scalar>(
    seq: &FeatureSequence,
    layout: &MultiScaleLayout,
    scale: usize,
) -> Result<Tensor<T>, FeatureError> {
    let segments = layout
        .windowing_segments(scale)
        .map_err(|_| FeatureError::SegmentOutOfBounds { start: 0, end: 0, padded: layout.padded_len })?;
    let mut data = Vec::with_capacity(segments.len() * seq.dim());
    for seg in &segments {
        data.extend(segment_feature::<T>(seq, seg, layout)?);
    }
    Ok(Tensor::from_vec(vec![segments.len(), seq.dim()], data).expect("consistent dims"))
}
