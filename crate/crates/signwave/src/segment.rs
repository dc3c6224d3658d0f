//! Multi-scale window geometry: where every segment of a video starts and
//! ends, and which larger segments surround each smallest-scale pivot.
//!
//! Everything here is integer arithmetic over frame indices; features never
//! enter. All scales carry the same number of segments: the count comes from
//! covering the smallest width at the given stride, and the video is padded
//! (by repeating its last frame, materialized elsewhere) so the largest
//! width fits at the final start position.

use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LayoutError {
    #[error("widths list must be non-empty")]
    NoWidths,
    #[error("widths must be >= 1 and strictly ascending, got {0:?}")]
    BadWidths(Vec<usize>),
    #[error("stride must be >= 1")]
    BadStride,
    #[error("video must have at least one frame")]
    EmptyVideo,
    #[error("scale {scale} out of range (have {scales})")]
    ScaleOutOfRange { scale: usize, scales: usize },
    #[error("pivot {pivot} out of range (have {pivots})")]
    PivotOutOfRange { pivot: usize, pivots: usize },
}

/// One window: `[start, start + width)` in padded-frame coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct SegmentIndex {
    pub scale: usize,
    pub index: usize,
    pub start: usize,
    pub width: usize,
}

impl SegmentIndex {
    pub fn end(&self) -> usize {
        self.start + self.width
    }

    /// Closed containment on frame ranges: every frame of `self` lies in
    /// `other`.
    pub fn contained_in(&self, other: &SegmentIndex) -> bool {
        other.start <= self.start && self.end() <= other.end()
    }
}

/// Geometry of all windowed segments of one video across every scale.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MultiScaleLayout {
    pub original_len: usize,
    pub widths: Vec<usize>,
    pub stride: usize,
    /// Segments per scale (identical for all scales).
    pub pivot_count: usize,
    pub padded_len: usize,
}

/// A pivot segment with the segments attending alongside it. The pivot is
/// always `members[0]`; the remainder is ordered by `(scale, index)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Neighborhood {
    pub pivot: SegmentIndex,
    pub members: Vec<SegmentIndex>,
    pub extended: bool,
}

/// Plans the segment grid for a video of `frames` frames.
///
/// The pivot count covers the smallest width: `L = (max(frames, w0) - w0) /
/// stride + 1`. Videos shorter than the smallest width get one pivot.
pub fn plan_layout(
    frames: usize,
    widths: &[usize],
    stride: usize,
) -> Result<MultiScaleLayout, LayoutError> {
    if widths.is_empty() {
        return Err(LayoutError::NoWidths);
    }
    if widths[0] == 0 || widths.windows(2).any(|w| w[1] <= w[0]) {
        return Err(LayoutError::BadWidths(widths.to_vec()));
    }
    if stride == 0 {
        return Err(LayoutError::BadStride);
    }
    if frames == 0 {
        return Err(LayoutError::EmptyVideo);
    }
    let w0 = widths[0];
    let covered = frames.max(w0);
    let pivot_count = (covered - w0) / stride + 1;
    let padded_len = (pivot_count - 1) * stride + widths[widths.len() - 1];
    Ok(MultiScaleLayout {
        original_len: frames,
        widths: widths.to_vec(),
        stride,
        pivot_count,
        padded_len,
    })
}

impl MultiScaleLayout {
    pub fn scales(&self) -> usize {
        self.widths.len()
    }

    fn check_scale(&self, scale: usize) -> Result<(), LayoutError> {
        if scale >= self.scales() {
            return Err(LayoutError::ScaleOutOfRange { scale, scales: self.scales() });
        }
        Ok(())
    }

    fn check_pivot(&self, pivot: usize) -> Result<(), LayoutError> {
        if pivot >= self.pivot_count {
            return Err(LayoutError::PivotOutOfRange { pivot, pivots: self.pivot_count });
        }
        Ok(())
    }

    pub fn segment(&self, scale: usize, index: usize) -> SegmentIndex {
        SegmentIndex { scale, index, start: index * self.stride, width: self.widths[scale] }
    }

    /// All segments of one scale, in index order.
    pub fn windowing_segments(&self, scale: usize) -> Result<Vec<SegmentIndex>, LayoutError> {
        self.check_scale(scale)?;
        Ok((0..self.pivot_count).map(|k| self.segment(scale, k)).collect())
    }

    /// The pivot plus every larger-scale segment whose frames contain the
    /// pivot's frames.
    pub fn surrounding_neighborhood(&self, pivot: usize) -> Result<Neighborhood, LayoutError> {
        self.check_pivot(pivot)?;
        let p = self.segment(0, pivot);
        let mut members = vec![p];
        for scale in 1..self.scales() {
            let (lo, hi) = self.containing_range(pivot, scale);
            for j in lo..=hi {
                members.push(self.segment(scale, j));
            }
        }
        Ok(Neighborhood { pivot: p, members, extended: false })
    }

    /// The surrounding neighborhood united with every smallest-scale
    /// segment. The pivot appears once, first; the rest follows in
    /// `(scale, index)` order.
    pub fn extended_surrounding_neighborhood(
        &self,
        pivot: usize,
    ) -> Result<Neighborhood, LayoutError> {
        let surrounding = self.surrounding_neighborhood(pivot)?;
        let mut members = vec![surrounding.pivot];
        members.extend((0..self.pivot_count).filter(|&j| j != pivot).map(|j| self.segment(0, j)));
        members.extend(surrounding.members.into_iter().skip(1));
        Ok(Neighborhood { pivot: self.segment(0, pivot), members, extended: true })
    }

    /// Pivot plus every segment of every scale, containment ignored
    /// (the "attend to everything" encoder variant).
    pub fn full_neighborhood(&self, pivot: usize) -> Result<Neighborhood, LayoutError> {
        self.check_pivot(pivot)?;
        let p = self.segment(0, pivot);
        let mut members = vec![p];
        for scale in 0..self.scales() {
            for j in 0..self.pivot_count {
                if scale == 0 && j == pivot {
                    continue;
                }
                members.push(self.segment(scale, j));
            }
        }
        Ok(Neighborhood { pivot: p, members, extended: true })
    }

    /// Index range `[lo, hi]` of segments at `scale` containing pivot `k`,
    /// from the two containment inequalities
    /// `j*s <= k*s` and `k*s + w0 <= j*s + w_scale`.
    fn containing_range(&self, k: usize, scale: usize) -> (usize, usize) {
        let s = self.stride;
        let w0 = self.widths[0];
        let w = self.widths[scale];
        let pivot_end = k * s + w0;
        let lo = if pivot_end > w { (pivot_end - w).div_ceil(s) } else { 0 };
        (lo, k)
    }
}
