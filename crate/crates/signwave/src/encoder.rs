//! Hierarchical video encoder over the multi-scale segment grid.
//!
//! Pipeline: pooled segment features are projected into the model space,
//! every scale receives the same learned positional row (weight sharing
//! across scales), then one of six aggregation modes produces an `L x D`
//! memory for the decoder:
//!
//! - `single`      self-attention over the smallest scale only
//! - `sequential`  neighborhood attention per pivot, then self-attention
//! - `joint`       self-attention inside extended neighborhoods (pivot row
//!   kept), then the output feed-forward pair
//! - `pool`        position-wise max across scales, then self-attention
//! - `fc`          position-wise concat + feed-forward pair, then
//!   self-attention
//! - `nonrestrictive` every pivot attends to all segments of all scales,
//!   then self-attention
//!
//! Attention here is single-head throughout; no residual connections or
//! layer normalization beyond what the aggregation formulas state.

use crate::features::{scale_feature_matrix, FeatureError, FeatureSequence};
use crate::scalar::Scalar;
use crate::segment::{LayoutError, MultiScaleLayout, Neighborhood, SegmentIndex};
use crate::tensor::{Tape, Tensor, TensorError, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum EncoderError {
    #[error("sequence needs {have} positions but the table holds {max}")]
    Capacity { have: usize, max: usize },
    #[error("expected {expected} neighborhoods, got {got}")]
    NeighborhoodCount { expected: usize, got: usize },
    #[error("neighborhood for pivot {pivot} has wrong extended flag or pivot")]
    NeighborhoodShape { pivot: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderMode {
    Single,
    Sequential,
    Joint,
    Pool,
    Fc,
    Nonrestrictive,
}

impl EncoderMode {
    pub const ALL: [EncoderMode; 6] = [
        EncoderMode::Single,
        EncoderMode::Sequential,
        EncoderMode::Joint,
        EncoderMode::Pool,
        EncoderMode::Fc,
        EncoderMode::Nonrestrictive,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            EncoderMode::Single => "single",
            EncoderMode::Sequential => "sequential",
            EncoderMode::Joint => "joint",
            EncoderMode::Pool => "pool",
            EncoderMode::Fc => "fc",
            EncoderMode::Nonrestrictive => "nonrestrictive",
        }
    }
}

impl std::str::FromStr for EncoderMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EncoderMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown encoder mode {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Feature dimension arriving from the feature files.
    pub input_dim: usize,
    /// Model dimension D carried through to the decoder.
    pub model_dim: usize,
    /// Shared space for neighborhood (inter-scale) attention.
    pub inter_dim: usize,
    /// Space for sequence-level (intra-scale) self-attention.
    pub intra_dim: usize,
    pub widths: Vec<usize>,
    pub stride: usize,
    /// Positional table capacity; every encoded video needs L <= this.
    pub max_positions: usize,
    pub mode: EncoderMode,
}

impl EncoderConfig {
    pub fn scales(&self) -> usize {
        self.widths.len()
    }

    pub fn plan(&self, frames: usize) -> Result<MultiScaleLayout, LayoutError> {
        crate::segment::plan_layout(frames, &self.widths, self.stride)
    }
}

/// All learnable encoder weights. Every mode's tensors are always present so
/// checkpoints are mode-portable; modes simply leave foreign tensors
/// untouched.
#[derive(Debug, Clone)]
pub struct EncoderParams<T: Scalar> {
    pub cfg: EncoderConfig,
    pub input_weight: Tensor<T>,
    pub input_bias: Tensor<T>,
    pub pos_table: Tensor<T>,
    pub inter_proj: Tensor<T>,
    pub inter_fc1_weight: Tensor<T>,
    pub inter_fc1_bias: Tensor<T>,
    pub inter_fc2_weight: Tensor<T>,
    pub inter_fc2_bias: Tensor<T>,
    pub intra_proj: Tensor<T>,
    pub intra_fc1_weight: Tensor<T>,
    pub intra_fc1_bias: Tensor<T>,
    pub intra_fc2_weight: Tensor<T>,
    pub intra_fc2_bias: Tensor<T>,
    pub joint_proj: Tensor<T>,
    pub joint_fc1_weight: Tensor<T>,
    pub joint_fc1_bias: Tensor<T>,
    pub joint_fc2_weight: Tensor<T>,
    pub joint_fc2_bias: Tensor<T>,
    pub fuse_fc1_weight: Tensor<T>,
    pub fuse_fc1_bias: Tensor<T>,
    pub fuse_fc2_weight: Tensor<T>,
    pub fuse_fc2_bias: Tensor<T>,
}

impl<T: Scalar> EncoderParams<T> {
    /// Matrices get uniform(-1/sqrt(fan_in), ..) init, biases and the
    /// positional table start at zero.
    pub fn new<R: Rng>(cfg: EncoderConfig, rng: &mut R) -> Self {
        let (din, d, dp, dpp) = (cfg.input_dim, cfg.model_dim, cfg.inter_dim, cfg.intra_dim);
        let fused_in = cfg.scales() * d;
        let max_positions = cfg.max_positions;
        EncoderParams {
            cfg,
            input_weight: Tensor::fan_in_init(din, vec![din, d], rng),
            input_bias: Tensor::trainable_zeros(vec![d]),
            pos_table: Tensor::trainable_zeros(vec![max_positions, d]),
            inter_proj: Tensor::fan_in_init(d, vec![d, dp], rng),
            inter_fc1_weight: Tensor::fan_in_init(dp, vec![dp, d], rng),
            inter_fc1_bias: Tensor::trainable_zeros(vec![d]),
            inter_fc2_weight: Tensor::fan_in_init(d, vec![d, d], rng),
            inter_fc2_bias: Tensor::trainable_zeros(vec![d]),
            intra_proj: Tensor::fan_in_init(d, vec![d, dpp], rng),
            intra_fc1_weight: Tensor::fan_in_init(dpp, vec![dpp, d], rng),
            intra_fc1_bias: Tensor::trainable_zeros(vec![d]),
            intra_fc2_weight: Tensor::fan_in_init(d, vec![d, d], rng),
            intra_fc2_bias: Tensor::trainable_zeros(vec![d]),
            joint_proj: Tensor::fan_in_init(d, vec![d, dp], rng),
            joint_fc1_weight: Tensor::fan_in_init(dp, vec![dp, d], rng),
            joint_fc1_bias: Tensor::trainable_zeros(vec![d]),
            joint_fc2_weight: Tensor::fan_in_init(d, vec![d, d], rng),
            joint_fc2_bias: Tensor::trainable_zeros(vec![d]),
            fuse_fc1_weight: Tensor::fan_in_init(fused_in, vec![fused_in, d], rng),
            fuse_fc1_bias: Tensor::trainable_zeros(vec![d]),
            fuse_fc2_weight: Tensor::fan_in_init(d, vec![d, d], rng),
            fuse_fc2_bias: Tensor::trainable_zeros(vec![d]),
        }
    }

    pub fn visit(&self, f: &mut impl FnMut(&str, &Tensor<T>)) {
        f("encoder.input_weight", &self.input_weight);
        f("encoder.input_bias", &self.input_bias);
        f("encoder.pos_table", &self.pos_table);
        f("encoder.inter_proj", &self.inter_proj);
        f("encoder.inter_fc1_weight", &self.inter_fc1_weight);
        f("encoder.inter_fc1_bias", &self.inter_fc1_bias);
        f("encoder.inter_fc2_weight", &self.inter_fc2_weight);
        f("encoder.inter_fc2_bias", &self.inter_fc2_bias);
        f("encoder.intra_proj", &self.intra_proj);
        f("encoder.intra_fc1_weight", &self.intra_fc1_weight);
        f("encoder.intra_fc1_bias", &self.intra_fc1_bias);
        f("encoder.intra_fc2_weight", &self.intra_fc2_weight);
        f("encoder.intra_fc2_bias", &self.intra_fc2_bias);
        f("encoder.joint_proj", &self.joint_proj);
        f("encoder.joint_fc1_weight", &self.joint_fc1_weight);
        f("encoder.joint_fc1_bias", &self.joint_fc1_bias);
        f("encoder.joint_fc2_weight", &self.joint_fc2_weight);
        f("encoder.joint_fc2_bias", &self.joint_fc2_bias);
        f("encoder.fuse_fc1_weight", &self.fuse_fc1_weight);
        f("encoder.fuse_fc1_bias", &self.fuse_fc1_bias);
        f("encoder.fuse_fc2_weight", &self.fuse_fc2_weight);
        f("encoder.fuse_fc2_bias", &self.fuse_fc2_bias);
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&str, &mut Tensor<T>)) {
        f("encoder.input_weight", &mut self.input_weight);
        f("encoder.input_bias", &mut self.input_bias);
        f("encoder.pos_table", &mut self.pos_table);
        f("encoder.inter_proj", &mut self.inter_proj);
        f("encoder.inter_fc1_weight", &mut self.inter_fc1_weight);
        f("encoder.inter_fc1_bias", &mut self.inter_fc1_bias);
        f("encoder.inter_fc2_weight", &mut self.inter_fc2_weight);
        f("encoder.inter_fc2_bias", &mut self.inter_fc2_bias);
        f("encoder.intra_proj", &mut self.intra_proj);
        f("encoder.intra_fc1_weight", &mut self.intra_fc1_weight);
        f("encoder.intra_fc1_bias", &mut self.intra_fc1_bias);
        f("encoder.intra_fc2_weight", &mut self.intra_fc2_weight);
        f("encoder.intra_fc2_bias", &mut self.intra_fc2_bias);
        f("encoder.joint_proj", &mut self.joint_proj);
        f("encoder.joint_fc1_weight", &mut self.joint_fc1_weight);
        f("encoder.joint_fc1_bias", &mut self.joint_fc1_bias);
        f("encoder.joint_fc2_weight", &mut self.joint_fc2_weight);
        f("encoder.joint_fc2_bias", &mut self.joint_fc2_bias);
        f("encoder.fuse_fc1_weight", &mut self.fuse_fc1_weight);
        f("encoder.fuse_fc1_bias", &mut self.fuse_fc1_bias);
        f("encoder.fuse_fc2_weight", &mut self.fuse_fc2_weight);
        f("encoder.fuse_fc2_bias", &mut self.fuse_fc2_bias);
    }

    /// Registers every tensor on a tape; `binding` collects (name, var)
    /// pairs for gradient harvesting.
    pub fn register(&self, tape: &mut Tape<T>, binding: &mut Vec<(String, Var)>) -> EncoderVars {
        let mut vars = Vec::with_capacity(22);
        self.visit(&mut |name, tensor| {
            let v = tape.leaf(tensor);
            binding.push((name.to_string(), v));
            vars.push(v);
        });
        EncoderVars {
            input_weight: vars[0],
            input_bias: vars[1],
            pos_table: vars[2],
            inter_proj: vars[3],
            inter_fc1_weight: vars[4],
            inter_fc1_bias: vars[5],
            inter_fc2_weight: vars[6],
            inter_fc2_bias: vars[7],
            intra_proj: vars[8],
            intra_fc1_weight: vars[9],
            intra_fc1_bias: vars[10],
            intra_fc2_weight: vars[11],
            intra_fc2_bias: vars[12],
            joint_proj: vars[13],
            joint_fc1_weight: vars[14],
            joint_fc1_bias: vars[15],
            joint_fc2_weight: vars[16],
            joint_fc2_bias: vars[17],
            fuse_fc1_weight: vars[18],
            fuse_fc1_bias: vars[19],
            fuse_fc2_weight: vars[20],
            fuse_fc2_bias: vars[21],
        }
    }
}

/// Tape handles for one registration of [`EncoderParams`].
#[derive(Debug, Clone, Copy)]
pub struct EncoderVars {
    pub input_weight: Var,
    pub input_bias: Var,
    pub pos_table: Var,
    pub inter_proj: Var,
    pub inter_fc1_weight: Var,
    pub inter_fc1_bias: Var,
    pub inter_fc2_weight: Var,
    pub inter_fc2_bias: Var,
    pub intra_proj: Var,
    pub intra_fc1_weight: Var,
    pub intra_fc1_bias: Var,
    pub intra_fc2_weight: Var,
    pub intra_fc2_bias: Var,
    pub joint_proj: Var,
    pub joint_fc1_weight: Var,
    pub joint_fc1_bias: Var,
    pub joint_fc2_weight: Var,
    pub joint_fc2_bias: Var,
    pub fuse_fc1_weight: Var,
    pub fuse_fc1_bias: Var,
    pub fuse_fc2_weight: Var,
    pub fuse_fc2_bias: Var,
}

/// Attention weights of one pivot over its neighborhood members, for
/// inspection tooling.
#[derive(Debug, Clone, Serialize)]
pub struct PivotTrace {
    pub pivot: usize,
    pub members: Vec<(SegmentIndex, f64)>,
}

/// Frozen encoder output for one video.
#[derive(Debug, Clone)]
pub struct EncodedVideo<T: Scalar> {
    pub memory: Tensor<T>,
    pub layout: MultiScaleLayout,
    pub attention_trace: Option<Vec<PivotTrace>>,
}

// ── Stages ──────────────────────────────────────────────────────────────

/// Adds the same positional row k to index k of every scale. Fails when the
/// sequence outgrows the table.
pub fn shared_positional_encode<T: Scalar>(
    tape: &mut Tape<T>,
    scale_features: &[Var],
    pos_table: Var,
    positions: usize,
) -> Result<Vec<Var>, EncoderError> {
    let capacity = tape.shape(pos_table)[0];
    if positions > capacity {
        return Err(EncoderError::Capacity { have: positions, max: capacity });
    }
    let rows = tape.slice_rows(pos_table, 0, positions)?;
    scale_features
        .iter()
        .map(|&x| tape.add(x, rows).map_err(EncoderError::from))
        .collect()
}

/// Gathers projected member rows in neighborhood order (pivot first).
fn gather_members<T: Scalar>(
    tape: &mut Tape<T>,
    projected: &[Var],
    members: &[SegmentIndex],
) -> Result<Var, EncoderError> {
    let mut runs = Vec::new();
    let mut i = 0;
    while i < members.len() {
        let scale = members[i].scale;
        let mut indices = Vec::new();
        while i < members.len() && members[i].scale == scale {
            indices.push(members[i].index);
            i += 1;
        }
        runs.push(tape.gather_rows(projected[scale], &indices)?);
    }
    if runs.len() == 1 {
        Ok(runs[0])
    } else {
        Ok(tape.concat_rows(&runs)?)
    }
}

fn feed_forward<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
) -> Result<Var, EncoderError> {
    let hidden = tape.linear(x, w1, b1)?;
    let activated = tape.gelu(hidden)?;
    Ok(tape.linear(activated, w2, b2)?)
}

fn check_neighborhoods(
    neighborhoods: &[Neighborhood],
    positions: usize,
    extended: bool,
) -> Result<(), EncoderError> {
    if neighborhoods.len() != positions {
        return Err(EncoderError::NeighborhoodCount { expected: positions, got: neighborhoods.len() });
    }
    for (k, n) in neighborhoods.iter().enumerate() {
        let pivot_ok = n.pivot.scale == 0
            && n.pivot.index == k
            && n.members.first() == Some(&n.pivot)
            && n.extended == extended;
        if !pivot_ok {
            return Err(EncoderError::NeighborhoodShape { pivot: k });
        }
    }
    Ok(())
}

/// Pivot-queried attention over each neighborhood, then the feed-forward
/// pair: projected members form the key/value rows, the projected pivot is
/// the query, and the attended context goes through two linear layers with
/// a GELU between.
pub fn inter_scale_aggregate<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &EncoderVars,
    pos_features: &[Var],
    neighborhoods: &[Neighborhood],
    trace: Option<&mut Vec<PivotTrace>>,
) -> Result<Var, EncoderError> {
    let positions = tape.shape(pos_features[0])[0];
    check_neighborhoods(neighborhoods, positions, false)?;
    pivot_query_aggregate(tape, vars.inter_proj, pos_features, neighborhoods, trace).and_then(
        |ctx| {
            feed_forward(
                tape,
                ctx,
                vars.inter_fc1_weight,
                vars.inter_fc1_bias,
                vars.inter_fc2_weight,
                vars.inter_fc2_bias,
            )
        },
    )
}

fn pivot_query_aggregate<T: Scalar>(
    tape: &mut Tape<T>,
    proj_weight: Var,
    pos_features: &[Var],
    neighborhoods: &[Neighborhood],
    mut trace: Option<&mut Vec<PivotTrace>>,
) -> Result<Var, EncoderError> {
    let projected: Vec<Var> = pos_features
        .iter()
        .map(|&x| tape.matmul(x, proj_weight))
        .collect::<Result<_, _>>()?;
    let mut contexts = Vec::with_capacity(neighborhoods.len());
    for n in neighborhoods {
        let member_rows = gather_members(tape, &projected, &n.members)?;
        let query = tape.slice_rows(member_rows, 0, 1)?;
        let (ctx, weights) = tape.attention(query, member_rows, member_rows, None)?;
        if let Some(out) = trace.as_deref_mut() {
            out.push(PivotTrace {
                pivot: n.pivot.index,
                members: n
                    .members
                    .iter()
                    .zip(tape.value(weights))
                    .map(|(&m, &w)| (m, w.as_f64()))
                    .collect(),
            });
        }
        contexts.push(ctx);
    }
    Ok(tape.concat_rows(&contexts)?)
}

/// Self-attention across all aggregated positions followed by the
/// feed-forward pair; supplies sequence-level context.
pub fn intra_scale_aggregate<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &EncoderVars,
    aggregated: Var,
) -> Result<Var, EncoderError> {
    let projected = tape.matmul(aggregated, vars.intra_proj)?;
    let (attended, _) = tape.attention(projected, projected, projected, None)?;
    feed_forward(
        tape,
        attended,
        vars.intra_fc1_weight,
        vars.intra_fc1_bias,
        vars.intra_fc2_weight,
        vars.intra_fc2_bias,
    )
}

/// Full self-attention inside each extended neighborhood; the pivot's output
/// row (member 0) is kept and passed through the output feed-forward pair.
pub fn joint_aggregate<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &EncoderVars,
    pos_features: &[Var],
    neighborhoods: &[Neighborhood],
    mut trace: Option<&mut Vec<PivotTrace>>,
) -> Result<Var, EncoderError> {
    let positions = tape.shape(pos_features[0])[0];
    check_neighborhoods(neighborhoods, positions, true)?;
    let projected: Vec<Var> = pos_features
        .iter()
        .map(|&x| tape.matmul(x, vars.joint_proj))
        .collect::<Result<_, _>>()?;
    let mut contexts = Vec::with_capacity(neighborhoods.len());
    for n in neighborhoods {
        let member_rows = gather_members(tape, &projected, &n.members)?;
        let (attended, weights) = tape.attention(member_rows, member_rows, member_rows, None)?;
        let pivot_row = tape.slice_rows(attended, 0, 1)?;
        if let Some(out) = trace.as_deref_mut() {
            let q = n.members.len();
            out.push(PivotTrace {
                pivot: n.pivot.index,
                members: n
                    .members
                    .iter()
                    .zip(&tape.value(weights)[0..q])
                    .map(|(&m, &w)| (m, w.as_f64()))
                    .collect(),
            });
        }
        contexts.push(pivot_row);
    }
    let stacked = tape.concat_rows(&contexts)?;
    feed_forward(
        tape,
        stacked,
        vars.joint_fc1_weight,
        vars.joint_fc1_bias,
        vars.joint_fc2_weight,
        vars.joint_fc2_bias,
    )
}

// ── Whole-encoder forward ───────────────────────────────────────────────

/// Runs the encoder on an open tape and returns the `L x D` memory.
pub fn encode_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &EncoderVars,
    cfg: &EncoderConfig,
    seq: &FeatureSequence,
    layout: &MultiScaleLayout,
    want_trace: bool,
) -> Result<(Var, Option<Vec<PivotTrace>>), EncoderError> {
    if seq.dim() != cfg.input_dim {
        return Err(FeatureError::DimMismatch { expected: cfg.input_dim, got: seq.dim() }.into());
    }
    let positions = layout.pivot_count;
    let mut projected = Vec::with_capacity(layout.scales());
    for scale in 0..layout.scales() {
        let pooled = scale_feature_matrix::<T>(seq, layout, scale)?;
        let raw = tape.constant(pooled.shape().to_vec(), pooled.data().to_vec())?;
        projected.push(tape.linear(raw, vars.input_weight, vars.input_bias)?);
    }
    let pos_features = shared_positional_encode(tape, &projected, vars.pos_table, positions)?;

    let mut trace_buf = want_trace.then(Vec::new);
    let memory = match cfg.mode {
        EncoderMode::Single => intra_scale_aggregate(tape, vars, pos_features[0])?,
        EncoderMode::Sequential => {
            let neighborhoods: Vec<Neighborhood> = (0..positions)
                .map(|k| layout.surrounding_neighborhood(k))
                .collect::<Result<_, _>>()?;
            let local =
                inter_scale_aggregate(tape, vars, &pos_features, &neighborhoods, trace_buf.as_mut())?;
            intra_scale_aggregate(tape, vars, local)?
        }
        EncoderMode::Joint => {
            let neighborhoods: Vec<Neighborhood> = (0..positions)
                .map(|k| layout.extended_surrounding_neighborhood(k))
                .collect::<Result<_, _>>()?;
            joint_aggregate(tape, vars, &pos_features, &neighborhoods, trace_buf.as_mut())?
        }
        EncoderMode::Pool => {
            let fused = tape.elem_max(&pos_features)?;
            intra_scale_aggregate(tape, vars, fused)?
        }
        EncoderMode::Fc => {
            let wide = tape.concat_cols(&pos_features)?;
            let fused = feed_forward(
                tape,
                wide,
                vars.fuse_fc1_weight,
                vars.fuse_fc1_bias,
                vars.fuse_fc2_weight,
                vars.fuse_fc2_bias,
            )?;
            intra_scale_aggregate(tape, vars, fused)?
        }
        EncoderMode::Nonrestrictive => {
            let neighborhoods: Vec<Neighborhood> = (0..positions)
                .map(|k| layout.full_neighborhood(k))
                .collect::<Result<_, _>>()?;
            let local = pivot_query_aggregate(
                tape,
                vars.inter_proj,
                &pos_features,
                &neighborhoods,
                trace_buf.as_mut(),
            )?;
            let local = feed_forward(
                tape,
                local,
                vars.inter_fc1_weight,
                vars.inter_fc1_bias,
                vars.inter_fc2_weight,
                vars.inter_fc2_bias,
            )?;
            intra_scale_aggregate(tape, vars, local)?
        }
    };
    debug_assert_eq!(tape.shape(memory), &[positions, cfg.model_dim]);
    Ok((memory, trace_buf))
}

/// Frozen-parameter encode: plans nothing, consumes the given layout, and
/// returns a plain tensor plus the optional attention trace.
pub fn encode<T: Scalar>(
    params: &EncoderParams<T>,
    seq: &FeatureSequence,
    layout: &MultiScaleLayout,
    want_trace: bool,
) -> Result<EncodedVideo<T>, EncoderError> {
    let mut tape = Tape::new();
    let mut binding = Vec::new();
    let vars = params.register(&mut tape, &mut binding);
    let (memory, attention_trace) =
        encode_on_tape(&mut tape, &vars, &params.cfg, seq, layout, want_trace)?;
    Ok(EncodedVideo { memory: tape.extract(memory), layout: layout.clone(), attention_trace })
}

#[cfg(test)]
mod tests;
