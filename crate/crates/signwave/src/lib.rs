//! signwave: sign-video to text translation built around a multi-scale
//! windowed segment representation.
//!
//! Videos are cut into overlapping windows at several temporal widths. A
//! hierarchical attention encoder aggregates each smallest-scale "pivot"
//! window with the larger windows that contain it (local consistency), then
//! lets the aggregated sequence attend to itself (non-local context). A
//! Transformer decoder emits the target sentence. Everything — tensors,
//! reverse-mode differentiation, the optimizer, BLEU/ROUGE scoring — is
//! implemented here from scratch so results are reproducible to the bit.

pub mod checkpoint;
pub mod corpus;
pub mod decoder;
pub mod encoder;
pub mod features;
pub mod gradcheck;
pub mod metrics;
pub mod scalar;
pub mod segment;
pub mod tensor;
pub mod train;

pub use scalar::Scalar;
pub use tensor::{Tape, Tensor, TensorError, Var};
