//! Checkpoint container: one newline-terminated JSON header describing the
//! run (config snapshot, vocabulary, PRNG state, tensor directory) followed
//! by the raw little-endian tensor payload in directory order. Bit-exact:
//! save → load → forward reproduces logits exactly on one platform.

use crate::corpus::Vocab;
use crate::scalar::Scalar;
use crate::tensor::AdamState;
use crate::train::{TrainConfig, TrainState, TranslationModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("header is not valid json: {0}")]
    Header(String),
    #[error("missing newline after header")]
    MissingNewline,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint dtype {got} does not match requested {expected}")]
    DtypeMismatch { expected: &'static str, got: String },
    #[error("tensor {name}: {problem}")]
    BadTensor { name: String, problem: String },
    #[error("payload ends at {have} bytes but tensor directory needs {need}")]
    PayloadTruncated { need: u64, have: u64 },
    #[error("bad rng state: {0}")]
    BadRng(String),
    #[error("model construction failed: {0}")]
    Model(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: u64,
    pub byte_len: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RngState {
    pub seed_hex: String,
    pub word_pos: String,
    pub stream: u64,
}

impl RngState {
    fn capture(rng: &ChaCha8Rng) -> Self {
        let seed: [u8; 32] = rng.get_seed();
        RngState {
            seed_hex: seed.iter().map(|b| format!("{b:02x}")).collect(),
            word_pos: rng.get_word_pos().to_string(),
            stream: rng.get_stream(),
        }
    }

    fn restore(&self) -> Result<ChaCha8Rng, CheckpointError> {
        if self.seed_hex.len() != 64 || !self.seed_hex.is_ascii() {
            return Err(CheckpointError::BadRng("seed must be 64 hex chars".into()));
        }
        let mut seed = [0u8; 32];
        for (i, chunk) in self.seed_hex.as_bytes().chunks(2).enumerate() {
            let s = std::str::from_utf8(chunk).map_err(|e| CheckpointError::BadRng(e.to_string()))?;
            seed[i] = u8::from_str_radix(s, 16).map_err(|e| CheckpointError::BadRng(e.to_string()))?;
        }
        let word_pos: u128 =
            self.word_pos.parse().map_err(|_| CheckpointError::BadRng("bad word_pos".into()))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(word_pos);
        Ok(rng)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub dtype: String,
    pub epoch: usize,
    pub optimizer_step: u64,
    pub config: TrainConfig,
    pub input_dim: usize,
    pub vocab: Vec<String>,
    pub rng: RngState,
    pub tensors: Vec<TensorRecord>,
}

/// A deserialized checkpoint ready for inference or further training.
pub struct LoadedCheckpoint<T: Scalar> {
    pub state: TrainState<T>,
    pub config: TrainConfig,
    pub vocab: Vocab,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io { path: path.display().to_string(), source }
}

/// Serializes the full training state: model tensors in visit order, then
/// optimizer moment buffers sorted by parameter name.
pub fn save<T: Scalar>(
    path: impl AsRef<Path>,
    state: &TrainState<T>,
    config: &TrainConfig,
    vocab: &Vocab,
) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    let mut records = Vec::new();
    let mut payload: Vec<u8> = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, data: &[T]| {
        let offset = payload.len() as u64;
        for v in data {
            v.write_le(&mut payload);
        }
        records.push(TensorRecord {
            name,
            shape,
            dtype: T::DTYPE.to_string(),
            offset,
            byte_len: (data.len() * T::BYTE_WIDTH) as u64,
        });
    };
    state.model.visit(&mut |name, tensor| {
        push(name.to_string(), tensor.shape().to_vec(), tensor.data());
    });
    for (name, m, v) in state.optimizer.sorted_slots() {
        push(format!("optim.{name}.m"), vec![m.len()], m);
        push(format!("optim.{name}.v"), vec![v.len()], v);
    }

    let header = CheckpointHeader {
        format_version: CHECKPOINT_VERSION,
        dtype: T::DTYPE.to_string(),
        epoch: state.epoch,
        optimizer_step: state.optimizer.step(),
        config: config.clone(),
        input_dim: state.input_dim,
        vocab: vocab.tokens().to_vec(),
        rng: RngState::capture(&state.rng),
        tensors: records,
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    out.extend_from_slice(&payload);
    let mut file = std::fs::File::create(path).map_err(io_err(path))?;
    file.write_all(&out).map_err(io_err(path))
}

/// Splits a checkpoint byte stream into its parsed header and payload,
/// validating the tensor directory against the payload bounds.
pub fn read_header(bytes: &[u8]) -> Result<(CheckpointHeader, &[u8]), CheckpointError> {
    let newline =
        bytes.iter().position(|&b| b == b'\n').ok_or(CheckpointError::MissingNewline)?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[..newline])
        .map_err(|e| CheckpointError::Header(e.to_string()))?;
    if header.format_version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version(header.format_version));
    }
    let payload = &bytes[newline + 1..];
    for record in &header.tensors {
        let volume: u64 = record.shape.iter().map(|&d| d as u64).product();
        let width = match record.dtype.as_str() {
            "f32" => 4u64,
            "f64" => 8u64,
            other => {
                return Err(CheckpointError::BadTensor {
                    name: record.name.clone(),
                    problem: format!("unknown dtype {other}"),
                })
            }
        };
        if volume.checked_mul(width) != Some(record.byte_len) {
            return Err(CheckpointError::BadTensor {
                name: record.name.clone(),
                problem: "shape does not match byte length".into(),
            });
        }
        let end = record
            .offset
            .checked_add(record.byte_len)
            .ok_or(CheckpointError::PayloadTruncated { need: u64::MAX, have: payload.len() as u64 })?;
        if end > payload.len() as u64 {
            return Err(CheckpointError::PayloadTruncated { need: end, have: payload.len() as u64 });
        }
    }
    Ok((header, payload))
}

/// Dtype tag without materializing tensors (CLI precision dispatch).
pub fn peek_dtype(path: impl AsRef<Path>) -> Result<String, CheckpointError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let (header, _) = read_header(&bytes)?;
    Ok(header.dtype)
}

fn tensor_data<T: Scalar>(record: &TensorRecord, payload: &[u8]) -> Vec<T> {
    let start = record.offset as usize;
    let end = start + record.byte_len as usize;
    payload[start..end].chunks_exact(T::BYTE_WIDTH).map(T::read_le).collect()
}

/// Rebuilds the full training state from checkpoint bytes.
pub fn load_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<LoadedCheckpoint<T>, CheckpointError> {
    let (header, payload) = read_header(bytes)?;
    if header.dtype != T::DTYPE {
        return Err(CheckpointError::DtypeMismatch { expected: T::DTYPE, got: header.dtype });
    }
    header.config.validate().map_err(|e| CheckpointError::Model(e.to_string()))?;
    let vocab = Vocab::from_tokens(header.vocab.clone());
    let mut init_rng = ChaCha8Rng::seed_from_u64(0);
    let mut model =
        TranslationModel::<T>::new(&header.config, header.input_dim, vocab.size(), &mut init_rng)
            .map_err(|e| CheckpointError::Model(e.to_string()))?;

    let mut directory: std::collections::HashMap<&str, &TensorRecord> =
        header.tensors.iter().map(|r| (r.name.as_str(), r)).collect();
    let mut problem: Option<CheckpointError> = None;
    model.visit_mut(&mut |name, tensor| {
        if problem.is_some() {
            return;
        }
        match directory.remove(name) {
            Some(record) if record.shape == tensor.shape() => {
                let data = tensor_data::<T>(record, payload);
                tensor.data_mut().copy_from_slice(&data);
            }
            Some(record) => {
                problem = Some(CheckpointError::BadTensor {
                    name: name.to_string(),
                    problem: format!(
                        "shape {:?} does not match model {:?}",
                        record.shape,
                        tensor.shape()
                    ),
                });
            }
            None => {
                problem = Some(CheckpointError::BadTensor {
                    name: name.to_string(),
                    problem: "missing from checkpoint".into(),
                });
            }
        }
    });
    if let Some(e) = problem {
        return Err(e);
    }

    let mut optimizer = AdamState::<T>::new();
    optimizer.set_step(header.optimizer_step);
    let mut moment_names: Vec<String> = directory
        .keys()
        .filter_map(|n| n.strip_prefix("optim.").and_then(|n| n.strip_suffix(".m")))
        .map(str::to_string)
        .collect();
    moment_names.sort();
    for name in moment_names {
        let m_rec = directory.remove(format!("optim.{name}.m").as_str());
        let v_rec = directory.remove(format!("optim.{name}.v").as_str());
        if let (Some(m_rec), Some(v_rec)) = (m_rec, v_rec) {
            optimizer.restore_slot(&name, tensor_data::<T>(m_rec, payload), tensor_data::<T>(v_rec, payload));
        } else {
            return Err(CheckpointError::BadTensor {
                name: name.clone(),
                problem: "optimizer slot missing m or v".into(),
            });
        }
    }

    let rng = header.rng.restore()?;
    Ok(LoadedCheckpoint {
        state: TrainState {
            model,
            optimizer,
            rng,
            epoch: header.epoch,
            input_dim: header.input_dim,
        },
        config: header.config,
        vocab,
    })
}

pub fn load<T: Scalar>(path: impl AsRef<Path>) -> Result<LoadedCheckpoint<T>, CheckpointError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    load_from_bytes(&bytes)
}
