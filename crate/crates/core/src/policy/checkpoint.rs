//! Binary checkpoint container.
//!
//! ```text
//! magic    8 bytes  "KLDPGCKP"
//! version  u32 LE
//! hlen     u64 LE   length of the JSON header
//! header   hlen bytes of UTF-8 JSON: kind, vocabulary, hyperparameters,
//!                   and the name and [rows, cols] of every array in order
//! data     f64 LE values of each array, row-major, in header order
//! ```

use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

use super::{AnyPolicy, MlpConfig, MlpPolicy, Policy, TabularPolicy};
use crate::lang::Vocab;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"KLDPGCKP";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0} (expected {FORMAT_VERSION})")]
    Version(u32),
    #[error("malformed checkpoint header: {0}")]
    Header(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Hyper {
    Mlp { k: usize, d: usize, h: usize },
    Tabular { k: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ArraySpec {
    name: String,
    dims: [usize; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    vocab: Vocab,
    hyper: Hyper,
    arrays: Vec<ArraySpec>,
}

fn arrays_of(policy: &AnyPolicy) -> (Hyper, Vec<(String, usize, usize)>) {
    match policy {
        AnyPolicy::Mlp(p) => {
            let c = p.config();
            let arrays = p
                .named_arrays()
                .into_iter()
                .map(|(n, r, c, _)| (n.to_string(), r, c))
                .collect();
            (
                Hyper::Mlp {
                    k: c.k,
                    d: c.d,
                    h: c.h,
                },
                arrays,
            )
        }
        AnyPolicy::Tabular(p) => (
            Hyper::Tabular { k: p.order() },
            vec![("logits".to_string(), p.rows(), p.vocab().len())],
        ),
    }
}

pub fn encode_checkpoint(policy: &AnyPolicy) -> Vec<u8> {
    let (hyper, arrays) = arrays_of(policy);
    let header = Header {
        format_version: FORMAT_VERSION,
        vocab: policy.vocab().clone(),
        hyper,
        arrays: arrays
            .into_iter()
            .map(|(name, r, c)| ArraySpec { name, dims: [r, c] })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(20 + json.len() + 8 * policy.num_params());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for x in policy.params() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<AnyPolicy, CheckpointError> {
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = &bytes[20..];
    if body.len() < hlen {
        return Err(CheckpointError::Header("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&body[..hlen])
        .map_err(|e| CheckpointError::Header(e.to_string()))?;
    if header.format_version != version {
        return Err(CheckpointError::Version(header.format_version));
    }
    let data = &body[hlen..];
    if !data.len().is_multiple_of(8) {
        return Err(CheckpointError::Shape(
            "data is not a whole number of f64".into(),
        ));
    }
    let theta: Vec<f64> = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let declared: usize = header.arrays.iter().map(|a| a.dims[0] * a.dims[1]).sum();
    if declared != theta.len() {
        return Err(CheckpointError::Shape(format!(
            "header declares {declared} values, file holds {}",
            theta.len()
        )));
    }
    let policy = match header.hyper {
        Hyper::Mlp { k, d, h } => {
            MlpPolicy::from_params(header.vocab, MlpConfig { k, d, h }, theta).map(AnyPolicy::Mlp)
        }
        Hyper::Tabular { k } => {
            TabularPolicy::from_params(header.vocab, k, theta).map(AnyPolicy::Tabular)
        }
    }
    .ok_or_else(|| {
        CheckpointError::Shape("parameter count disagrees with hyperparameters".into())
    })?;
    let (_, expected) = arrays_of(&policy);
    let got: Vec<(String, usize, usize)> = header
        .arrays
        .into_iter()
        .map(|a| (a.name, a.dims[0], a.dims[1]))
        .collect();
    if expected != got {
        return Err(CheckpointError::Shape(format!(
            "arrays {got:?} do not match the architecture {expected:?}"
        )));
    }
    if policy.params().iter().any(|x| !x.is_finite()) {
        return Err(CheckpointError::Shape("non-finite parameter".into()));
    }
    Ok(policy)
}

pub fn save_checkpoint(policy: &AnyPolicy, path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, encode_checkpoint(policy))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<AnyPolicy, CheckpointError> {
    decode_checkpoint(&fs::read(path)?)
}
