//! Checkpoint file format.
//!
//! ```text
//! magic      8 bytes   "TRNKCKPT"
//! version    u32 LE
//! header_len u64 LE
//! header     JSON: config, epoch, steps, RNG state, tensor names and shapes
//! tensors    f64 LE, row-major, in header order
//! losses     f64 LE, one per completed epoch
//! digest     SHA-256 of every preceding byte
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::model::TripletModel;
use crate::numerics::{HasParams, Matrix, RngSnapshot};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"TRNKCKPT";
const DIGEST_LEN: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainRngState {
    pub shuffle: RngSnapshot,
    pub dropout: RngSnapshot,
}

/// Trained parameters plus everything needed to reproduce them.
/// Optimizer moments are not stored.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: TripletModel,
    pub rng: TrainRngState,
    /// Completed epochs.
    pub epoch: usize,
    /// Optimizer steps taken.
    pub steps: u64,
    pub loss_history: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    config: TrainConfig,
    epoch: usize,
    steps: u64,
    rng: TrainRngState,
    tensors: Vec<TensorEntry>,
    loss_history_len: usize,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

fn push_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let params = self.model.params();
        let tensors = self
            .model
            .param_names()
            .into_iter()
            .zip(&params)
            .map(|(name, p)| TensorEntry {
                name,
                rows: p.value.rows(),
                cols: p.value.cols(),
            })
            .collect();
        let header = Header {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            epoch: self.epoch,
            steps: self.steps,
            rng: self.rng,
            tensors,
            loss_history_len: self.loss_history.len(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for p in &params {
            push_f64s(&mut out, p.value.as_slice());
        }
        push_f64s(&mut out, &self.loss_history);
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    /// Parses and validates a checkpoint. Errors name the section that failed.
    pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(MAGIC.len(), "magic")? != MAGIC {
            return Err(Error::checkpoint("magic", "not a checkpoint file"));
        }
        let version = u32::from_le_bytes(cur.take(4, "version")?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::checkpoint(
                "version",
                format!("unsupported version {version}, expected {CHECKPOINT_VERSION}"),
            ));
        }
        let header_len = u64::from_le_bytes(cur.take(8, "header")?.try_into().unwrap());
        let header_len = usize::try_from(header_len)
            .map_err(|_| Error::checkpoint("header", "length overflows"))?;
        let header: Header = serde_json::from_slice(cur.take(header_len, "header")?)
            .map_err(|e| Error::checkpoint("header", e.to_string()))?;
        if header.version != version {
            return Err(Error::checkpoint(
                "header",
                "version disagrees with preamble",
            ));
        }

        let available = (bytes.len() - cur.pos) / 8;
        match declared_param_count(&header.config) {
            Some(n) if n <= available => {}
            _ => {
                return Err(Error::checkpoint(
                    "header",
                    "declared model is larger than the file",
                ))
            }
        }
        let mut model = build_model(&header)?;
        let mut values = Vec::with_capacity(header.tensors.len());
        for entry in &header.tensors {
            let section = format!("tensor {}", entry.name);
            let n = entry
                .rows
                .checked_mul(entry.cols)
                .ok_or_else(|| Error::checkpoint(&section, "shape overflows"))?;
            values.push(Matrix::from_vec(
                entry.rows,
                entry.cols,
                cur.f64s(n, &section)?,
            )?);
        }
        let loss_history = cur.f64s(header.loss_history_len, "loss_history")?;
        let body_end = cur.pos;
        let digest = cur.take(DIGEST_LEN, "checksum")?;
        if cur.pos != bytes.len() {
            return Err(Error::checkpoint(
                "trailing",
                format!("{} unexpected bytes after checksum", bytes.len() - cur.pos),
            ));
        }
        if Sha256::digest(&bytes[..body_end]).as_slice() != digest {
            return Err(Error::checkpoint(
                "checksum",
                "digest mismatch, file is corrupt",
            ));
        }
        if let Some(bad) = values.iter().position(|m| !m.is_finite()) {
            return Err(Error::checkpoint(
                format!("tensor {}", header.tensors[bad].name),
                "non-finite parameter",
            ));
        }
        for (p, v) in model.params_mut().into_iter().zip(values) {
            p.set_value(v);
        }
        Ok(Checkpoint {
            config: header.config,
            model,
            rng: header.rng,
            epoch: header.epoch,
            steps: header.steps,
            loss_history,
        })
    }
}

fn tower_param_count(spec: &crate::model::TowerSpec) -> Option<usize> {
    let mut total = 0usize;
    let mut d_in = spec.input_dim;
    for &d_out in &spec.hidden_dims {
        let per_out = d_in.checked_add(if spec.normalize { 3 } else { 1 })?;
        total = total.checked_add(per_out.checked_mul(d_out)?)?;
        d_in = d_out;
    }
    total.checked_add(d_in.checked_add(1)?.checked_mul(spec.output_dim)?)
}

/// Scalar count of the model a config describes, `None` on overflow.
fn declared_param_count(config: &TrainConfig) -> Option<usize> {
    let user = tower_param_count(&config.user_tower)?;
    let item = tower_param_count(&config.item_tower)?;
    user.checked_add(item)?
        .checked_add(config.user_tower.output_dim.checked_add(1)?)
}

/// Skeleton model from the config, checked against the header's tensor list.
fn build_model(header: &Header) -> Result<TripletModel> {
    header
        .config
        .validate()
        .map_err(|e| Error::checkpoint("header", e.to_string()))?;
    let (u, i) = header.config.tower_specs();
    let model =
        TripletModel::zeroed(u, i).map_err(|e| Error::checkpoint("header", e.to_string()))?;
    let names = model.param_names();
    if names.len() != header.tensors.len() {
        return Err(Error::checkpoint(
            "header",
            format!(
                "expected {} tensors, found {}",
                names.len(),
                header.tensors.len()
            ),
        ));
    }
    for ((name, p), entry) in names.iter().zip(model.params()).zip(&header.tensors) {
        if *name != entry.name || p.shape() != (entry.rows, entry.cols) {
            return Err(Error::checkpoint(
                format!("tensor {}", entry.name),
                format!(
                    "expected {name} {:?}, found {} {:?}",
                    p.shape(),
                    entry.name,
                    (entry.rows, entry.cols)
                ),
            ));
        }
    }
    Ok(model)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, section: &str) -> Result<&'a [u8]> {
        let remaining = self.bytes.len() - self.pos;
        if n > remaining {
            return Err(Error::checkpoint(
                section,
                format!("truncated: need {n} bytes, {remaining} left"),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn f64s(&mut self, n: usize, section: &str) -> Result<Vec<f64>> {
        let len = n
            .checked_mul(8)
            .ok_or_else(|| Error::checkpoint(section, "length overflows"))?;
        let raw = self.take(len, section)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, ckpt.encode()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::decode(&bytes)
}
