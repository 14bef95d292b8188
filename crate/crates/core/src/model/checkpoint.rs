//! Parameter checkpoints.
//!
//! Layout: the 6-byte magic `LAM3C1`, a little-endian `u64` header length,
//! a JSON header listing every tensor (name, shape, dtype, byte offset and
//! length relative to the data section), then the raw little-endian float32
//! data.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Dense, EncoderParams, ModelConfig, ModelParams, PrototypeHead, INPUT_DIM};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"LAM3C1";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    model: ModelConfig,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
    nbytes: u64,
}

pub fn write_checkpoint<W: Write>(mut w: W, params: &ModelParams) -> Result<()> {
    let mut entries = Vec::new();
    let mut offset = 0u64;
    for ((name, shape, _), data) in params.tensor_specs().into_iter().zip(params.tensors()) {
        let nbytes = 4 * data.len() as u64;
        entries.push(TensorEntry { name, shape, dtype: "f32".into(), offset, nbytes });
        offset += nbytes;
    }
    let header = serde_json::to_vec(&Header { version: 1, model: params.config(), tensors: entries })?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    for data in params.tensors() {
        for v in data {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_checkpoint(path: &Path, params: &ModelParams) -> Result<()> {
    write_checkpoint(BufWriter::new(File::create(path)?), params)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ModelParams> {
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic; not a LAM3C1 checkpoint".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len);
    if len > 1 << 30 {
        return Err(Error::Checkpoint(format!("header length {len} is implausible")));
    }
    let mut header = vec![0u8; len as usize];
    r.read_exact(&mut header)?;
    let header: Header = serde_json::from_slice(&header)?;
    if header.version != 1 {
        return Err(Error::Checkpoint(format!("unsupported version {}", header.version)));
    }
    let mut data = Vec::new();
    r.read_to_end(&mut data)?;

    let tensor = |name: &str, shape: &[usize]| -> Result<Vec<f64>> {
        let e = header
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
        if e.shape != shape || e.dtype != "f32" {
            return Err(Error::Checkpoint(format!("tensor {name}: expected f32 {shape:?}, found {} {:?}", e.dtype, e.shape)));
        }
        let count: usize = shape.iter().product();
        let (start, end) = (e.offset as usize, e.offset as usize + 4 * count);
        if e.nbytes as usize != 4 * count || end > data.len() {
            return Err(Error::Checkpoint(format!("tensor {name} out of bounds")));
        }
        Ok(data[start..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect())
    };

    let cfg = &header.model;
    let mut dims = vec![INPUT_DIM];
    dims.extend(&cfg.hidden);
    dims.push(cfg.embed_dim);
    let mut layers = Vec::new();
    for (i, w) in dims.windows(2).enumerate() {
        let weight = tensor(&format!("encoder.layers.{i}.weight"), &[w[0], w[1]])?;
        let bias = tensor(&format!("encoder.layers.{i}.bias"), &[w[1]])?;
        layers.push(Dense {
            weight: Array2::from_shape_vec((w[0], w[1]), weight).map_err(|e| Error::Checkpoint(e.to_string()))?,
            bias: Array1::from(bias),
        });
    }
    let mask_token = Array1::from(tensor("encoder.mask_token", &[INPUT_DIM])?);
    let proto = tensor("head.prototypes", &[cfg.embed_dim, cfg.prototypes])?;
    let projection = Array2::from_shape_vec((cfg.embed_dim, cfg.prototypes), proto).map_err(|e| Error::Checkpoint(e.to_string()))?;
    // stored values are used as-is so a reload is bit-identical
    let params = ModelParams { encoder: EncoderParams { layers, mask_token }, head: PrototypeHead::from_raw(projection) };
    params.encoder.validate()?;
    Ok(params)
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact_for_f32_params() {
        let p = ModelParams::init(&ModelConfig::default(), &mut crate::rng::stream(9, 0)).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &p).unwrap();
        assert_eq!(&buf[..6], b"LAM3C1");
        let q = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn bad_magic_rejected() {
        assert!(matches!(read_checkpoint(&b"NOTACKPT0000"[..]), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn truncated_data_rejected() {
        let p = ModelParams::init(&ModelConfig::default(), &mut crate::rng::stream(9, 0)).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &p).unwrap();
        buf.truncate(buf.len() - 8);
        assert!(read_checkpoint(buf.as_slice()).is_err());
    }
}
