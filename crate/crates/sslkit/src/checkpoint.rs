//! Flat, versioned checkpoint container.
//!
//! Layout: magic "SSLCKPT1" | u32 format version | u32 JSON header length |
//! JSON header | u32 tensor count | per tensor: u32 name length, name
//! bytes, u64 value count, f64 little-endian values. Round trips are
//! bit-exact for all 64-bit values.

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"SSLCKPT1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub regime: String,
    pub encoder: EncoderConfig,
    pub class_names: Option<Vec<String>>,
    pub d_proj: Option<usize>,
    pub standardize_mean: [f64; 3],
    pub standardize_std: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: Vec<(String, Vec<f64>)>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Result<&[f64]> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| Error::data(format!("checkpoint has no tensor {name:?}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        let io_err = |e| Error::io(path, e);
        out.write_all(MAGIC).map_err(io_err)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io_err)?;
        let header = serde_json::to_vec(&self.meta).expect("serializable");
        out.write_all(&(header.len() as u32).to_le_bytes()).map_err(io_err)?;
        out.write_all(&header).map_err(io_err)?;
        out.write_all(&(self.tensors.len() as u32).to_le_bytes()).map_err(io_err)?;
        for (name, values) in &self.tensors {
            out.write_all(&(name.len() as u32).to_le_bytes()).map_err(io_err)?;
            out.write_all(name.as_bytes()).map_err(io_err)?;
            out.write_all(&(values.len() as u64).to_le_bytes()).map_err(io_err)?;
            for v in values {
                out.write_all(&v.to_le_bytes()).map_err(io_err)?;
            }
        }
        out.flush().map_err(io_err)
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut input = std::io::BufReader::new(file);
        let io_err = |e| Error::io(path, e);
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic).map_err(io_err)?;
        if &magic != MAGIC {
            return Err(Error::data(format!("{}: not a checkpoint file", path.display())));
        }
        let mut u32buf = [0u8; 4];
        input.read_exact(&mut u32buf).map_err(io_err)?;
        let version = u32::from_le_bytes(u32buf);
        if version != FORMAT_VERSION {
            return Err(Error::data(format!(
                "{}: unsupported checkpoint version {version}",
                path.display()
            )));
        }
        input.read_exact(&mut u32buf).map_err(io_err)?;
        let header_len = u32::from_le_bytes(u32buf) as usize;
        let mut header = vec![0u8; header_len];
        input.read_exact(&mut header).map_err(io_err)?;
        let meta: CheckpointMeta = serde_json::from_slice(&header)
            .map_err(|e| Error::data(format!("{}: bad header: {e}", path.display())))?;
        input.read_exact(&mut u32buf).map_err(io_err)?;
        let count = u32::from_le_bytes(u32buf) as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            input.read_exact(&mut u32buf).map_err(io_err)?;
            let name_len = u32::from_le_bytes(u32buf) as usize;
            let mut name = vec![0u8; name_len];
            input.read_exact(&mut name).map_err(io_err)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::data(format!("{}: bad tensor name", path.display())))?;
            let mut u64buf = [0u8; 8];
            input.read_exact(&mut u64buf).map_err(io_err)?;
            let len = u64::from_le_bytes(u64buf) as usize;
            let mut values = Vec::with_capacity(len);
            let mut f64buf = [0u8; 8];
            for _ in 0..len {
                input.read_exact(&mut f64buf).map_err(io_err)?;
                values.push(f64::from_le_bytes(f64buf));
            }
            tensors.push((name, values));
        }
        Ok(Checkpoint { meta, tensors })
    }
}

/// SHA-256 over the raw little-endian bytes of an f64 slice.
pub fn hash_f64s(values: &[f64]) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    for v in values {
        hasher.update(v.to_le_bytes());
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// SHA-256 of a file's contents.
pub fn hash_file(path: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}
