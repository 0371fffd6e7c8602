//! Checkpoint file:
//!
//! ```text
//! "OSHACKPT" | version u32 | config JSON (u32 length + UTF-8)
//! | tensor count u32 | per tensor: name (u32 length + UTF-8), rows u32, cols u32, rows*cols f64
//! ```
//!
//! All little-endian. The embedded config names the ablation row.

use std::fs;
use std::path::Path;

use crate::model::{Model, ModelConfig};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::NnError;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"OSHACKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn encode_checkpoint(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let config = serde_json::to_vec(&model.config).expect("config serializes");
    put_u32(&mut out, config.len());
    out.extend_from_slice(&config);
    let p = &model.params;
    put_u32(&mut out, p.len());
    for (name, t) in p.names.iter().zip(&p.values) {
        put_u32(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.rows);
        put_u32(&mut out, t.cols);
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    b: &'a [u8],
    p: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        let end = self.p.checked_add(n).filter(|&e| e <= self.b.len()).ok_or_else(|| NnError::Checkpoint("truncated".into()))?;
        let s = &self.b[self.p..end];
        self.p = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<usize, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Model, NnError> {
    let mut r = Reader { b: bytes, p: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(NnError::Checkpoint("not a checkpoint".into()));
    }
    let version = r.u32()? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(NnError::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let n = r.u32()?;
    let config: ModelConfig =
        serde_json::from_slice(r.take(n)?).map_err(|e| NnError::Checkpoint(format!("config: {e}")))?;
    let count = r.u32()?;
    let mut store = ParamStore::default();
    for _ in 0..count {
        let n = r.u32()?;
        let name = std::str::from_utf8(r.take(n)?).map_err(|_| NnError::Checkpoint("parameter name is not UTF-8".into()))?;
        let (rows, cols) = (r.u32()?, r.u32()?);
        let raw = r.take(rows.checked_mul(cols).and_then(|v| v.checked_mul(8)).ok_or_else(|| NnError::Checkpoint("tensor too large".into()))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        store.add(name, Tensor { rows, cols, data });
    }
    if r.p != bytes.len() {
        return Err(NnError::Checkpoint("trailing bytes".into()));
    }
    Model::from_params(config, &store)
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<(), NnError> {
    fs::write(path, encode_checkpoint(model)).map_err(|e| NnError::Io(path.display().to_string(), e))
}

pub fn load_checkpoint(path: &Path) -> Result<Model, NnError> {
    let bytes = fs::read(path).map_err(|e| NnError::Io(path.display().to_string(), e))?;
    decode_checkpoint(&bytes)
}
