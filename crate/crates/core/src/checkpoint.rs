//! Single-file checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "PFCK" | u32 version | u32 json_len | json
//! u32 param_count
//! param_count × ( u32 name_len | name (utf-8) | u64 elements | elements × f32 )
//! ```
//!
//! The JSON header holds the model config (encoder and prompt settings
//! included) plus optional caller metadata. Parameters appear in the model's
//! declaration order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::fusion::FusionNorm;

const MAGIC: &[u8; 4] = b"PFCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    fusion: FusionNorm,
    #[serde(default)]
    meta: Option<serde_json::Value>,
}

pub fn to_bytes(model: &Model, meta: Option<&serde_json::Value>) -> Vec<u8> {
    let header = Header {
        model: model.config.clone(),
        fusion: model.fusion,
        meta: meta.cloned(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let params = model.param_slices();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, data, _) in params {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(data.len() as u64).to_le_bytes());
        for &v in data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'b> {
    bytes: &'b [u8],
    pos: usize,
}

impl<'b> Reader<'b> {
    fn take(&mut self, n: usize) -> Result<&'b [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Rebuilds the model and returns it with the caller metadata.
pub fn from_bytes(bytes: &[u8]) -> Result<(Model, Option<serde_json::Value>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let json_len = r.u32()? as usize;
    let header: Header = serde_json::from_slice(r.take(json_len)?)
        .map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
    let mut model = Model::new(header.model)?;
    model.fusion = header.fusion;
    let count = r.u32()? as usize;
    let mut slots = model.param_slices_mut();
    if count != slots.len() {
        return Err(Error::Checkpoint(format!(
            "{count} parameters stored, model declares {}",
            slots.len()
        )));
    }
    for (expected, slot, _) in slots.iter_mut() {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Checkpoint("parameter name is not utf-8".into()))?;
        if name != expected {
            return Err(Error::Checkpoint(format!("expected {expected}, found {name}")));
        }
        let n = r.u64()? as usize;
        if n != slot.len() {
            return Err(Error::Checkpoint(format!(
                "{name}: {n} elements stored, {} expected",
                slot.len()
            )));
        }
        let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        for (dst, chunk) in slot.iter_mut().zip(raw.chunks_exact(4)) {
            *dst = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
        }
    }
    drop(slots);
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok((model, header.meta))
}

pub fn save(model: &Model, meta: Option<&serde_json::Value>, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(model, meta)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(Model, Option<serde_json::Value>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
