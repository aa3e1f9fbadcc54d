//! Binary container: a JSON header followed by little-endian `f32` blobs.
//!
//! Layout: the 8-byte magic `GVF4BLOB`, a `u64` LE header length, the UTF-8
//! JSON header, then every blob's values back to back in header order. The
//! header always carries `"dtype": "f32le"` and a `"blobs"` array of
//! `{"name", "shape"}` entries; any other keys belong to the caller.

use std::fs;
use std::path::Path;

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"GVF4BLOB";

#[derive(Debug, Clone)]
pub struct Blob {
    pub name: String,
    pub tensor: Tensor,
}

impl Blob {
    pub fn new(name: impl Into<String>, tensor: Tensor) -> Self {
        Self {
            name: name.into(),
            tensor,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BlobFile {
    /// Caller-defined header fields (the `blobs`/`dtype` keys are removed).
    pub header: Map<String, Value>,
    pub blobs: Vec<Blob>,
}

impl BlobFile {
    pub fn new(header: Map<String, Value>) -> Self {
        Self {
            header,
            blobs: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.blobs.push(Blob::new(name, tensor));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.blobs.iter().find(|b| b.name == name).map(|b| &b.tensor)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::InvalidInput(format!("blob `{name}` not present")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = self.header.clone();
        header.insert("dtype".into(), json!("f32le"));
        header.insert(
            "blobs".into(),
            Value::Array(
                self.blobs
                    .iter()
                    .map(|b| json!({"name": b.name, "shape": b.tensor.shape()}))
                    .collect(),
            ),
        );
        let header = serde_json::to_vec(&Value::Object(header)).expect("header serializes");
        let payload: usize = self.blobs.iter().map(|b| b.tensor.len() * 4).sum();
        let mut out = Vec::with_capacity(16 + header.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for b in &self.blobs {
            for &v in b.tensor.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |msg: &str| Error::Header {
            path: path.to_path_buf(),
            msg: msg.to_string(),
        };
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("missing GVF4BLOB magic"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let hend = 16usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("header length exceeds file"))?;
        let header: Value = serde_json::from_slice(&bytes[16..hend])?;
        let Value::Object(mut header) = header else {
            return Err(bad("header is not a JSON object"));
        };
        if header.remove("dtype") != Some(json!("f32le")) {
            return Err(bad("dtype must be f32le"));
        }
        let entries = match header.remove("blobs") {
            Some(Value::Array(a)) => a,
            _ => return Err(bad("missing blobs table")),
        };
        let mut off = hend;
        let mut blobs = Vec::with_capacity(entries.len());
        for e in entries {
            let name = e["name"].as_str().ok_or_else(|| bad("blob without name"))?;
            let shape: Vec<usize> = e["shape"]
                .as_array()
                .ok_or_else(|| bad("blob without shape"))?
                .iter()
                .map(|d| d.as_u64().map(|d| d as usize))
                .collect::<Option<_>>()
                .ok_or_else(|| bad("non-integer blob shape"))?;
            let n: usize = shape.iter().product();
            let end = off + n * 4;
            if end > bytes.len() {
                return Err(bad("blob data truncated"));
            }
            let data = bytes[off..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            off = end;
            blobs.push(Blob::new(name, Tensor::new(&shape, data)));
        }
        if off != bytes.len() {
            return Err(bad("trailing bytes after last blob"));
        }
        Ok(Self { header, blobs })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

/// Rounds through `f32`, matching what a blob round trip stores.
pub fn quantize_f32(t: &Tensor) -> Tensor {
    t.map(|v| v as f32 as f64)
}
