//! Binary weight container.
//!
//! Layout: magic `CAFW`, little-endian `u32` version (1), little-endian
//! `u32` header length, a JSON header `{"config": .., "tensors": [{"name",
//! "shape"}, ..]}`, then every tensor as little-endian `f32` in header
//! order. Optional tagged sections may follow, each laid out as a 4-byte
//! tag, a `u32` JSON length, the JSON and a `u32` count of `f32` values
//! followed by those values.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::model::layer_specs;
use super::{Model, NetConfig, ParamSet, Tensor};

pub const MAGIC: &[u8; 4] = b"CAFW";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: NetConfig,
    tensors: Vec<TensorEntry>,
}

/// A tagged block appended after the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub tag: [u8; 4],
    pub json: serde_json::Value,
    pub values: Vec<f32>,
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f32s(buf: &mut Vec<u8>, vals: &[f32]) {
    buf.reserve(vals.len() * 4);
    for v in vals {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!(
                "truncated file while reading {what} ({} bytes left, {n} needed)",
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let len = n
            .checked_mul(4)
            .ok_or_else(|| Error::Format(format!("{what}: size overflow")))?;
        let b = self.take(len, what)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

/// Serialize a model followed by optional sections.
pub fn encode(model: &Model<f32>, sections: &[Section]) -> Result<Vec<u8>> {
    let header = Header {
        config: model.config.clone(),
        tensors: model
            .params
            .iter()
            .map(|p| TensorEntry {
                name: p.name.clone(),
                shape: p.tensor.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(12 + json.len() + model.params.num_values() * 4);
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, VERSION);
    put_u32(&mut buf, json.len() as u32);
    buf.extend_from_slice(&json);
    for p in model.params.iter() {
        put_f32s(&mut buf, p.tensor.data());
    }
    for s in sections {
        buf.extend_from_slice(&s.tag);
        let json = serde_json::to_vec(&s.json)?;
        put_u32(&mut buf, json.len() as u32);
        buf.extend_from_slice(&json);
        put_u32(&mut buf, s.values.len() as u32);
        put_f32s(&mut buf, &s.values);
    }
    Ok(buf)
}

/// Parse a model (and trailing sections). When `expected` is given the
/// stored tensors must match the layout that configuration implies.
pub fn decode(bytes: &[u8], expected: Option<&NetConfig>) -> Result<(Model<f32>, Vec<Section>)> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {magic:?}, expected \"CAFW\""
        )));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let hlen = r.u32("header length")? as usize;
    let header: Header = serde_json::from_slice(r.take(hlen, "header")?)
        .map_err(|e| Error::Format(format!("bad header: {e}")))?;
    let config = expected.cloned().unwrap_or_else(|| header.config.clone());
    config.validate()?;

    let specs = layer_specs(&config);
    let mut wanted = Vec::with_capacity(specs.len() * 2);
    for s in &specs {
        wanted.push((format!("{}.weight", s.name), s.weight_shape()));
        wanted.push((format!("{}.bias", s.name), vec![s.out_channels]));
    }
    for (name, shape) in &wanted {
        match header.tensors.iter().find(|e| &e.name == name) {
            None => return Err(Error::Format(format!("missing layer `{name}`"))),
            Some(e) if &e.shape != shape => {
                return Err(Error::ShapeMismatch {
                    layer: name.clone(),
                    expected: shape.clone(),
                    found: e.shape.clone(),
                })
            }
            Some(_) => {}
        }
    }
    if header.tensors.len() != wanted.len() {
        let extra: Vec<_> = header
            .tensors
            .iter()
            .filter(|e| !wanted.iter().any(|(n, _)| n == &e.name))
            .map(|e| e.name.as_str())
            .collect();
        return Err(Error::Format(format!("unexpected layers {extra:?}")));
    }

    let mut loaded = Vec::with_capacity(header.tensors.len());
    for e in &header.tensors {
        let n: usize = e.shape.iter().product();
        let data = r.f32s(n, &e.name)?;
        loaded.push((e.name.clone(), Tensor::from_vec(&e.shape, data)?));
    }
    let mut params = ParamSet::new();
    for (name, _) in &wanted {
        let i = loaded
            .iter()
            .position(|(n, _)| n == name)
            .expect("checked above");
        params.push(name.clone(), loaded[i].1.clone());
    }

    let mut sections = Vec::new();
    while !r.done() {
        let tag_bytes = r.take(4, "section tag")?;
        let tag = [tag_bytes[0], tag_bytes[1], tag_bytes[2], tag_bytes[3]];
        let jlen = r.u32("section header length")? as usize;
        let json = serde_json::from_slice(r.take(jlen, "section header")?)
            .map_err(|e| Error::Format(format!("bad section header: {e}")))?;
        let count = r.u32("section length")? as usize;
        let values = r.f32s(count, "section values")?;
        sections.push(Section { tag, json, values });
    }
    Ok((Model { config, params }, sections))
}

pub fn save_weights(model: &Model<f32>, path: &Path) -> Result<()> {
    write_atomic(path, &encode(model, &[])?)
}

/// Load weights, validating them against `expected` when given and against
/// the stored configuration otherwise.
pub fn load_weights(path: &Path, expected: Option<&NetConfig>) -> Result<Model<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode(&bytes, expected)?.0)
}

/// Write through a temporary sibling and rename, so a crash never leaves a
/// half-written file under `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
