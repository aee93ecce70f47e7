//! Binary model files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "SIRN" | version u32 | config_len u32 | config text (sorted `key=value` lines)
//! tensor_count u32 | per tensor: name_len u32, name, ndim u32, dims u64..., values f64...
//! ```
//!
//! Tensors appear in name order. Whitening statistics are stored as tensors
//! under the `mapping.` prefix.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use super::config::{AblationFlags, ModelConfig};
use super::network::ModelState;
use crate::encoders::Vocab;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::similarity::{MappingState, Mode};

pub const MAGIC: &[u8; 4] = b"SIRN";
pub const FORMAT_VERSION: u32 = 1;

const MAPPING_PREFIX: &str = "mapping.";

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor(buf: &mut Vec<u8>, name: &str, t: &Tensor) {
    put_u32(buf, name.len() as u32);
    buf.extend_from_slice(name.as_bytes());
    put_u32(buf, t.shape().len() as u32);
    for &d in t.shape() {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn config_block(state: &ModelState) -> String {
    let mut entries = state.config.entries();
    entries.extend(state.flags.entries());
    entries.insert("mapping.updates".into(), state.mapping.updates.to_string());
    entries.insert("vocab.tokens".into(), state.vocab.tokens().join(" "));
    entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

/// Serializes `state`. Identical states give identical bytes.
pub fn to_bytes(state: &ModelState) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, FORMAT_VERSION);
    let config = config_block(state);
    put_u32(&mut buf, config.len() as u32);
    buf.extend_from_slice(config.as_bytes());

    let mut tensors: BTreeMap<String, &Tensor> = state.params.iter().map(|(k, v)| (k.clone(), v)).collect();
    let m = &state.mapping;
    tensors.insert(format!("{MAPPING_PREFIX}covariance"), &m.covariance);
    tensors.insert(format!("{MAPPING_PREFIX}matrix"), &m.mapping);
    tensors.insert(format!("{MAPPING_PREFIX}mean"), &m.mean);
    put_u32(&mut buf, tensors.len() as u32);
    for (name, t) in tensors {
        put_tensor(&mut buf, &name, t);
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::ModelFormat(format!("truncated file while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self, n: usize, what: &str) -> Result<&'a str> {
        std::str::from_utf8(self.take(n, what)?).map_err(|_| Error::ModelFormat(format!("{what} is not UTF-8")))
    }

    fn tensor(&mut self) -> Result<(String, Tensor)> {
        let len = self.u32("tensor name length")? as usize;
        let name = self.string(len, "tensor name")?.to_string();
        let ndim = self.u32("tensor rank")? as usize;
        let mut shape = Vec::with_capacity(ndim.min(8));
        for _ in 0..ndim {
            shape.push(self.u64("tensor dims")? as usize);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&c| c.checked_mul(8).is_some_and(|b| b <= self.bytes.len() - self.pos))
            .ok_or_else(|| Error::ModelFormat(format!("truncated file while reading tensor `{name}`")))?;
        let raw = self.take(count * 8, "tensor values")?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::ModelFormat(e.to_string()))?;
        Ok((name, t))
    }
}

/// Parses bytes written by [`to_bytes`]. The returned mapping is in
/// [`Mode::Infer`].
pub fn from_bytes(bytes: &[u8]) -> Result<ModelState> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::ModelFormat(format!("expected magic {MAGIC:?}, found {magic:?}")));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::ModelFormat(format!(
            "unsupported version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let config_len = r.u32("config length")? as usize;
    let block = r.string(config_len, "config block")?;
    let mut config = ModelConfig::default();
    let mut flags = AblationFlags::FULL;
    let mut updates = None;
    let mut vocab = None;
    for line in block.lines() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::ModelFormat(format!("bad config line `{line}`")))?;
        let bad = |e: Error| Error::ModelFormat(e.to_string());
        match k {
            "mapping.updates" => {
                updates = Some(
                    v.parse::<u64>()
                        .map_err(|_| Error::ModelFormat("bad mapping.updates".into()))?,
                )
            }
            "vocab.tokens" => {
                let tokens = v.split(' ').filter(|t| !t.is_empty()).map(str::to_string).collect();
                vocab = Some(Vocab::from_ordered(tokens).map_err(bad)?);
            }
            k if k.starts_with("flags.") => flags.set(k, v).map_err(bad)?,
            k => config.set(k, v).map_err(bad)?,
        }
    }
    let vocab = vocab.ok_or_else(|| Error::ModelFormat("missing vocab.tokens".into()))?;
    let updates = updates.ok_or_else(|| Error::ModelFormat("missing mapping.updates".into()))?;
    config.validate().map_err(|e| Error::ModelFormat(e.to_string()))?;

    let count = r.u32("tensor count")?;
    let mut params = BTreeMap::new();
    let mut mapping_tensors = BTreeMap::new();
    for _ in 0..count {
        let (name, t) = r.tensor()?;
        let target = match name.strip_prefix(MAPPING_PREFIX) {
            Some(rest) => mapping_tensors.insert(rest.to_string(), t),
            None => params.insert(name.clone(), t),
        };
        if target.is_some() {
            return Err(Error::ModelFormat(format!("duplicate tensor `{name}`")));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::ModelFormat(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let mut take = |n: &str| {
        mapping_tensors
            .remove(n)
            .ok_or_else(|| Error::ModelFormat(format!("missing tensor `{MAPPING_PREFIX}{n}`")))
    };
    let mapping = MappingState {
        mapping: take("matrix")?,
        mean: take("mean")?,
        covariance: take("covariance")?,
        momentum: config.momentum,
        eps: config.eps,
        mode: Mode::Infer,
        updates,
    };

    let expected = ModelState::new(config.clone(), flags, vocab.clone())?;
    for (name, t) in &expected.params {
        match params.get(name) {
            Some(p) if p.shape() == t.shape() => {}
            Some(p) => {
                return Err(Error::ModelFormat(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    p.shape(),
                    t.shape()
                )))
            }
            None => return Err(Error::ModelFormat(format!("missing tensor `{name}`"))),
        }
    }
    if let Some(extra) = params.keys().find(|k| !expected.params.contains_key(*k)) {
        return Err(Error::ModelFormat(format!("unexpected tensor `{extra}`")));
    }
    let dz = expected.mapping.dim();
    if mapping.mean.shape() != [dz] || mapping.mapping.shape() != [dz, dz] || mapping.covariance.shape() != [dz, dz] {
        return Err(Error::ModelFormat("whitening statistics have the wrong shape".into()));
    }
    let state = ModelState {
        config,
        flags,
        vocab,
        params,
        mapping,
    };
    if !state.is_finite() {
        return Err(Error::Numerical("model file contains non-finite values".into()));
    }
    Ok(state)
}

pub fn save(state: &ModelState, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&to_bytes(state)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ModelState> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
