//! Checkpoint container: `CPCK`, u32 version, u32 entry count, then per entry
//! a u32 name length, the UTF-8 name, and a CPCT blob; finally a CRC32 of all
//! preceding bytes.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::cpct::{self, Reader};
use crate::io::write_atomic;
use crate::params::ParamStore;
use crate::tensor::{Element, Tensor};

pub const MAGIC: &[u8; 4] = b"CPCK";
pub const VERSION: u32 = 1;

/// Serializes named tensors in order.
pub fn encode<'a, T: Element + 'a>(entries: impl IntoIterator<Item = (&'a str, &'a Tensor<T>)>) -> Vec<u8> {
    let entries: Vec<_> = entries.into_iter().collect();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        cpct::encode(t, &mut out);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Parses a checkpoint after validating its CRC; nothing is returned on corruption.
pub fn decode<T: Element>(bytes: &[u8]) -> Result<Vec<(String, Tensor<T>)>> {
    if bytes.len() < 16 {
        return Err(Error::Corrupt(format!("checkpoint is {} bytes, too short to be valid", bytes.len())));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(Error::Corrupt(format!(
            "checkpoint CRC mismatch (stored {stored:08x}, computed {actual:08x}); file is truncated or damaged"
        )));
    }
    let mut r = Reader::new(body);
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Parse { offset: 0, msg: "bad checkpoint magic (expected CPCK)".into() });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Parse { offset: 4, msg: format!("unsupported checkpoint version {version}") });
    }
    let count = r.u32("entry count")? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    let mut seen = HashSet::new();
    for _ in 0..count {
        let at = r.pos;
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Parse { offset: at + 4, msg: "entry name is not UTF-8".into() })?
            .to_string();
        if !seen.insert(name.clone()) {
            return Err(Error::Parse { offset: at, msg: format!("duplicate entry `{name}`") });
        }
        let t = cpct::decode_from(&mut r)?;
        out.push((name, t));
    }
    if r.pos != body.len() {
        return Err(Error::Parse { offset: r.pos, msg: "trailing bytes before CRC".into() });
    }
    Ok(out)
}

/// Writes every parameter and buffer of `store`.
pub fn save<T: Element>(store: &ParamStore<T>, path: &Path) -> Result<()> {
    write_atomic(path, &encode(store.params().chain(store.buffers())))
}

pub fn load_entries<T: Element>(path: &Path) -> Result<Vec<(String, Tensor<T>)>> {
    decode(&fs::read(path)?)
}

/// Replaces every parameter and buffer of `store` with the checkpoint's
/// values. The name sets and shapes must agree exactly; otherwise nothing is
/// modified and the error lists each discrepancy.
pub fn restore<T: Element>(store: &mut ParamStore<T>, entries: Vec<(String, Tensor<T>)>) -> Result<()> {
    let mut expected: HashMap<String, Vec<usize>> = HashMap::new();
    let mut order = Vec::new();
    for (n, t) in store.params().chain(store.buffers()) {
        expected.insert(n.to_string(), t.shape().to_vec());
        order.push(n.to_string());
    }
    let got: HashMap<&str, &Tensor<T>> = entries.iter().map(|(n, t)| (n.as_str(), t)).collect();
    let missing: Vec<String> = order.iter().filter(|n| !got.contains_key(n.as_str())).cloned().collect();
    let unexpected: Vec<String> =
        entries.iter().map(|(n, _)| n).filter(|n| !expected.contains_key(*n)).cloned().collect();
    let mismatched: Vec<String> = order
        .iter()
        .filter_map(|n| {
            let t = got.get(n.as_str())?;
            (t.shape() != expected[n].as_slice())
                .then(|| format!("{n} (checkpoint {:?}, model {:?})", t.shape(), expected[n]))
        })
        .collect();
    if !missing.is_empty() || !unexpected.is_empty() || !mismatched.is_empty() {
        let mut msg = String::from("checkpoint does not match the model architecture");
        for (label, names) in [("missing", missing), ("unexpected", unexpected), ("shape mismatch", mismatched)] {
            if !names.is_empty() {
                msg += &format!("; {label}: {}", names.join(", "));
            }
        }
        return Err(Error::Mismatch(msg));
    }
    for (name, t) in entries {
        if let Some(id) = store.find(&name) {
            *store.get_mut(id) = t;
        } else if let Some(id) = store.find_buffer(&name) {
            *store.buffer_mut(id) = t;
        }
    }
    Ok(())
}

/// [`load_entries`] followed by [`restore`].
pub fn load<T: Element>(store: &mut ParamStore<T>, path: &Path) -> Result<()> {
    restore(store, load_entries(path)?)
}
