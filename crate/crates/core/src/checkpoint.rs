//! Versioned binary bundles of named parameter blocks.
//!
//! Layout (little endian): magic `QCKP`, `u32` format version, `u32` entry
//! count, then per entry a length-prefixed UTF-8 name, a one-byte kind tag
//! and the payload. Floats are stored as raw IEEE-754 bits, so a save/load
//! round trip is bit-exact.

use std::io::{Cursor, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use thiserror::Error;

use crate::nn::{Activation, Mlp};

const MAGIC: &[u8; 4] = b"QCKP";
pub const FORMAT_VERSION: u32 = 1;

const KIND_VECTOR: u8 = 0;
const KIND_MLP: u8 = 1;
const KIND_TEXT: u8 = 2;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint format version {0} (expected {FORMAT_VERSION})")]
    UnsupportedVersion(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint has no entry named {0:?}")]
    Missing(String),
    #[error("checkpoint entry {name:?} is not a {expected}")]
    WrongKind { name: String, expected: &'static str },
    #[error("checkpoint {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Entry {
    Vector(Vec<f64>),
    Mlp(Mlp),
    Text(String),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Bundle {
    entries: Vec<(String, Entry)>,
}

impl Bundle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn put(&mut self, name: impl Into<String>, entry: Entry) {
        let name = name.into();
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = entry,
            None => self.entries.push((name, entry)),
        }
    }

    pub fn put_vector(&mut self, name: impl Into<String>, v: &[f64]) {
        self.put(name, Entry::Vector(v.to_vec()));
    }

    pub fn put_mlp(&mut self, name: impl Into<String>, net: &Mlp) {
        self.put(name, Entry::Mlp(net.clone()));
    }

    pub fn put_text(&mut self, name: impl Into<String>, text: impl Into<String>) {
        self.put(name, Entry::Text(text.into()));
    }

    fn get(&self, name: &str) -> Result<&Entry, CheckpointError> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, e)| e)
            .ok_or_else(|| CheckpointError::Missing(name.to_string()))
    }

    pub fn vector(&self, name: &str) -> Result<&[f64], CheckpointError> {
        match self.get(name)? {
            Entry::Vector(v) => Ok(v),
            _ => Err(wrong(name, "vector")),
        }
    }

    pub fn mlp(&self, name: &str) -> Result<&Mlp, CheckpointError> {
        match self.get(name)? {
            Entry::Mlp(m) => Ok(m),
            _ => Err(wrong(name, "network")),
        }
    }

    pub fn text(&self, name: &str) -> Result<&str, CheckpointError> {
        match self.get(name)? {
            Entry::Text(t) => Ok(t),
            _ => Err(wrong(name, "text entry")),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        // Writes into a Vec cannot fail.
        out.write_u32::<LittleEndian>(FORMAT_VERSION).unwrap();
        out.write_u32::<LittleEndian>(self.entries.len() as u32).unwrap();
        for (name, entry) in &self.entries {
            write_bytes(&mut out, name.as_bytes());
            match entry {
                Entry::Vector(v) => {
                    out.push(KIND_VECTOR);
                    write_f64s(&mut out, v);
                }
                Entry::Mlp(m) => {
                    out.push(KIND_MLP);
                    out.write_u32::<LittleEndian>(m.sizes().len() as u32).unwrap();
                    for &s in m.sizes() {
                        out.write_u64::<LittleEndian>(s as u64).unwrap();
                    }
                    out.push(m.hidden_activation().code());
                    write_f64s(&mut out, m.params());
                }
                Entry::Text(t) => {
                    out.push(KIND_TEXT);
                    write_bytes(&mut out, t.as_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| CheckpointError::BadMagic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.read_u32::<LittleEndian>().map_err(truncated)?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let count = r.read_u32::<LittleEndian>().map_err(truncated)?;
        let mut bundle = Bundle::new();
        for _ in 0..count {
            let name = String::from_utf8(read_bytes(&mut r)?)
                .map_err(|_| CheckpointError::Corrupt("entry name is not UTF-8".into()))?;
            let kind = r.read_u8().map_err(truncated)?;
            let entry = match kind {
                KIND_VECTOR => Entry::Vector(read_f64s(&mut r)?),
                KIND_MLP => {
                    let n = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
                    if n > bytes.len() {
                        return Err(CheckpointError::Corrupt("layer count too large".into()));
                    }
                    let mut sizes = Vec::with_capacity(n);
                    for _ in 0..n {
                        sizes.push(r.read_u64::<LittleEndian>().map_err(truncated)? as usize);
                    }
                    let code = r.read_u8().map_err(truncated)?;
                    let act = Activation::from_code(code).ok_or_else(|| {
                        CheckpointError::Corrupt(format!("unknown activation code {code}"))
                    })?;
                    let params = read_f64s(&mut r)?;
                    Entry::Mlp(
                        Mlp::from_parts(sizes, act, params)
                            .map_err(|e| CheckpointError::Corrupt(format!("{name}: {e}")))?,
                    )
                }
                KIND_TEXT => Entry::Text(
                    String::from_utf8(read_bytes(&mut r)?)
                        .map_err(|_| CheckpointError::Corrupt("text entry is not UTF-8".into()))?,
                ),
                other => return Err(CheckpointError::Corrupt(format!("unknown entry kind {other}"))),
            };
            bundle.put(name, entry);
        }
        if (r.position() as usize) != bytes.len() {
            return Err(CheckpointError::Corrupt("trailing bytes".into()));
        }
        Ok(bundle)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let io = |source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        };
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(io)?;
        }
        let mut f = std::fs::File::create(path).map_err(io)?;
        f.write_all(&self.to_bytes()).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

fn wrong(name: &str, expected: &'static str) -> CheckpointError {
    CheckpointError::WrongKind {
        name: name.to_string(),
        expected,
    }
}

fn truncated(_: std::io::Error) -> CheckpointError {
    CheckpointError::Corrupt("unexpected end of data".into())
}

fn write_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.write_u64::<LittleEndian>(b.len() as u64).unwrap();
    out.extend_from_slice(b);
}

fn write_f64s(out: &mut Vec<u8>, v: &[f64]) {
    out.write_u64::<LittleEndian>(v.len() as u64).unwrap();
    for &x in v {
        out.write_u64::<LittleEndian>(x.to_bits()).unwrap();
    }
}

fn remaining(r: &Cursor<&[u8]>) -> usize {
    r.get_ref().len() - r.position() as usize
}

fn read_bytes(r: &mut Cursor<&[u8]>) -> Result<Vec<u8>, CheckpointError> {
    let n = r.read_u64::<LittleEndian>().map_err(truncated)? as usize;
    if n > remaining(r) {
        return Err(CheckpointError::Corrupt("length prefix exceeds data".into()));
    }
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf).map_err(truncated)?;
    Ok(buf)
}

fn read_f64s(r: &mut Cursor<&[u8]>) -> Result<Vec<f64>, CheckpointError> {
    let n = r.read_u64::<LittleEndian>().map_err(truncated)? as usize;
    if n.saturating_mul(8) > remaining(r) {
        return Err(CheckpointError::Corrupt("length prefix exceeds data".into()));
    }
    (0..n)
        .map(|_| {
            r.read_u64::<LittleEndian>()
                .map(f64::from_bits)
                .map_err(truncated)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use proptest::prelude::*;

    #[test]
    fn network_round_trip_is_bit_exact() {
        let mut rng = rng_from(1, 0);
        let net = Mlp::new(&[4, 8, 3], Activation::Relu, &mut rng);
        let mut b = Bundle::new();
        b.put_mlp("policy", &net);
        b.put_text("variant", "rsac");
        let back = Bundle::from_bytes(&b.to_bytes()).unwrap();
        let got = back.mlp("policy").unwrap();
        assert_eq!(got.sizes(), net.sizes());
        let bits = |m: &Mlp| m.params().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(got), bits(&net));
        assert_eq!(back.text("variant").unwrap(), "rsac");
    }

    #[test]
    fn rejects_foreign_and_future_files() {
        assert!(matches!(Bundle::from_bytes(b"nope"), Err(CheckpointError::BadMagic)));
        let mut bytes = Bundle::new().to_bytes();
        bytes[4] = 9;
        assert!(matches!(
            Bundle::from_bytes(&bytes),
            Err(CheckpointError::UnsupportedVersion(9))
        ));
    }

    #[test]
    fn truncation_is_reported() {
        let mut b = Bundle::new();
        b.put_vector("w", &[1.0, 2.0, 3.0]);
        let bytes = b.to_bytes();
        for cut in 12..bytes.len() {
            assert!(matches!(
                Bundle::from_bytes(&bytes[..cut]),
                Err(CheckpointError::Corrupt(_))
            ));
        }
    }

    #[test]
    fn missing_and_mistyped_entries() {
        let mut b = Bundle::new();
        b.put_vector("w", &[1.0]);
        assert!(matches!(b.mlp("w"), Err(CheckpointError::WrongKind { .. })));
        assert!(matches!(b.vector("q"), Err(CheckpointError::Missing(_))));
    }

    proptest! {
        #[test]
        fn vectors_round_trip_bitwise(v in proptest::collection::vec(any::<u64>(), 0..64)) {
            let floats: Vec<f64> = v.iter().map(|&b| f64::from_bits(b)).collect();
            let mut b = Bundle::new();
            b.put_vector("x", &floats);
            let back = Bundle::from_bytes(&b.to_bytes()).unwrap();
            let got: Vec<u64> = back.vector("x").unwrap().iter().map(|x| x.to_bits()).collect();
            prop_assert_eq!(got, v);
        }
    }
}
