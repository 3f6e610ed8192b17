//! `LBCK` checkpoint files: named f32 tensors plus the config that made them.
//!
//! Layout (little-endian): magic `LBCK`, u32 version, 32-byte SHA-256 of the
//! config text, u32 config length and UTF-8 config text, u32 tensor count,
//! then per tensor a u16 name length, name, u8 rank, u64 dims and the u64
//! byte offset of its data in the payload, then a u64 payload length and the
//! payload. Offsets must be contiguous in manifest order and the payload
//! must end the file.

use std::collections::HashSet;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use sha2::{Digest, Sha256};
use trisleep_numcore::{ParamStore, Tensor};

use crate::error::{HarnessError, Result};

pub const MAGIC: &[u8; 4] = b"LBCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Config text the parameters were produced with.
    pub config: String,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_store(config: impl Into<String>, store: &ParamStore) -> Self {
        Self {
            config: config.into(),
            tensors: store.iter().map(|(_, p)| (p.name.clone(), p.value.clone())).collect(),
        }
    }

    pub fn config_hash(&self) -> [u8; 32] {
        Sha256::digest(self.config.as_bytes()).into()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    fn write(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LE>(VERSION)?;
        w.write_all(&self.config_hash())?;
        w.write_u32::<LE>(self.config.len() as u32)?;
        w.write_all(self.config.as_bytes())?;
        w.write_u32::<LE>(self.tensors.len() as u32)?;
        let mut offset = 0u64;
        for (name, t) in &self.tensors {
            w.write_u16::<LE>(name.len() as u16)?;
            w.write_all(name.as_bytes())?;
            w.write_u8(t.ndim() as u8)?;
            for &d in t.shape() {
                w.write_u64::<LE>(d as u64)?;
            }
            w.write_u64::<LE>(offset)?;
            offset += 4 * t.len() as u64;
        }
        w.write_u64::<LE>(offset)?;
        for (_, t) in &self.tensors {
            for &v in t.data() {
                w.write_f32::<LE>(v)?;
            }
        }
        Ok(())
    }

    /// Decodes and fully validates a checkpoint image.
    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Cursor::new(bytes);
        let eof = |e: std::io::Error| format!("truncated file ({e})");
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(eof)?;
        if &magic != MAGIC {
            return Err(format!("bad magic {:?}", String::from_utf8_lossy(&magic)));
        }
        let version = r.read_u32::<LE>().map_err(eof)?;
        if version != VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let mut hash = [0u8; 32];
        r.read_exact(&mut hash).map_err(eof)?;
        let config_len = r.read_u32::<LE>().map_err(eof)? as usize;
        let config = read_bytes(&mut r, config_len).map_err(eof)?;
        let config = String::from_utf8(config).map_err(|_| "config text is not UTF-8".to_string())?;
        if <[u8; 32]>::from(Sha256::digest(config.as_bytes())) != hash {
            return Err("config hash does not match the embedded config".into());
        }
        let count = r.read_u32::<LE>().map_err(eof)? as usize;
        let mut manifest = Vec::with_capacity(count.min(1 << 16));
        let mut seen = HashSet::new();
        let mut expected_offset = 0u64;
        for _ in 0..count {
            let len = r.read_u16::<LE>().map_err(eof)? as usize;
            let name = String::from_utf8(read_bytes(&mut r, len).map_err(eof)?)
                .map_err(|_| "tensor name is not UTF-8".to_string())?;
            if !seen.insert(name.clone()) {
                return Err(format!("tensor `{name}` appears twice"));
            }
            let rank = r.read_u8().map_err(eof)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.read_u64::<LE>().map_err(eof)? as usize);
            }
            let offset = r.read_u64::<LE>().map_err(eof)?;
            if offset != expected_offset {
                return Err(format!("tensor `{name}` starts at byte {offset}, expected {expected_offset}"));
            }
            let elements = shape.iter().try_fold(1u64, |acc, &d| acc.checked_mul(d as u64));
            let bytes = elements
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| format!("tensor `{name}` has an overflowing shape {shape:?}"))?;
            expected_offset = expected_offset
                .checked_add(bytes)
                .ok_or_else(|| "payload size overflows".to_string())?;
            manifest.push((name, shape));
        }
        let payload_len = r.read_u64::<LE>().map_err(eof)?;
        if payload_len != expected_offset {
            return Err(format!("payload is {payload_len} bytes, manifest needs {expected_offset}"));
        }
        let remaining = bytes.len() as u64 - r.position();
        if remaining < payload_len {
            return Err(format!("truncated file (payload has {remaining} of {payload_len} bytes)"));
        }
        if remaining > payload_len {
            return Err(format!("{} trailing bytes after the payload", remaining - payload_len));
        }
        let mut tensors = Vec::with_capacity(manifest.len());
        for (name, shape) in manifest {
            let n = shape.iter().product::<usize>();
            let mut data = vec![0.0f32; n];
            r.read_f32_into::<LE>(&mut data).map_err(eof)?;
            let t = Tensor::new(shape, data).map_err(|e| format!("tensor `{name}`: {e}"))?;
            tensors.push((name, t));
        }
        Ok(Self { config, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| HarnessError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|detail| HarnessError::Checkpoint {
            path: path.to_path_buf(),
            detail,
        })
    }

    /// The tensors as a fresh parameter store.
    pub fn to_store(&self) -> ParamStore {
        let mut store = ParamStore::new();
        for (name, t) in &self.tensors {
            store.add(name.clone(), t.clone()).expect("names were checked unique");
        }
        store
    }

    /// Overwrites every parameter of `store`, which must match the
    /// checkpoint name for name and shape for shape. Nothing is written on
    /// error.
    pub fn restore_into(&self, store: &mut ParamStore) -> std::result::Result<(), String> {
        if self.tensors.len() != store.len() {
            return Err(format!(
                "checkpoint holds {} tensors, the model has {}",
                self.tensors.len(),
                store.len()
            ));
        }
        let mut pairs = Vec::with_capacity(self.tensors.len());
        for (name, t) in &self.tensors {
            let id = store
                .id(name)
                .ok_or_else(|| format!("parameter `{name}` does not exist in the model"))?;
            let have = store.get(id).value.shape();
            if have != t.shape() {
                return Err(format!("parameter `{name}` has shape {:?}, the model needs {have:?}", t.shape()));
            }
            pairs.push((id, t));
        }
        for (id, t) in pairs {
            store.get_mut(id).value = t.clone();
        }
        Ok(())
    }
}

fn read_bytes(r: &mut Cursor<&[u8]>, n: usize) -> std::io::Result<Vec<u8>> {
    let available = r.get_ref().len() as u64 - r.position();
    if (n as u64) > available {
        return Err(std::io::ErrorKind::UnexpectedEof.into());
    }
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    Ok(buf)
}
