//! Binary checkpoint format, little-endian throughout:
//!
//! ```text
//! "CAE1" | version u32 | num_layers u32 | latent_dim u32 | input_size u32 | base_channels u32
//! | n_records u32 | n_records x (name_len u32 | name | ndim u32 | ndim x u64 | f64 data)
//! | crc32 of everything before it
//! ```

use std::fs;
use std::path::Path;

use crate::cae::{Cae, CaeConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"CAE1";
pub const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("fits in u32").to_le_bytes());
}

pub fn encode(model: &Cae) -> Vec<u8> {
    let c = model.config();
    let mut out = Vec::with_capacity(64 + 8 * c.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [c.num_layers, c.latent_dim, c.input_size, c.base_channels] {
        put_u32(&mut out, v);
    }
    put_u32(&mut out, model.params().len());
    for (name, t) in model.named_params() {
        put_u32(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.ndim());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format(self.path, "truncated checkpoint"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| Error::format(self.path, "dimension overflows"))
    }
}

/// Parses a checkpoint. Checks run in order: magic, checksum, version,
/// then structure against the stored configuration.
pub fn decode(bytes: &[u8], path: &Path) -> Result<Cae> {
    if bytes.len() < MAGIC.len() + 8 || &bytes[..4] != MAGIC {
        return Err(Error::format(path, "not a checkpoint (bad magic)"));
    }
    let (payload, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let mut r = Reader {
        bytes: payload,
        pos: 4,
        path,
    };
    let version = r.u32()? as u32;
    if version != VERSION {
        return Err(Error::Version {
            found: version,
            expected: VERSION,
        });
    }
    let config = CaeConfig {
        num_layers: r.u32()?,
        latent_dim: r.u32()?,
        input_size: r.u32()?,
        base_channels: r.u32()?,
    };
    config.validate()?;
    let layout = config.layout();
    let n = r.u32()?;
    if n != layout.len() {
        return Err(Error::format(path, format!("{n} records, expected {}", layout.len())));
    }
    let mut params = Vec::with_capacity(n);
    for (want_name, want_shape) in &layout {
        let len = r.u32()?;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| Error::format(path, "non-utf8 name"))?;
        if name != want_name {
            return Err(Error::format(path, format!("record `{name}`, expected `{want_name}`")));
        }
        let ndim = r.u32()?;
        let shape = (0..ndim).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        if &shape != want_shape {
            return Err(Error::format(path, format!("{name} has shape {shape:?}, expected {want_shape:?}")));
        }
        let count: usize = shape.iter().product();
        let raw = r.take(count.checked_mul(8).ok_or_else(|| Error::format(path, "record too large"))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        params.push(Tensor::new(shape, data)?);
    }
    if r.pos != payload.len() {
        return Err(Error::format(path, "trailing bytes after last record"));
    }
    Cae::from_parts(config, params)
}

pub fn save_checkpoint(model: &Cae, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, encode(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Cae> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
