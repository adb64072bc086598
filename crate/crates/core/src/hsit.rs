//! HSIT binary tensor container and the weight bundle built on it.
//!
//! Container layout (all integers little-endian):
//!
//! ```text
//! "HSIT" | version u16 | dtype u8 (0 = f32, 1 = f64) | ndim u8 | dims u64 × ndim | payload
//! ```
//!
//! The payload is the row-major element buffer. A bundle stores named
//! containers plus a key-value manifest:
//!
//! ```text
//! "HSIB" | version u16 | manifest len u32 | manifest utf-8
//!        | count u32 | { name len u16 | name utf-8 | len u64 | HSIT container } × count
//! ```

use std::fs;
use std::path::Path;

use crate::error::{MstError, Result};
use crate::tensor::{DType, Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"HSIT";
pub const BUNDLE_MAGIC: &[u8; 4] = b"HSIB";
pub const VERSION: u16 = 1;

pub fn encode<T: Scalar>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 * t.ndim() + t.numel() * T::DTYPE.size());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(T::DTYPE as u8);
    out.push(t.ndim() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(&mut out);
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(MstError::Format(format!("truncated while reading {what} at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Decodes one container from the front of `bytes`, converting the payload
/// to `T`. Returns the tensor and the number of bytes consumed.
pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<(Tensor<T>, usize)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(MstError::Format("missing HSIT magic".into()));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(MstError::Version { found: version, expected: VERSION });
    }
    let code = r.take(1, "dtype")?[0];
    let dtype = DType::from_code(code).ok_or_else(|| MstError::Format(format!("unknown dtype code {code}")))?;
    let ndim = r.take(1, "ndim")?[0] as usize;
    if ndim == 0 {
        return Err(MstError::Format("zero-rank tensor".into()));
    }
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let d = r.u64("dims")?;
        shape.push(usize::try_from(d).map_err(|_| MstError::Format(format!("extent {d} too large")))?);
    }
    let numel = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| MstError::Format("element count overflow".into()))?;
    let payload = r.take(numel * dtype.size(), "payload")?;
    let data: Vec<T> = match dtype {
        DType::F32 => payload.chunks_exact(4).map(|c| T::lit(f32::read_le(c) as f64)).collect(),
        DType::F64 => payload.chunks_exact(8).map(|c| T::lit(f64::read_le(c))).collect(),
    };
    let t = Tensor::new(&shape, data).map_err(|e| MstError::Format(e.to_string()))?;
    Ok((t, r.pos))
}

pub fn save<T: Scalar>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    fs::write(path, encode(t))?;
    Ok(())
}

pub fn load<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let bytes = fs::read(path)?;
    let (t, used) = decode(&bytes)?;
    if used != bytes.len() {
        return Err(MstError::Format(format!("{} trailing bytes after container", bytes.len() - used)));
    }
    Ok(t)
}

/// Named tensors plus a free-form key-value manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle<T> {
    pub manifest: String,
    pub entries: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> Bundle<T> {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(BUNDLE_MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.manifest.len() as u32).to_le_bytes());
        out.extend_from_slice(self.manifest.as_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let body = encode(t);
            out.extend_from_slice(&(body.len() as u64).to_le_bytes());
            out.extend_from_slice(&body);
        }
        out
    }

    /// Parses a whole bundle. Any truncation or framing inconsistency is an
    /// integrity error; nothing is returned unless every entry decoded.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let integrity = |e: MstError| match e {
            MstError::Format(m) => MstError::Integrity(m),
            other => other,
        };
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4, "bundle magic").map_err(integrity)? != BUNDLE_MAGIC {
            return Err(MstError::Format("missing HSIB magic".into()));
        }
        let version = r.u16("bundle version").map_err(integrity)?;
        if version != VERSION {
            return Err(MstError::Version { found: version, expected: VERSION });
        }
        let mlen = r.u32("manifest length").map_err(integrity)? as usize;
        let manifest = String::from_utf8(r.take(mlen, "manifest").map_err(integrity)?.to_vec())
            .map_err(|_| MstError::Integrity("manifest is not utf-8".into()))?;
        let count = r.u32("entry count").map_err(integrity)? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let nlen = r.u16("name length").map_err(integrity)? as usize;
            let name = String::from_utf8(r.take(nlen, "name").map_err(integrity)?.to_vec())
                .map_err(|_| MstError::Integrity("entry name is not utf-8".into()))?;
            let blen = r.u64("entry length").map_err(integrity)? as usize;
            let body = r.take(blen, &name).map_err(integrity)?;
            let (t, used) = decode::<T>(body).map_err(|e| match e {
                MstError::Format(m) => MstError::Integrity(format!("{name}: {m}")),
                other => other,
            })?;
            if used != blen {
                return Err(MstError::Integrity(format!("{name}: length field disagrees with container")));
            }
            entries.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(MstError::Integrity("trailing bytes after last entry".into()));
        }
        Ok(Self { manifest, entries })
    }
}
