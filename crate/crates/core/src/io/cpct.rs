//! CPCT tensor blob: `CPCT`, u32 version, u8 dtype code, u8 rank, rank x u64
//! extents, then the values. All integers and values are little-endian.

use crate::error::{Error, Result};
use crate::tensor::{DType, Element, Tensor};

pub const MAGIC: &[u8; 4] = b"CPCT";
pub const VERSION: u32 = 1;

pub fn encode<T: Element>(t: &Tensor<T>, out: &mut Vec<u8>) {
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(T::DTYPE.code());
    out.push(t.ndim() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(out);
    }
}

/// Little-endian reader over a byte slice that reports absolute offsets.
pub(crate) struct Reader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Parse {
                offset: self.pos,
                msg: format!(
                    "unexpected end of data reading {what} ({n} bytes needed, {} left)",
                    self.bytes.len() - self.pos
                ),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Decodes one blob, converting to `T` (f64 to f32 rounds, f32 to f64 is exact).
pub(crate) fn decode_from<T: Element>(r: &mut Reader<'_>) -> Result<Tensor<T>> {
    let start = r.pos;
    if r.take(4, "tensor magic")? != MAGIC {
        return Err(Error::Parse { offset: start, msg: "bad tensor magic (expected CPCT)".into() });
    }
    let at = r.pos;
    let version = r.u32("tensor version")?;
    if version != VERSION {
        return Err(Error::Parse { offset: at, msg: format!("unsupported tensor version {version}") });
    }
    let at = r.pos;
    let code = r.u8("dtype")?;
    let dtype =
        DType::from_code(code).ok_or_else(|| Error::Parse { offset: at, msg: format!("unknown dtype code {code}") })?;
    let rank = r.u8("rank")? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let at = r.pos;
        let d = r.u64("extent")?;
        shape.push(usize::try_from(d).map_err(|_| Error::Parse { offset: at, msg: format!("extent {d} too large") })?);
    }
    let at = r.pos;
    let numel = shape
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| Error::Parse { offset: at, msg: format!("element count of {shape:?} overflows") })?;
    let bytes_needed = numel
        .checked_mul(dtype.size())
        .ok_or_else(|| Error::Parse { offset: at, msg: "payload size overflows".into() })?;
    let raw = r.take(bytes_needed, "tensor values")?;
    let data: Vec<T> = match dtype {
        DType::F32 => raw.chunks_exact(4).map(|c| T::from_f64(f32::read_le(c) as f64)).collect(),
        DType::F64 => raw.chunks_exact(8).map(|c| T::from_f64(f64::read_le(c))).collect(),
    };
    Tensor::new(shape, data)
}

/// Decodes a standalone blob; trailing bytes are an error.
pub fn decode<T: Element>(bytes: &[u8]) -> Result<Tensor<T>> {
    let mut r = Reader::new(bytes);
    let t = decode_from(&mut r)?;
    if r.pos != bytes.len() {
        return Err(Error::Parse { offset: r.pos, msg: "trailing bytes after tensor".into() });
    }
    Ok(t)
}
