//! `SBORA1` checkpoint files.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! "SBORA1"                 6 ASCII bytes
//! kind                     0 = base weight, 1 = LoRA, 2 = SBoRA-FA, 3 = SBoRA-FB
//! d, k, r                  r = 0 for base weights
//! precision                32 or 64
//! indices[r]               SBoRA kinds only
//! values                   row-major IEEE-754, little-endian
//! ```
//!
//! Values are `W0` (`d×k`) for base files, `B` (`d×r`) for FA, `A` (`r×k`)
//! for FB, and `A` followed by `B` for LoRA. Nothing may follow the values.

use std::path::Path;

use super::basis::BasisIndexSet;
use super::layer::Adapter;
use super::AdapterKind;
use crate::error::{Result, SboraError};
use crate::matrix::{Matrix, Precision, Scalar};

pub const MAGIC: &[u8; 6] = b"SBORA1";
const HEADER_LEN: usize = 6 + 5 * 4;

pub const KIND_BASE: u32 = 0;

/// Decoded contents of a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub enum Checkpoint<T> {
    Base(Matrix<T>),
    Adapter(Adapter<T>),
}

/// Fixed-size header fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub kind: u32,
    pub d: u32,
    pub k: u32,
    pub r: u32,
    pub precision: Precision,
}

fn push_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| SboraError::Format(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn header<T: Scalar>(kind: u32, d: usize, k: usize, r: usize) -> Result<Vec<u8>> {
    let mut out = MAGIC.to_vec();
    push_u32(&mut out, kind as usize)?;
    push_u32(&mut out, d)?;
    push_u32(&mut out, k)?;
    push_u32(&mut out, r)?;
    push_u32(&mut out, T::PRECISION.bits() as usize)?;
    Ok(out)
}

fn push_values<T: Scalar>(out: &mut Vec<u8>, m: &Matrix<T>) {
    for &v in m.data() {
        v.write_le(out);
    }
}

pub fn encode_base<T: Scalar>(w: &Matrix<T>) -> Result<Vec<u8>> {
    let mut out = header::<T>(KIND_BASE, w.rows(), w.cols(), 0)?;
    push_values(&mut out, w);
    Ok(out)
}

pub fn encode_adapter<T: Scalar>(adapter: &Adapter<T>) -> Result<Vec<u8>> {
    let mut out = header::<T>(
        adapter.kind().code(),
        adapter.out_dim(),
        adapter.in_dim(),
        adapter.rank(),
    )?;
    if let Some(basis) = adapter.basis() {
        for &i in basis.indices() {
            push_u32(&mut out, i)?;
        }
    }
    for m in adapter.trainable() {
        push_values(&mut out, m);
    }
    Ok(out)
}

pub fn read_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < HEADER_LEN {
        return Err(SboraError::Format("file shorter than the SBORA1 header".into()));
    }
    if &bytes[..6] != MAGIC {
        return Err(SboraError::Format("bad magic, expected SBORA1".into()));
    }
    let field = |i: usize| u32::from_le_bytes(bytes[6 + 4 * i..10 + 4 * i].try_into().unwrap());
    let bits = field(4);
    let precision =
        Precision::from_bits(bits).ok_or_else(|| SboraError::Format(format!("unsupported precision {bits}")))?;
    Ok(Header {
        kind: field(0),
        d: field(1),
        k: field(2),
        r: field(3),
        precision,
    })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| SboraError::Format("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn matrix<T: Scalar>(&mut self, rows: usize, cols: usize) -> Result<Matrix<T>> {
        let width = T::PRECISION.bytes();
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(width))
            .ok_or_else(|| SboraError::Format("matrix size overflows".into()))?;
        let raw = self.take(n)?;
        let data = raw.chunks_exact(width).map(T::read_le).collect();
        Matrix::from_vec(rows, cols, data).map_err(|e| SboraError::Format(e.to_string()))
    }

    fn indices(&mut self, r: usize) -> Result<Vec<usize>> {
        let raw = self.take(r.checked_mul(4).ok_or_else(|| SboraError::Format("rank overflows".into()))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect())
    }
}

/// Decodes a checkpoint whose precision matches `T`.
pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let h = read_header(bytes)?;
    if h.precision != T::PRECISION {
        return Err(SboraError::Format(format!(
            "checkpoint holds {}-bit values, expected {}-bit",
            h.precision.bits(),
            T::PRECISION.bits()
        )));
    }
    let (d, k, r) = (h.d as usize, h.k as usize, h.r as usize);
    let mut cur = Cursor {
        bytes,
        pos: HEADER_LEN,
    };
    let fmt = |e: SboraError| SboraError::Format(e.to_string());
    let out = if h.kind == KIND_BASE {
        if r != 0 {
            return Err(SboraError::Format("base weight header must have r = 0".into()));
        }
        Checkpoint::Base(cur.matrix(d, k)?)
    } else {
        let kind = AdapterKind::from_code(h.kind)
            .ok_or_else(|| SboraError::Format(format!("unknown adapter kind {}", h.kind)))?;
        let adapter = match kind {
            AdapterKind::Lora => {
                let a = cur.matrix(r, k)?;
                let b = cur.matrix(d, r)?;
                Adapter::new_lora(a, b).map_err(fmt)?
            }
            AdapterKind::SboraFa => {
                let basis = BasisIndexSet::new(k, cur.indices(r)?).map_err(fmt)?;
                Adapter::new_fa(basis, cur.matrix(d, r)?).map_err(fmt)?
            }
            AdapterKind::SboraFb => {
                let basis = BasisIndexSet::new(d, cur.indices(r)?).map_err(fmt)?;
                Adapter::new_fb(basis, cur.matrix(r, k)?).map_err(fmt)?
            }
        };
        Checkpoint::Adapter(adapter)
    };
    if cur.pos != bytes.len() {
        return Err(SboraError::Format(format!(
            "{} trailing bytes after checkpoint data",
            bytes.len() - cur.pos
        )));
    }
    Ok(out)
}

pub fn save_base<T: Scalar>(path: impl AsRef<Path>, w: &Matrix<T>) -> Result<()> {
    std::fs::write(path, encode_base(w)?)?;
    Ok(())
}

pub fn save_adapter<T: Scalar>(path: impl AsRef<Path>, adapter: &Adapter<T>) -> Result<()> {
    std::fs::write(path, encode_adapter(adapter)?)?;
    Ok(())
}

pub fn load<T: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    decode(&std::fs::read(path)?)
}

pub fn load_base<T: Scalar>(path: impl AsRef<Path>) -> Result<Matrix<T>> {
    match load(path)? {
        Checkpoint::Base(w) => Ok(w),
        Checkpoint::Adapter(_) => Err(SboraError::Format("expected a base weight, found an adapter".into())),
    }
}

pub fn load_adapter<T: Scalar>(path: impl AsRef<Path>) -> Result<Adapter<T>> {
    match load(path)? {
        Checkpoint::Adapter(a) => Ok(a),
        Checkpoint::Base(_) => Err(SboraError::Format("expected an adapter, found a base weight".into())),
    }
}
