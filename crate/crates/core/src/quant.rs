//! Blockwise 4-bit NormalFloat (NF4) storage for frozen base weights.
//!
//! The flattened (row-major) weight is split into blocks of `block_size`
//! values; each block keeps its absolute maximum as an `f32` scale and every
//! value becomes the index of the nearest codebook level of `w / absmax`.
//! Adapters run in full precision on top of the dequantized base.
//!
//! # `SBQ4NF` file layout
//!
//! ```text
//! "SBQ4NF"                      6 ASCII bytes
//! rows, cols, block_size        u32 little-endian
//! absmax[ceil(rows*cols/bs)]    f32 little-endian
//! codes[ceil(rows*cols/2)]      two codes per byte, element 2i in the low
//!                               nibble, 2i+1 in the high nibble; an odd
//!                               tail leaves the final high nibble zero
//! ```

use std::path::Path;
use std::sync::OnceLock;

use statrs::distribution::{ContinuousCDF, Normal};

use crate::accounting::{Counter, NoCount};
use crate::adapters::{Adapter, AdapterLayer};
use crate::error::{dim_err, Result, SboraError};
use crate::matrix::{dot, Activation, Matrix, Scalar};

pub const DEFAULT_BLOCK_SIZE: usize = 64;
pub const MAGIC: &[u8; 6] = b"SBQ4NF";

/// Index of the exact-zero level.
pub const ZERO_CODE: u8 = 7;

/// Probability mass trimmed from each tail before taking quantiles.
const NF4_OFFSET: f64 = 0.967_708_3;

fn linspace(start: f64, end: f64, n: usize) -> impl Iterator<Item = f64> {
    let step = (end - start) / (n - 1) as f64;
    (0..n).map(move |i| start + step * i as f64)
}

/// The 16 NF4 levels, ascending, normalized to `[-1, 1]` with an exact zero.
///
/// Eight positive and seven negative levels are standard-normal quantiles at
/// evenly spaced probabilities between `NF4_OFFSET` and 0.5; the zero level
/// is inserted explicitly.
pub fn nf4_codebook() -> &'static [f64; 16] {
    static BOOK: OnceLock<[f64; 16]> = OnceLock::new();
    BOOK.get_or_init(|| {
        let normal = Normal::standard();
        let mut levels: Vec<f64> = linspace(NF4_OFFSET, 0.5, 9)
            .take(8)
            .map(|p| normal.inverse_cdf(p))
            .collect();
        levels.extend(linspace(NF4_OFFSET, 0.5, 8).take(7).map(|p| -normal.inverse_cdf(p)));
        levels.push(0.0);
        levels.sort_by(f64::total_cmp);
        let max = levels[15];
        let mut out = [0.0; 16];
        for (o, v) in out.iter_mut().zip(&levels) {
            *o = v / max;
        }
        out
    })
}

/// Midpoints between adjacent levels; a value equal to a midpoint maps to
/// the lower level.
fn midpoints() -> &'static [f64; 15] {
    static MID: OnceLock<[f64; 15]> = OnceLock::new();
    MID.get_or_init(|| {
        let c = nf4_codebook();
        let mut m = [0.0; 15];
        for (i, v) in m.iter_mut().enumerate() {
            *v = (c[i] + c[i + 1]) / 2.0;
        }
        m
    })
}

/// Nearest level to `v`, ties toward the lower index.
pub fn nearest_code(v: f64) -> u8 {
    midpoints().partition_point(|&m| v > m) as u8
}

/// Largest distance between adjacent levels.
pub fn max_level_gap() -> f64 {
    nf4_codebook().windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
}

/// NF4-quantized matrix: packed 4-bit codes plus per-block scales.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedMatrix {
    rows: usize,
    cols: usize,
    block_size: usize,
    codes: Vec<u8>,
    absmax: Vec<f32>,
}

impl QuantizedMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn absmax(&self) -> &[f32] {
        &self.absmax
    }

    pub fn packed_codes(&self) -> &[u8] {
        &self.codes
    }

    pub fn codebook(&self) -> &'static [f64; 16] {
        nf4_codebook()
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn code(&self, flat: usize) -> u8 {
        let byte = self.codes[flat / 2];
        if flat.is_multiple_of(2) {
            byte & 0x0f
        } else {
            byte >> 4
        }
    }

    /// Dequantized value at a flat row-major index.
    pub fn value(&self, flat: usize) -> f64 {
        nf4_codebook()[self.code(flat) as usize] * self.absmax[flat / self.block_size] as f64
    }

    /// Dequantizes one row into `out`.
    pub fn dequantize_row<T: Scalar>(&self, row: usize, out: &mut [T]) {
        let start = row * self.cols;
        for (j, o) in out.iter_mut().enumerate() {
            *o = T::of(self.value(start + j));
        }
    }

    /// Serialized size in bytes.
    pub fn storage_bytes(&self) -> usize {
        6 + 12 + 4 * self.absmax.len() + self.codes.len()
    }
}

/// Quantizes `w` blockwise over its row-major flattening. The last block may
/// be short.
pub fn quantize<T: Scalar>(w: &Matrix<T>, block_size: usize) -> Result<QuantizedMatrix> {
    if block_size == 0 {
        return Err(SboraError::Config("block size must be positive".into()));
    }
    if !w.is_finite() {
        return Err(SboraError::Numeric("cannot quantize non-finite weights".into()));
    }
    let data = w.data();
    let mut absmax = Vec::with_capacity(data.len().div_ceil(block_size));
    let mut codes = vec![0u8; data.len().div_ceil(2)];
    for (b, block) in data.chunks(block_size).enumerate() {
        let scale = block.iter().map(|v| v.as_f64().abs()).fold(0.0, f64::max) as f32;
        absmax.push(scale);
        for (j, v) in block.iter().enumerate() {
            let code = if scale == 0.0 {
                ZERO_CODE
            } else {
                nearest_code(v.as_f64() / scale as f64)
            };
            let flat = b * block_size + j;
            codes[flat / 2] |= if flat.is_multiple_of(2) { code } else { code << 4 };
        }
    }
    Ok(QuantizedMatrix {
        rows: w.rows(),
        cols: w.cols(),
        block_size,
        codes,
        absmax,
    })
}

/// `ŵ = level[code] · absmax[block]`.
pub fn dequantize<T: Scalar>(q: &QuantizedMatrix) -> Matrix<T> {
    Matrix::from_fn(q.rows, q.cols, |i, j| T::of(q.value(i * q.cols + j))).expect("positive dims")
}

/// Roundtrip error statistics of `w` against `dequantize(quantize(w))`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct RoundtripStats {
    pub rmse: f64,
    pub max_abs_err: f64,
    /// `max_block absmax · max_level_gap / 2`.
    pub half_gap_bound: f64,
}

pub fn roundtrip_stats<T: Scalar>(w: &Matrix<T>, q: &QuantizedMatrix) -> RoundtripStats {
    let mut sq = 0.0;
    let mut max_abs_err: f64 = 0.0;
    for (flat, v) in w.data().iter().enumerate() {
        let e = (v.as_f64() - T::of(q.value(flat)).as_f64()).abs();
        sq += e * e;
        max_abs_err = max_abs_err.max(e);
    }
    let max_scale = q.absmax.iter().fold(0.0f64, |m, &a| m.max(a as f64));
    RoundtripStats {
        rmse: (sq / w.data().len() as f64).sqrt(),
        max_abs_err,
        half_gap_bound: max_scale * max_level_gap() / 2.0,
    }
}

/// `W0` held in NF4 with a full-precision adapter on top.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLayer<T> {
    qw0: QuantizedMatrix,
    adapter: Adapter<T>,
    scale: T,
}

impl<T: Scalar> QuantizedLayer<T> {
    pub fn new(qw0: QuantizedMatrix, adapter: Adapter<T>, scale: T) -> Result<Self> {
        if qw0.shape() != (adapter.out_dim(), adapter.in_dim()) {
            return Err(dim_err(format!(
                "adapter is {}x{} but the quantized base is {}x{}",
                adapter.out_dim(),
                adapter.in_dim(),
                qw0.rows,
                qw0.cols
            )));
        }
        Ok(Self { qw0, adapter, scale })
    }

    /// Quantizes the base of an existing layer.
    pub fn from_layer(layer: &AdapterLayer<T>, block_size: usize) -> Result<Self> {
        Self::new(quantize(layer.w0(), block_size)?, layer.adapter().clone(), layer.scale())
    }

    pub fn base(&self) -> &QuantizedMatrix {
        &self.qw0
    }

    pub fn adapter(&self) -> &Adapter<T> {
        &self.adapter
    }

    pub fn adapter_mut(&mut self) -> &mut Adapter<T> {
        &mut self.adapter
    }

    /// Full-precision layer over the dequantized base.
    pub fn dequantized(&self) -> AdapterLayer<T> {
        AdapterLayer::new(dequantize(&self.qw0), self.adapter.clone(), self.scale).expect("shapes validated")
    }

    pub fn forward(&self, x: &Activation<T>) -> Result<Activation<T>> {
        self.forward_counted(x, &mut NoCount)
    }

    /// Dequantizes one base row at a time; the result is identical to a
    /// dense forward over `dequantize(qw0)`.
    pub fn forward_counted<C: Counter>(&self, x: &Activation<T>, counter: &mut C) -> Result<Activation<T>> {
        let (d, k) = self.qw0.shape();
        if x.features() != k {
            return Err(dim_err(format!("input has {} features, base expects {k}", x.features())));
        }
        let mut h = Activation::zeros(x.batch(), d)?;
        let mut row = vec![T::zero(); k];
        for i in 0..d {
            self.qw0.dequantize_row(i, &mut row);
            for b in 0..x.batch() {
                h.row_mut(b)[i] = dot(&row, x.row(b), counter);
            }
        }
        self.adapter.apply_delta(x, &mut h, self.scale, counter)?;
        Ok(h)
    }

    /// `dequantize(qw0) + scale·ΔW`, regional for SBoRA kinds.
    pub fn merge(&self) -> Matrix<T> {
        let mut w = dequantize(&self.qw0);
        self.adapter.merge_into(&mut w, self.scale).expect("shapes validated");
        w
    }
}

/// Forward through an adapter over an NF4 base.
pub fn quantized_forward<T: Scalar>(
    qw0: &QuantizedMatrix,
    adapter: &Adapter<T>,
    scale: T,
    x: &Activation<T>,
) -> Result<Activation<T>> {
    QuantizedLayer::new(qw0.clone(), adapter.clone(), scale)?.forward(x)
}

pub fn encode(q: &QuantizedMatrix) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(q.storage_bytes());
    out.extend_from_slice(MAGIC);
    for v in [q.rows, q.cols, q.block_size] {
        let v = u32::try_from(v).map_err(|_| SboraError::Format(format!("{v} does not fit in u32")))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    for a in &q.absmax {
        out.extend_from_slice(&a.to_le_bytes());
    }
    out.extend_from_slice(&q.codes);
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<QuantizedMatrix> {
    let bad = |m: &str| SboraError::Format(m.to_string());
    if bytes.len() < 18 || &bytes[..6] != MAGIC {
        return Err(bad("missing SBQ4NF header"));
    }
    let field = |i: usize| u32::from_le_bytes(bytes[6 + 4 * i..10 + 4 * i].try_into().unwrap()) as usize;
    let (rows, cols, block_size) = (field(0), field(1), field(2));
    if rows == 0 || cols == 0 || block_size == 0 {
        return Err(bad("dimensions and block size must be positive"));
    }
    let n = rows.checked_mul(cols).ok_or_else(|| bad("size overflows"))?;
    let n_blocks = n.div_ceil(block_size);
    let n_codes = n.div_ceil(2);
    let expected = 18 + 4 * n_blocks + n_codes;
    if bytes.len() != expected {
        return Err(SboraError::Format(format!(
            "expected {expected} bytes for a {rows}x{cols} matrix, found {}",
            bytes.len()
        )));
    }
    let absmax: Vec<f32> = bytes[18..18 + 4 * n_blocks]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if absmax.iter().any(|a| !a.is_finite() || *a < 0.0) {
        return Err(bad("block scales must be finite and nonnegative"));
    }
    let codes = bytes[18 + 4 * n_blocks..].to_vec();
    if n % 2 == 1 && codes[n_codes - 1] >> 4 != 0 {
        return Err(bad("padding nibble must be zero"));
    }
    Ok(QuantizedMatrix {
        rows,
        cols,
        block_size,
        codes,
        absmax,
    })
}

pub fn save(path: impl AsRef<Path>, q: &QuantizedMatrix) -> Result<()> {
    std::fs::write(path, encode(q)?)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<QuantizedMatrix> {
    decode(&std::fs::read(path)?)
}
