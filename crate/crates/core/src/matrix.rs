//! Row-major dense matrices and batched activations.
//!
//! Both types are generic over [`Scalar`], which is implemented for `f32`
//! and `f64`. The precision tag is carried by the scalar type and written
//! into checkpoint headers.

use std::fmt::{Debug, Display};

use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::accounting::Counter;
use crate::error::{dim_err, Result};

/// Floating-point width of stored values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Precision {
    #[serde(rename = "32")]
    F32,
    #[serde(rename = "64")]
    F64,
}

impl Precision {
    pub fn bits(self) -> u32 {
        match self {
            Precision::F32 => 32,
            Precision::F64 => 64,
        }
    }

    pub fn from_bits(bits: u32) -> Option<Self> {
        match bits {
            32 => Some(Precision::F32),
            64 => Some(Precision::F64),
            _ => None,
        }
    }

    pub fn bytes(self) -> usize {
        self.bits() as usize / 8
    }
}

/// Real scalar usable in matrices: `f32` or `f64`.
pub trait Scalar: Float + Debug + Display + Default + Send + Sync + 'static {
    const PRECISION: Precision;

    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    /// Reads one value from exactly `PRECISION.bytes()` bytes.
    fn read_le(bytes: &[u8]) -> Self;
    /// Bit pattern widened to 64 bits.
    fn raw_bits(self) -> u64;

    fn bits_eq(self, other: Self) -> bool {
        self.raw_bits() == other.raw_bits()
    }
}

impl Scalar for f32 {
    const PRECISION: Precision = Precision::F32;

    fn of(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
    fn raw_bits(self) -> u64 {
        self.to_bits() as u64
    }
}

impl Scalar for f64 {
    const PRECISION: Precision = Precision::F64;

    fn of(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
    fn raw_bits(self) -> u64 {
        self.to_bits()
    }
}

/// Dense row-major matrix with positive dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        check_positive(rows, cols)?;
        Ok(Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        })
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        check_positive(rows, cols)?;
        if data.len() != rows * cols {
            return Err(dim_err(format!(
                "{} values supplied for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[T]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(dim_err("ragged rows"));
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Result<Self> {
        check_positive(rows, cols)?;
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Ok(Self { rows, cols, data })
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::from_fn(n, n, |i, j| if i == j { T::one() } else { T::zero() })
    }

    /// Entries drawn i.i.d. from `N(0, std^2)`.
    pub fn random_normal<R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Result<Self> {
        Self::from_fn(rows, cols, |_, _| {
            let z: f64 = rng.sample(StandardNormal);
            T::of(z * std)
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut out = Vec::with_capacity(self.data.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                out.push(self.get(i, j));
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            data: out,
        }
    }

    /// `self · other`, each entry a left-to-right dot product.
    pub fn matmul(&self, other: &Matrix<T>) -> Result<Self> {
        if self.cols != other.rows {
            return Err(dim_err(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let other_t = other.transpose();
        let mut noop = crate::accounting::NoCount;
        Self::from_fn(self.rows, other.cols, |i, j| {
            dot(self.row(i), other_t.row(j), &mut noop)
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64() * v.as_f64()).sum()
    }

    pub fn max_abs_diff(&self, other: &Matrix<T>) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|v| v.is_zero())
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}

fn check_positive(rows: usize, cols: usize) -> Result<()> {
    if rows == 0 || cols == 0 {
        return Err(dim_err(format!("matrix dimensions must be positive, got {rows}x{cols}")));
    }
    Ok(())
}

/// A batch of row vectors: `batch × features`, row-major. `batch` may be zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Activation<T> {
    batch: usize,
    features: usize,
    data: Vec<T>,
}

impl<T: Scalar> Activation<T> {
    pub fn zeros(batch: usize, features: usize) -> Result<Self> {
        if features == 0 {
            return Err(dim_err("activation width must be positive"));
        }
        Ok(Self {
            batch,
            features,
            data: vec![T::zero(); batch * features],
        })
    }

    pub fn from_vec(batch: usize, features: usize, data: Vec<T>) -> Result<Self> {
        if features == 0 {
            return Err(dim_err("activation width must be positive"));
        }
        if data.len() != batch * features {
            return Err(dim_err(format!(
                "{} values supplied for a batch of {batch}x{features}",
                data.len()
            )));
        }
        Ok(Self { batch, features, data })
    }

    /// A batch holding a single vector.
    pub fn from_vector(v: Vec<T>) -> Result<Self> {
        let n = v.len();
        Self::from_vec(1, n, v)
    }

    pub fn random_normal<R: Rng + ?Sized>(batch: usize, features: usize, rng: &mut R) -> Result<Self> {
        let data = (0..batch * features)
            .map(|_| T::of(rng.sample::<f64, _>(StandardNormal)))
            .collect();
        Self::from_vec(batch, features, data)
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, b: usize) -> &[T] {
        &self.data[b * self.features..(b + 1) * self.features]
    }

    pub fn row_mut(&mut self, b: usize) -> &mut [T] {
        &mut self.data[b * self.features..(b + 1) * self.features]
    }

    pub fn max_abs_diff(&self, other: &Activation<T>) -> f64 {
        assert_eq!((self.batch, self.features), (other.batch, other.features));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Left-to-right dot product: `len` mults and `len - 1` adds.
pub(crate) fn dot<T: Scalar, C: Counter>(a: &[T], b: &[T], counter: &mut C) -> T {
    debug_assert_eq!(a.len(), b.len());
    debug_assert!(!a.is_empty());
    let mut acc = a[0] * b[0];
    for j in 1..a.len() {
        acc = acc + a[j] * b[j];
    }
    counter.mul(a.len() as u64);
    counter.add(a.len() as u64 - 1);
    acc
}

/// `W · x` for every row of `x`.
pub(crate) fn linear<T: Scalar, C: Counter>(
    w: &Matrix<T>,
    x: &Activation<T>,
    counter: &mut C,
) -> Result<Activation<T>> {
    if x.features() != w.cols() {
        return Err(dim_err(format!(
            "input has {} features, weight expects {}",
            x.features(),
            w.cols()
        )));
    }
    let mut out = Activation::zeros(x.batch(), w.rows())?;
    for b in 0..x.batch() {
        let xr = x.row(b);
        let hr = out.row_mut(b);
        for (i, h) in hr.iter_mut().enumerate() {
            *h = dot(w.row(i), xr, counter);
        }
    }
    Ok(out)
}
