//! C ABI over the `sbora` library.
//!
//! Layers and quantized matrices are opaque heap handles released with the
//! matching `*_free`. Every fallible call returns an [`SboraStatus`]; on
//! failure a message is kept per thread and can be read with
//! [`sbora_last_error_message`]. All matrices are row-major `double`
//! buffers; `W0` is `d × k`, inputs are `batch × k` and outputs `batch × d`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use sbora::accounting::{analytic_cost, OpCounters};
use sbora::adapters::checkpoint;
use sbora::adapters::orthogonality_check;
use sbora::quant::{self, QuantizedMatrix};
use sbora::{Activation, AdapterKind, AdapterLayer, BasisIndexSet, Matrix, SboraError};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SboraStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidRank = 3,
    DimensionMismatch = 4,
    KindMismatch = 5,
    Orthogonality = 6,
    Numeric = 7,
    Format = 8,
    Io = 9,
    Panic = 10,
}

/// Adapter kind codes, matching the checkpoint header.
pub const SBORA_KIND_LORA: u32 = 1;
pub const SBORA_KIND_FA: u32 = 2;
pub const SBORA_KIND_FB: u32 = 3;

/// Opaque adapter layer over a 64-bit base weight.
pub struct SboraLayer {
    inner: AdapterLayer<f64>,
}

/// Opaque NF4-quantized matrix.
pub struct SboraQuantized {
    inner: QuantizedMatrix,
}

/// Closed-form costs of one adapter configuration.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SboraCost {
    pub trainable_params: u64,
    pub total_params: u64,
    pub gradient_values: u64,
    pub mults: u64,
    pub adds: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(SboraStatus, String);

impl From<SboraError> for Failure {
    fn from(e: SboraError) -> Self {
        let status = match &e {
            SboraError::InvalidRank { .. } => SboraStatus::InvalidRank,
            SboraError::Dimension(_) => SboraStatus::DimensionMismatch,
            SboraError::KindMismatch { .. } => SboraStatus::KindMismatch,
            SboraError::Orthogonality { .. } => SboraStatus::Orthogonality,
            SboraError::Numeric(_) | SboraError::Diverged { .. } => SboraStatus::Numeric,
            SboraError::Format(_) => SboraStatus::Format,
            SboraError::Config(_) => SboraStatus::InvalidArgument,
            SboraError::Io(_) => SboraStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(SboraStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(SboraStatus::InvalidArgument, msg.into())
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SboraStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            clear_last_error();
            SboraStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            SboraStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn layer_ref<'a>(layer: *const SboraLayer) -> Result<&'a AdapterLayer<f64>, Failure> {
    layer.as_ref().map(|l| &l.inner).ok_or_else(|| null("layer"))
}

unsafe fn path_arg(p: *const c_char) -> Result<String, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| invalid("path is not valid UTF-8"))
}

fn kind_arg(kind: u32) -> Result<AdapterKind, Failure> {
    AdapterKind::from_code(kind).ok_or_else(|| invalid(format!("unknown adapter kind {kind}")))
}

fn area(a: usize, b: usize) -> Result<usize, Failure> {
    a.checked_mul(b).ok_or_else(|| invalid("dimensions overflow"))
}

fn checked<T>(r: sbora::Result<T>) -> Result<T, Failure> {
    r.map_err(Failure::from)
}

/// Message of the calling thread's most recent failure, or null after a
/// success. The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn sbora_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sbora_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a layer over a copy of `w0` (`d × k`).
///
/// LoRA starts with uniform `A` and zero `B`, seeded by `seed`. SBoRA kinds
/// draw `r` basis indices from `seed` and start with a zero trainable
/// matrix.
///
/// # Safety
/// `w0` must point to `d * k` doubles and `out` to writable storage.
#[no_mangle]
pub unsafe extern "C" fn sbora_layer_new(
    kind: u32,
    d: usize,
    k: usize,
    r: usize,
    w0: *const f64,
    seed: u64,
    out: *mut *mut SboraLayer,
) -> SboraStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let kind = kind_arg(kind)?;
        let w = checked(Matrix::from_vec(d, k, slice(w0, area(d, k)?, "w0")?.to_vec()))?;
        let inner = match kind {
            AdapterKind::Lora => checked(AdapterLayer::lora(w, r, seed))?,
            AdapterKind::SboraFa => checked(AdapterLayer::sbora_fa(w, checked(BasisIndexSet::sample(k, r, seed))?))?,
            AdapterKind::SboraFb => checked(AdapterLayer::sbora_fb(w, checked(BasisIndexSet::sample(d, r, seed))?))?,
        };
        *out = Box::into_raw(Box::new(SboraLayer { inner }));
        Ok(())
    })
}

/// Creates an SBoRA layer with explicit, strictly increasing basis indices.
///
/// # Safety
/// `w0` must point to `d * k` doubles, `indices` to `r` values and `out` to
/// writable storage.
#[no_mangle]
pub unsafe extern "C" fn sbora_layer_new_with_basis(
    kind: u32,
    d: usize,
    k: usize,
    w0: *const f64,
    indices: *const usize,
    r: usize,
    out: *mut *mut SboraLayer,
) -> SboraStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let w = checked(Matrix::from_vec(d, k, slice(w0, area(d, k)?, "w0")?.to_vec()))?;
        let idx = slice(indices, r, "indices")?.to_vec();
        let inner = match kind_arg(kind)? {
            AdapterKind::SboraFa => checked(AdapterLayer::sbora_fa(w, checked(BasisIndexSet::new(k, idx))?))?,
            AdapterKind::SboraFb => checked(AdapterLayer::sbora_fb(w, checked(BasisIndexSet::new(d, idx))?))?,
            AdapterKind::Lora => return Err(invalid("LoRA layers have no basis")),
        };
        *out = Box::into_raw(Box::new(SboraLayer { inner }));
        Ok(())
    })
}

/// Releases a layer. Null is ignored.
///
/// # Safety
/// `layer` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sbora_layer_free(layer: *mut SboraLayer) {
    if !layer.is_null() {
        drop(Box::from_raw(layer));
    }
}

/// Writes the layer's kind code, `d`, `k` and `r`. Any output may be null.
///
/// # Safety
/// Non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn sbora_layer_shape(
    layer: *const SboraLayer,
    kind: *mut u32,
    d: *mut usize,
    k: *mut usize,
    r: *mut usize,
) -> SboraStatus {
    guard(|| {
        let l = layer_ref(layer)?;
        if let Some(p) = kind.as_mut() {
            *p = l.kind().code();
        }
        if let Some(p) = d.as_mut() {
            *p = l.d();
        }
        if let Some(p) = k.as_mut() {
            *p = l.k();
        }
        if let Some(p) = r.as_mut() {
            *p = l.rank();
        }
        Ok(())
    })
}

/// Copies the basis indices of an SBoRA layer into `out` (`r` entries).
///
/// # Safety
/// `out` must have room for `len` values.
#[no_mangle]
pub unsafe extern "C" fn sbora_layer_basis(layer: *const SboraLayer, out: *mut usize, len: usize) -> SboraStatus {
    guard(|| {
        let l = layer_ref(layer)?;
        let basis = l.basis().ok_or_else(|| invalid("LoRA layers have no basis"))?;
        if len != basis.rank() {
            return Err(invalid(format!("basis has {} entries, buffer holds {len}", basis.rank())));
        }
        slice_mut(out, len, "out")?.copy_from_slice(basis.indices());
        Ok(())
    })
}

fn trainable_len(l: &AdapterLayer<f64>, index: usize) -> Result<usize, Failure> {
    l.trainable()
        .get(index)
        .map(|m| m.data().len())
        .ok_or_else(|| invalid(format!("trainable index {index} out of range")))
}

/// Overwrites trainable matrix `index` (LoRA: 0 = A, 1 = B; SBoRA: 0).
///
/// # Safety
/// `data` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sbora_layer_set_trainable(
    layer: *mut SboraLayer,
    index: usize,
    data: *const f64,
    len: usize,
) -> SboraStatus {
    guard(|| {
        let l = &mut layer.as_mut().ok_or_else(|| null("layer"))?.inner;
        let want = trainable_len(l, index)?;
        if len != want {
            return Err(Failure(
                SboraStatus::DimensionMismatch,
                format!("trainable {index} has {want} entries, got {len}"),
            ));
        }
        let src = slice(data, len, "data")?;
        l.trainable_mut()[index].data_mut().copy_from_slice(src);
        Ok(())
    })
}

/// Copies trainable matrix `index` into `out`.
///
/// # Safety
/// `out` must have room for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sbora_layer_get_trainable(
    layer: *const SboraLayer,
    index: usize,
    out: *mut f64,
    len: usize,
) -> SboraStatus {
    guard(|| {
        let l = layer_ref(layer)?;
        let want = trainable_len(l, index)?;
        if len != want {
            return Err(Failure(
                SboraStatus::DimensionMismatch,
                format!("trainable {index} has {want} entries, buffer holds {len}"),
            ));
        }
        slice_mut(out, len, "out")?.copy_from_slice(l.trainable()[index].data());
        Ok(())
    })
}

unsafe fn forward_into(
    l: &AdapterLayer<f64>,
    x: *const f64,
    batch: usize,
    out: *mut f64,
    counters: Option<&mut OpCounters>,
) -> Result<(), Failure> {
    let input = checked(Activation::from_vec(batch, l.k(), slice(x, area(batch, l.k())?, "x")?.to_vec()))?;
    let h = match counters {
        Some(c) => checked(l.forward_counted(&input, c))?,
        None => checked(l.forward(&input))?,
    };
    slice_mut(out, area(batch, l.d())?, "out")?.copy_from_slice(h.data());
    Ok(())
}

/// `out = x·W0ᵀ + scale·x·ΔWᵀ` for a `batch × k` input.
///
/// # Safety
/// `x` must hold `batch * k` doubles and `out` room for `batch * d`.
#[no_mangle]
pub unsafe extern "C" fn sbora_layer_forward(
    layer: *const SboraLayer,
    x: *const f64,
    batch: usize,
    out: *mut f64,
) -> SboraStatus {
    guard(|| forward_into(layer_ref(layer)?, x, batch, out, None))
}

/// Like [`sbora_layer_forward`], also reporting scalar multiplications and
/// additions.
///
/// # Safety
/// As for [`sbora_layer_forward`]; `mults` and `adds` may be null.
#[no_mangle]
pub unsafe extern "C" fn sbora_layer_forward_counted(
    layer: *const SboraLayer,
    x: *const f64,
    batch: usize,
    out: *mut f64,
    mults: *mut u64,
    adds: *mut u64,
) -> SboraStatus {
    guard(|| {
        let mut c = OpCounters::default();
        forward_into(layer_ref(layer)?, x, batch, out, Some(&mut c))?;
        let c = checked(c.checked())?;
        if let Some(p) = mults.as_mut() {
            *p = c.mults();
        }
        if let Some(p) = adds.as_mut() {
            *p = c.adds();
        }
        Ok(())
    })
}

/// Writes the merged weight `W0 + scale·ΔW` (`d × k`).
///
/// # Safety
/// `out` must have room for `d * k` doubles.
#[no_mangle]
pub unsafe extern "C" fn sbora_layer_merge(layer: *const SboraLayer, out: *mut f64) -> SboraStatus {
    guard(|| {
        let l = layer_ref(layer)?;
        slice_mut(out, area(l.d(), l.k())?, "out")?.copy_from_slice(l.merge().data());
        Ok(())
    })
}

/// Writes the dense `ΔW` (`d × k`), without the scale.
///
/// # Safety
/// `out` must have room for `d * k` doubles.
#[no_mangle]
pub unsafe extern "C" fn sbora_layer_delta(layer: *const SboraLayer, out: *mut f64) -> SboraStatus {
    guard(|| {
        let l = layer_ref(layer)?;
        slice_mut(out, area(l.d(), l.k())?, "out")?.copy_from_slice(l.adapter().delta_weight().data());
        Ok(())
    })
}

/// Saves the base weight and the adapter as two SBORA1 checkpoints.
///
/// # Safety
/// Both paths must be NUL-terminated UTF-8.
#[no_mangle]
pub unsafe extern "C" fn sbora_layer_save(
    layer: *const SboraLayer,
    base_path: *const c_char,
    adapter_path: *const c_char,
) -> SboraStatus {
    guard(|| {
        let l = layer_ref(layer)?;
        let (base, adapter) = (path_arg(base_path)?, path_arg(adapter_path)?);
        checked(checkpoint::save_base(base, l.w0()))?;
        checked(checkpoint::save_adapter(adapter, l.adapter()))
    })
}

/// Loads a layer from 64-bit base and adapter checkpoints. The scale is 1.
///
/// # Safety
/// Both paths must be NUL-terminated UTF-8 and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sbora_layer_load(
    base_path: *const c_char,
    adapter_path: *const c_char,
    out: *mut *mut SboraLayer,
) -> SboraStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let w0 = checked(checkpoint::load_base::<f64>(path_arg(base_path)?))?;
        let adapter = checked(checkpoint::load_adapter::<f64>(path_arg(adapter_path)?))?;
        let inner = checked(AdapterLayer::new(w0, adapter, 1.0))?;
        *out = Box::into_raw(Box::new(SboraLayer { inner }));
        Ok(())
    })
}

/// Closed-form parameter and operation counts.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sbora_analytic_cost(kind: u32, d: u64, k: u64, r: u64, out: *mut SboraCost) -> SboraStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let c = checked(analytic_cost(kind_arg(kind)?, d, k, r))?;
        *out = SboraCost {
            trainable_params: c.trainable_params,
            total_params: c.total_params,
            gradient_values: c.gradient_values,
            mults: c.mults,
            adds: c.adds,
        };
        Ok(())
    })
}

/// Sets `*disjoint` to whether two index sets over `0..dim` share no index.
///
/// # Safety
/// `a` and `b` must hold `a_len` and `b_len` values; `disjoint` writable.
#[no_mangle]
pub unsafe extern "C" fn sbora_orthogonality_check(
    dim: usize,
    a: *const usize,
    a_len: usize,
    b: *const usize,
    b_len: usize,
    disjoint: *mut bool,
) -> SboraStatus {
    guard(|| {
        let out = disjoint.as_mut().ok_or_else(|| null("disjoint"))?;
        let s1 = checked(BasisIndexSet::new(dim, slice(a, a_len, "a")?.to_vec()))?;
        let s2 = checked(BasisIndexSet::new(dim, slice(b, b_len, "b")?.to_vec()))?;
        *out = checked(orthogonality_check(&s1, &s2))?;
        Ok(())
    })
}

/// NF4-quantizes a `rows × cols` matrix in blocks of `block_size`.
///
/// # Safety
/// `data` must hold `rows * cols` doubles and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn sbora_quantize(
    data: *const f64,
    rows: usize,
    cols: usize,
    block_size: usize,
    out: *mut *mut SboraQuantized,
) -> SboraStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let w = checked(Matrix::from_vec(rows, cols, slice(data, area(rows, cols)?, "data")?.to_vec()))?;
        let inner = checked(quant::quantize(&w, block_size))?;
        *out = Box::into_raw(Box::new(SboraQuantized { inner }));
        Ok(())
    })
}

/// Releases a quantized matrix. Null is ignored.
///
/// # Safety
/// `q` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sbora_quantized_free(q: *mut SboraQuantized) {
    if !q.is_null() {
        drop(Box::from_raw(q));
    }
}

/// Writes the dequantized matrix (`rows × cols`).
///
/// # Safety
/// `out` must have room for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sbora_quantized_dequantize(q: *const SboraQuantized, out: *mut f64, len: usize) -> SboraStatus {
    guard(|| {
        let q = &q.as_ref().ok_or_else(|| null("quantized matrix"))?.inner;
        if len != q.len() {
            return Err(invalid(format!("matrix has {} entries, buffer holds {len}", q.len())));
        }
        slice_mut(out, len, "out")?.copy_from_slice(quant::dequantize::<f64>(q).data());
        Ok(())
    })
}

/// Saves a quantized matrix in the SBQ4NF format.
///
/// # Safety
/// `path` must be NUL-terminated UTF-8.
#[no_mangle]
pub unsafe extern "C" fn sbora_quantized_save(q: *const SboraQuantized, path: *const c_char) -> SboraStatus {
    guard(|| {
        let q = &q.as_ref().ok_or_else(|| null("quantized matrix"))?.inner;
        checked(quant::save(path_arg(path)?, q))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn errors_are_recorded_per_call() {
        let mut layer = ptr::null_mut();
        let w = [1.0; 4];
        let status = unsafe { sbora_layer_new(SBORA_KIND_FA, 2, 2, 3, w.as_ptr(), 0, &mut layer) };
        assert_eq!(status, SboraStatus::InvalidRank);
        assert!(layer.is_null());
        let msg = unsafe { CStr::from_ptr(sbora_last_error_message()) };
        assert!(msg.to_str().unwrap().contains("invalid rank"));

        let status = unsafe { sbora_layer_new(SBORA_KIND_FA, 2, 2, 1, w.as_ptr(), 0, &mut layer) };
        assert_eq!(status, SboraStatus::Ok);
        assert!(sbora_last_error_message().is_null());
        unsafe { sbora_layer_free(layer) };
    }

    #[test]
    fn null_handles_rejected() {
        let mut out = [0.0; 4];
        let status = unsafe { sbora_layer_merge(ptr::null(), out.as_mut_ptr()) };
        assert_eq!(status, SboraStatus::NullPointer);
        assert_eq!(unsafe { sbora_layer_new(9, 1, 1, 1, out.as_ptr(), 0, ptr::null_mut()) }, SboraStatus::NullPointer);
        let mut layer = ptr::null_mut();
        assert_eq!(
            unsafe { sbora_layer_new(9, 1, 1, 1, out.as_ptr(), 0, &mut layer) },
            SboraStatus::InvalidArgument
        );
    }

    #[test]
    fn version_is_terminated() {
        let v = unsafe { CStr::from_ptr(sbora_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }
}
