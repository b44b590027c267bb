//! Closed-form memory and operation counts for each adapter kind, plus the
//! invocation-local counters threaded through the forward kernels.
//!
//! All formulas use `W0 ∈ R^{d×k}`: inputs have `k` features, outputs `d`.
//! Operation counts are for a single input vector with the adapter scale at
//! 1.0; a batch of `n` costs exactly `n` times as much. Multiplies and adds
//! are counted separately (no fused multiply-add).

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adapters::{AdapterKind, AdapterLayer, BasisIndexSet};
use crate::error::{Result, SboraError};
use crate::matrix::{Activation, Matrix};

/// Sink for scalar operation counts.
pub trait Counter {
    fn mul(&mut self, n: u64);
    fn add(&mut self, n: u64);
}

/// Counter that discards everything.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoCount;

impl Counter for NoCount {
    #[inline(always)]
    fn mul(&mut self, _: u64) {}
    #[inline(always)]
    fn add(&mut self, _: u64) {}
}

/// Scalar multiply/add tallies for one kernel invocation (or a run of them).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounters {
    mults: u64,
    adds: u64,
    #[serde(skip)]
    overflowed: bool,
}

impl OpCounters {
    pub fn mults(&self) -> u64 {
        self.mults
    }

    pub fn adds(&self) -> u64 {
        self.adds
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }

    /// Fails if any increment wrapped past `u64::MAX`.
    pub fn checked(self) -> Result<Self> {
        if self.overflowed {
            return Err(SboraError::Numeric("operation counter overflow".into()));
        }
        Ok(self)
    }
}

impl Counter for OpCounters {
    fn mul(&mut self, n: u64) {
        match self.mults.checked_add(n) {
            Some(v) => self.mults = v,
            None => self.overflowed = true,
        }
    }

    fn add(&mut self, n: u64) {
        match self.adds.checked_add(n) {
            Some(v) => self.adds = v,
            None => self.overflowed = true,
        }
    }
}

/// Memory and operation costs of one adapter configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub method: AdapterKind,
    pub d: u64,
    pub k: u64,
    pub r: u64,
    pub trainable_params: u64,
    /// Trainable values plus stored basis indices.
    pub total_params: u64,
    pub gradient_values: u64,
    pub mults: u64,
    pub adds: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCost {
    pub trainable: u64,
    pub total: u64,
    pub gradient: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlopCost {
    pub mults: u64,
    pub adds: u64,
}

fn check_dims(d: u64, k: u64, r: u64) -> Result<()> {
    if d == 0 || k == 0 {
        return Err(SboraError::Dimension(format!("d={d}, k={k} must be positive")));
    }
    if r == 0 {
        return Err(SboraError::InvalidRank { rank: 0, dim: d.min(k) as usize });
    }
    Ok(())
}

/// Parameter and gradient storage.
///
/// SBoRA kinds store `r` index slots in place of the frozen projection, so
/// `total = trainable + r`.
pub fn analytic_params(method: AdapterKind, d: u64, k: u64, r: u64) -> Result<ParamCost> {
    check_dims(d, k, r)?;
    let (trainable, total) = match method {
        AdapterKind::Lora => ((k + d) * r, (k + d) * r),
        AdapterKind::SboraFa => (d * r, d * r + r),
        AdapterKind::SboraFb => (k * r, k * r + r),
    };
    Ok(ParamCost {
        trainable,
        total,
        gradient: trainable,
    })
}

/// Multiplies and adds for one forward pass over one input vector.
///
/// Base path `W0·x` costs `d·k` mults and `d·(k-1)` adds. LoRA adds both
/// projections and a `d`-wide merge add; FA skips the projection-down
/// (component gather); FB skips the projection-up (index-add of `r` values).
pub fn analytic_flops(method: AdapterKind, d: u64, k: u64, r: u64) -> Result<FlopCost> {
    check_dims(d, k, r)?;
    let base_mults = d * k;
    let base_adds = d * (k - 1);
    let (mults, adds) = match method {
        AdapterKind::Lora => (
            base_mults + r * k + d * r,
            base_adds + r * (k - 1) + d * (r - 1) + d,
        ),
        AdapterKind::SboraFa => (base_mults + d * r, base_adds + d * (r - 1) + d),
        AdapterKind::SboraFb => (base_mults + r * k, base_adds + r * (k - 1) + r),
    };
    Ok(FlopCost { mults, adds })
}

pub fn analytic_cost(method: AdapterKind, d: u64, k: u64, r: u64) -> Result<CostReport> {
    let p = analytic_params(method, d, k, r)?;
    let f = analytic_flops(method, d, k, r)?;
    Ok(CostReport {
        method,
        d,
        k,
        r,
        trainable_params: p.trainable,
        total_params: p.total,
        gradient_values: p.gradient,
        mults: f.mults,
        adds: f.adds,
    })
}

/// Runs an instrumented forward of a random layer over `batch` random inputs
/// and returns the counted operations.
pub fn measured_cost(method: AdapterKind, d: usize, k: usize, r: usize, batch: usize, seed: u64) -> Result<OpCounters> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w0 = Matrix::<f64>::random_normal(d, k, 1.0, &mut rng)?;
    let mut layer = match method {
        AdapterKind::Lora => AdapterLayer::lora(w0, r, seed)?,
        AdapterKind::SboraFa => AdapterLayer::sbora_fa(w0, BasisIndexSet::sample(k, r, seed)?)?,
        AdapterKind::SboraFb => AdapterLayer::sbora_fb(w0, BasisIndexSet::sample(d, r, seed)?)?,
    };
    for m in layer.trainable_mut() {
        for v in m.data_mut() {
            *v = 0.5;
        }
    }
    let x = Activation::random_normal(batch, k, &mut rng)?;
    let mut counters = OpCounters::default();
    layer.forward_counted(&x, &mut counters)?;
    counters.checked()
}

/// One row of a cost sweep: analytic figures plus the instrumented counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: AdapterKind,
    pub d: u64,
    pub k: u64,
    pub r: u64,
    pub trainable: u64,
    pub total: u64,
    pub grad: u64,
    pub mults: u64,
    pub adds: u64,
    pub measured_mults: u64,
    pub measured_adds: u64,
    /// Trainable parameters relative to LoRA at the same shape.
    pub trainable_vs_lora: f64,
}

impl SweepRow {
    pub fn matches(&self) -> bool {
        self.mults == self.measured_mults && self.adds == self.measured_adds
    }
}

/// Evaluates every valid `(method, d, k, r)` combination with `r <= min(d, k)`.
pub fn sweep(methods: &[AdapterKind], ds: &[u64], ks: &[u64], rs: &[u64]) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &method in methods {
        for &d in ds {
            for &k in ks {
                for &r in rs {
                    if r == 0 || r > d.min(k) {
                        continue;
                    }
                    let cost = analytic_cost(method, d, k, r)?;
                    let lora = analytic_params(AdapterKind::Lora, d, k, r)?;
                    let seed = d * 10_000 + k * 100 + r;
                    let measured = measured_cost(method, d as usize, k as usize, r as usize, 1, seed)?;
                    rows.push(SweepRow {
                        method,
                        d,
                        k,
                        r,
                        trainable: cost.trainable_params,
                        total: cost.total_params,
                        grad: cost.gradient_values,
                        mults: cost.mults,
                        adds: cost.adds,
                        measured_mults: measured.mults(),
                        measured_adds: measured.adds(),
                        trainable_vs_lora: cost.trainable_params as f64 / lora.trainable as f64,
                    });
                }
            }
        }
    }
    Ok(rows)
}

pub const SWEEP_HEADER: [&str; 12] = [
    "method",
    "d",
    "k",
    "r",
    "trainable",
    "total",
    "grad",
    "mults",
    "adds",
    "measured_mults",
    "measured_adds",
    "trainable_vs_lora",
];

/// Writes a sweep as CSV. The header is emitted even when `rows` is empty.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(SWEEP_HEADER).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> SboraError {
    SboraError::Io(std::io::Error::other(e))
}
