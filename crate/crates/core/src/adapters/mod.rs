//! Adapter layers over a frozen base weight.
//!
//! Three kinds share one interface:
//!
//! * **LoRA**: `h = W0·x + B·(A·x)`, both factors trainable.
//! * **SBoRA-FA**: the projection-down is `r` frozen one-hot rows, stored as
//!   indices. The forward gathers `x` at those indices instead of
//!   multiplying, and merging only touches `r` columns of `W0`.
//! * **SBoRA-FB**: the projection-up is `r` frozen one-hot columns. The
//!   forward index-adds `A·x` into `W0·x`, and merging only touches `r` rows.

mod basis;
pub mod checkpoint;
mod combine;
mod layer;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use basis::{orthogonality_check, BasisIndexSet, Side};
pub use combine::{check_disjoint, combine_adapters, CombinedModel};
pub use layer::{lora_forward, sbora_fa_forward, sbora_fb_forward, Adapter, AdapterLayer};

use crate::error::SboraError;
use crate::matrix::{Matrix, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AdapterKind {
    #[serde(rename = "lora")]
    Lora,
    #[serde(rename = "sbora-fa")]
    SboraFa,
    #[serde(rename = "sbora-fb")]
    SboraFb,
}

impl AdapterKind {
    pub const ALL: [AdapterKind; 3] = [AdapterKind::Lora, AdapterKind::SboraFa, AdapterKind::SboraFb];

    pub fn name(self) -> &'static str {
        match self {
            AdapterKind::Lora => "lora",
            AdapterKind::SboraFa => "sbora-fa",
            AdapterKind::SboraFb => "sbora-fb",
        }
    }

    /// Kind field of the checkpoint header.
    pub fn code(self) -> u32 {
        match self {
            AdapterKind::Lora => 1,
            AdapterKind::SboraFa => 2,
            AdapterKind::SboraFb => 3,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            1 => Some(AdapterKind::Lora),
            2 => Some(AdapterKind::SboraFa),
            3 => Some(AdapterKind::SboraFb),
            _ => None,
        }
    }
}

impl fmt::Display for AdapterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AdapterKind {
    type Err = SboraError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "lora" => Ok(AdapterKind::Lora),
            "fa" | "sbora-fa" | "sbora_fa" => Ok(AdapterKind::SboraFa),
            "fb" | "sbora-fb" | "sbora_fb" => Ok(AdapterKind::SboraFb),
            other => Err(SboraError::Config(format!("unknown adapter method '{other}'"))),
        }
    }
}

/// One-hot-materialized basis for the given side.
pub fn materialize_basis<T: Scalar>(basis: &BasisIndexSet, side: Side) -> Matrix<T> {
    basis.materialize(side)
}

/// Draws `r` distinct indices from `0..dim`, deterministic in `seed`.
pub fn sample_basis_indices(dim: usize, r: usize, seed: u64) -> crate::Result<BasisIndexSet> {
    BasisIndexSet::sample(dim, r, seed)
}

/// Dense `ΔW` of a layer.
pub fn delta_weight<T: Scalar>(layer: &AdapterLayer<T>) -> Matrix<T> {
    layer.delta_weight()
}

/// Merged weight `W0 + scale·ΔW` of a layer.
pub fn merge<T: Scalar>(layer: &AdapterLayer<T>) -> Matrix<T> {
    layer.merge()
}
