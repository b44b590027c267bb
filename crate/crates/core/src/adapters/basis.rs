//! Standard-basis index sets.
//!
//! A frozen SBoRA projection is a stack of `r` one-hot vectors, so it is
//! stored as the `r` positions of the ones. Indices are 0-based.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result, SboraError};
use crate::matrix::{Matrix, Scalar};

/// Orientation of a materialized basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// `r × dim`, one-hot rows (the FA projection-down).
    Row,
    /// `dim × r`, one-hot columns (the FB projection-up).
    Column,
}

/// `r` distinct, ascending indices into `0..dim`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BasisIndexSet {
    dim: usize,
    indices: Vec<usize>,
}

impl BasisIndexSet {
    pub fn new(dim: usize, indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() || indices.len() > dim {
            return Err(SboraError::InvalidRank {
                rank: indices.len(),
                dim,
            });
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(dim_err("basis indices must be strictly increasing"));
        }
        if let Some(&last) = indices.last() {
            if last >= dim {
                return Err(dim_err(format!("basis index {last} out of range for dimension {dim}")));
            }
        }
        Ok(Self { dim, indices })
    }

    /// Draws `r` indices uniformly without replacement from `0..dim`.
    pub fn sample(dim: usize, r: usize, seed: u64) -> Result<Self> {
        if r == 0 || r > dim {
            return Err(SboraError::InvalidRank { rank: r, dim });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut indices = rand::seq::index::sample(&mut rng, dim, r).into_vec();
        indices.sort_unstable();
        Self::new(dim, indices)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    /// First index present in both sets, if any.
    pub fn first_shared(&self, other: &BasisIndexSet) -> Option<usize> {
        let (mut i, mut j) = (0, 0);
        while i < self.indices.len() && j < other.indices.len() {
            match self.indices[i].cmp(&other.indices[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => return Some(self.indices[i]),
            }
        }
        None
    }

    /// The dense one-hot matrix this set stands for.
    pub fn materialize<T: Scalar>(&self, side: Side) -> Matrix<T> {
        let r = self.rank();
        let mut m = match side {
            Side::Row => Matrix::zeros(r, self.dim),
            Side::Column => Matrix::zeros(self.dim, r),
        }
        .expect("basis dimensions are positive");
        for (p, &idx) in self.indices.iter().enumerate() {
            match side {
                Side::Row => m.set(p, idx, T::one()),
                Side::Column => m.set(idx, p, T::one()),
            }
        }
        m
    }
}

/// True iff the two sets share no index, i.e. the materialized row bases
/// satisfy `A_p · A_q^T = 0`.
pub fn orthogonality_check(b1: &BasisIndexSet, b2: &BasisIndexSet) -> Result<bool> {
    if b1.dim() != b2.dim() {
        return Err(dim_err(format!(
            "cannot compare bases of dimension {} and {}",
            b1.dim(),
            b2.dim()
        )));
    }
    Ok(b1.first_shared(b2).is_none())
}
