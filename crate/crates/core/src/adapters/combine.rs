use super::layer::Adapter;
use super::AdapterKind;
use crate::accounting::{Counter, NoCount};
use crate::error::{dim_err, Result, SboraError};
use crate::matrix::{linear, Activation, Matrix, Scalar};

/// A frozen base weight with several weighted adapters:
/// `h = W0·x + Σ λ_i · ΔW_i · x`.
///
/// SBoRA adapters projecting through the same side must use pairwise
/// disjoint bases, which makes their subspaces orthogonal.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinedModel<T> {
    w0: Matrix<T>,
    adapters: Vec<(Adapter<T>, T)>,
}

impl<T: Scalar> CombinedModel<T> {
    pub fn new(w0: Matrix<T>, adapters: Vec<(Adapter<T>, T)>) -> Result<Self> {
        for (i, (ad, lambda)) in adapters.iter().enumerate() {
            if (ad.out_dim(), ad.in_dim()) != w0.shape() {
                return Err(dim_err(format!(
                    "adapter {i} is {}x{} but W0 is {}x{}",
                    ad.out_dim(),
                    ad.in_dim(),
                    w0.rows(),
                    w0.cols()
                )));
            }
            if !lambda.is_finite() {
                return Err(SboraError::Numeric(format!("lambda for adapter {i} is not finite")));
            }
        }
        check_disjoint(&adapters)?;
        Ok(Self { w0, adapters })
    }

    pub fn w0(&self) -> &Matrix<T> {
        &self.w0
    }

    pub fn adapters(&self) -> &[(Adapter<T>, T)] {
        &self.adapters
    }

    pub fn forward(&self, x: &Activation<T>) -> Result<Activation<T>> {
        self.forward_counted(x, &mut NoCount)
    }

    pub fn forward_counted<C: Counter>(&self, x: &Activation<T>, counter: &mut C) -> Result<Activation<T>> {
        let mut h = linear(&self.w0, x, counter)?;
        for (ad, lambda) in &self.adapters {
            ad.apply_delta(x, &mut h, *lambda, counter)?;
        }
        Ok(h)
    }

    /// Merges every adapter into a copy of `W0`, in list order.
    pub fn merge(&self) -> Matrix<T> {
        let mut w = self.w0.clone();
        for (ad, lambda) in &self.adapters {
            ad.merge_into(&mut w, *lambda).expect("shapes validated at construction");
        }
        w
    }
}

/// Rejects two same-side SBoRA adapters that share a basis index.
pub fn check_disjoint<T: Scalar>(adapters: &[(Adapter<T>, T)]) -> Result<()> {
    for i in 0..adapters.len() {
        for j in i + 1..adapters.len() {
            let (a, b) = (&adapters[i].0, &adapters[j].0);
            if a.kind() == AdapterKind::Lora || a.kind() != b.kind() {
                continue;
            }
            let (ba, bb) = (a.basis().expect("sbora"), b.basis().expect("sbora"));
            if let Some(index) = ba.first_shared(bb) {
                return Err(SboraError::Orthogonality {
                    index,
                    first: i,
                    second: j,
                });
            }
        }
    }
    Ok(())
}

/// Combined forward of `model` on `x`.
pub fn combine_adapters<T: Scalar>(model: &CombinedModel<T>, x: &Activation<T>) -> Result<Activation<T>> {
    model.forward(x)
}
