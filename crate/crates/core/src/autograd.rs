//! Hand-derived gradients for the trainable adapter matrices, and a central
//! finite-difference checker.
//!
//! `W0` and the basis indices have no gradient slot: a [`GradientBundle`]
//! only ever holds matrices shaped like [`AdapterLayer::trainable`].

use serde::Serialize;

use crate::adapters::{Adapter, AdapterKind, AdapterLayer};
use crate::error::{dim_err, Result, SboraError};
use crate::matrix::{Activation, Matrix, Scalar};

/// Gradients aligned one-to-one with the layer's trainable matrices
/// (`[dA, dB]` for LoRA, `[dB]` for FA, `[dA]` for FB).
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle<T> {
    pub kind: AdapterKind,
    pub grads: Vec<Matrix<T>>,
}

impl<T: Scalar> GradientBundle<T> {
    pub fn is_finite(&self) -> bool {
        self.grads.iter().all(|g| g.is_finite())
    }
}

/// Backpropagates `upstream = ∂L/∂h` through the adapter path.
///
/// FA: `dB = s · Σ_b up_b ⊗ x_b[basis]`, reusing the forward's gather.
/// FB: `dA = s · Σ_b up_b[basis] ⊗ x_b`, gathering upstream at the basis.
/// LoRA: `dB = s · Σ_b up_b ⊗ (A x_b)`, `dA = s · Σ_b (Bᵀ up_b) ⊗ x_b`.
pub fn backward<T: Scalar>(
    layer: &AdapterLayer<T>,
    x: &Activation<T>,
    upstream: &Activation<T>,
) -> Result<GradientBundle<T>> {
    let (d, k) = (layer.d(), layer.k());
    if x.features() != k || upstream.features() != d || x.batch() != upstream.batch() {
        return Err(dim_err(format!(
            "backward expects x: n×{k} and upstream: n×{d}, got {}×{} and {}×{}",
            x.batch(),
            x.features(),
            upstream.batch(),
            upstream.features()
        )));
    }
    let s = layer.scale();
    let r = layer.rank();
    let grads = match layer.adapter() {
        Adapter::SboraFa { basis, .. } => {
            let mut gb = Matrix::zeros(d, r)?;
            for n in 0..x.batch() {
                let (xr, up) = (x.row(n), upstream.row(n));
                for (i, &u) in up.iter().enumerate() {
                    let row = gb.row_mut(i);
                    for (p, &idx) in basis.indices().iter().enumerate() {
                        row[p] = row[p] + u * xr[idx];
                    }
                }
            }
            vec![scaled(gb, s)]
        }
        Adapter::SboraFb { basis, .. } => {
            let mut ga = Matrix::zeros(r, k)?;
            for n in 0..x.batch() {
                let (xr, up) = (x.row(n), upstream.row(n));
                for (p, &idx) in basis.indices().iter().enumerate() {
                    let u = up[idx];
                    for (g, &xv) in ga.row_mut(p).iter_mut().zip(xr) {
                        *g = *g + u * xv;
                    }
                }
            }
            vec![scaled(ga, s)]
        }
        Adapter::Lora { a, b } => {
            let mut ga = Matrix::zeros(r, k)?;
            let mut gb = Matrix::zeros(d, r)?;
            let mut z = vec![T::zero(); r];
            let mut back = vec![T::zero(); r];
            for n in 0..x.batch() {
                let (xr, up) = (x.row(n), upstream.row(n));
                for (p, zp) in z.iter_mut().enumerate() {
                    *zp = a.row(p).iter().zip(xr).fold(T::zero(), |acc, (&av, &xv)| acc + av * xv);
                }
                back.iter_mut().for_each(|v| *v = T::zero());
                for (i, &u) in up.iter().enumerate() {
                    let brow = b.row(i);
                    let grow = gb.row_mut(i);
                    for p in 0..r {
                        grow[p] = grow[p] + u * z[p];
                        back[p] = back[p] + brow[p] * u;
                    }
                }
                for (p, &bp) in back.iter().enumerate() {
                    for (g, &xv) in ga.row_mut(p).iter_mut().zip(xr) {
                        *g = *g + bp * xv;
                    }
                }
            }
            vec![scaled(ga, s), scaled(gb, s)]
        }
    };
    Ok(GradientBundle {
        kind: layer.kind(),
        grads,
    })
}

fn scaled<T: Scalar>(mut m: Matrix<T>, s: T) -> Matrix<T> {
    if s != T::one() {
        m.data_mut().iter_mut().for_each(|v| *v = *v * s);
    }
    m
}

/// A scalar loss over the layer output with a known derivative.
pub trait OutputLoss {
    fn value(&self, h: &Activation<f64>) -> f64;
    fn grad(&self, h: &Activation<f64>) -> Activation<f64>;
}

/// `L = Σ h`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SumLoss;

impl OutputLoss for SumLoss {
    fn value(&self, h: &Activation<f64>) -> f64 {
        h.data().iter().sum()
    }

    fn grad(&self, h: &Activation<f64>) -> Activation<f64> {
        Activation::from_vec(h.batch(), h.features(), vec![1.0; h.data().len()]).expect("same shape")
    }
}

/// `L = mean((h - target)^2)` over every entry.
#[derive(Debug, Clone)]
pub struct MseLoss {
    pub target: Activation<f64>,
}

impl OutputLoss for MseLoss {
    fn value(&self, h: &Activation<f64>) -> f64 {
        let n = h.data().len().max(1) as f64;
        h.data()
            .iter()
            .zip(self.target.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n
    }

    fn grad(&self, h: &Activation<f64>) -> Activation<f64> {
        let n = h.data().len().max(1) as f64;
        let data = h
            .data()
            .iter()
            .zip(self.target.data())
            .map(|(a, b)| 2.0 * (a - b) / n)
            .collect();
        Activation::from_vec(h.batch(), h.features(), data).expect("same shape")
    }
}

/// Largest disagreement found by [`finite_diff_check`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WorstEntry {
    /// Index into the trainable list.
    pub param: usize,
    pub row: usize,
    pub col: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst: Option<WorstEntry>,
    pub tolerance: f64,
    pub pass: bool,
    pub entries_checked: usize,
}

/// `|a - n| / max(|a|, |n|, 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

pub const DEFAULT_EPS: f64 = 1e-5;

/// Compares [`backward`] against central differences
/// `(L(θ + eps) - L(θ - eps)) / 2eps` for every trainable entry.
///
/// Works on a private copy of the layer; only trainable entries are
/// perturbed.
pub fn finite_diff_check(
    layer: &AdapterLayer<f64>,
    x: &Activation<f64>,
    loss: &dyn OutputLoss,
    eps: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(SboraError::Config(format!("eps must be positive, got {eps}")));
    }
    if tol.is_nan() || tol < 0.0 {
        return Err(SboraError::Config(format!("tolerance must be nonnegative, got {tol}")));
    }
    let eval = |l: &AdapterLayer<f64>| -> Result<f64> {
        let v = loss.value(&l.forward(x)?);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(SboraError::Numeric(format!("loss evaluated to {v}")))
        }
    };
    let h = layer.forward(x)?;
    eval(layer)?;
    let analytic = backward(layer, x, &loss.grad(&h))?;

    let mut probe = layer.clone();
    let mut max_rel_err = 0.0;
    let mut worst = None;
    let mut entries_checked = 0;
    for (param, g) in analytic.grads.iter().enumerate() {
        for idx in 0..g.data().len() {
            let orig = probe.trainable()[param].data()[idx];
            probe.trainable_mut()[param].data_mut()[idx] = orig + eps;
            let plus = eval(&probe)?;
            probe.trainable_mut()[param].data_mut()[idx] = orig - eps;
            let minus = eval(&probe)?;
            probe.trainable_mut()[param].data_mut()[idx] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = g.data()[idx];
            let err = relative_error(a, numeric);
            entries_checked += 1;
            if worst.is_none() || err > max_rel_err {
                max_rel_err = err;
                worst = Some(WorstEntry {
                    param,
                    row: idx / g.cols(),
                    col: idx % g.cols(),
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    Ok(GradCheckReport {
        max_rel_err,
        worst,
        tolerance: tol,
        pass: max_rel_err <= tol,
        entries_checked,
    })
}
