use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::basis::BasisIndexSet;
use super::AdapterKind;
use crate::accounting::{Counter, NoCount};
use crate::error::{dim_err, Result, SboraError};
use crate::matrix::{dot, linear, Activation, Matrix, Scalar};

/// Trainable low-rank update, detached from the base weight.
///
/// For LoRA both factors train. For SBoRA-FA the projection-down is the
/// frozen one-hot basis and only `b` (`d × r`) trains; for SBoRA-FB the
/// projection-up is the frozen basis and only `a` (`r × k`) trains.
#[derive(Debug, Clone, PartialEq)]
pub enum Adapter<T> {
    Lora { a: Matrix<T>, b: Matrix<T> },
    SboraFa { basis: BasisIndexSet, b: Matrix<T> },
    SboraFb { basis: BasisIndexSet, a: Matrix<T> },
}

impl<T: Scalar> Adapter<T> {
    pub fn new_lora(a: Matrix<T>, b: Matrix<T>) -> Result<Self> {
        if a.rows() != b.cols() {
            return Err(dim_err(format!(
                "LoRA factors disagree on rank: A is {}x{}, B is {}x{}",
                a.rows(),
                a.cols(),
                b.rows(),
                b.cols()
            )));
        }
        Ok(Adapter::Lora { a, b })
    }

    pub fn new_fa(basis: BasisIndexSet, b: Matrix<T>) -> Result<Self> {
        if b.cols() != basis.rank() {
            return Err(dim_err(format!(
                "B has {} columns but the basis has rank {}",
                b.cols(),
                basis.rank()
            )));
        }
        Ok(Adapter::SboraFa { basis, b })
    }

    pub fn new_fb(basis: BasisIndexSet, a: Matrix<T>) -> Result<Self> {
        if a.rows() != basis.rank() {
            return Err(dim_err(format!(
                "A has {} rows but the basis has rank {}",
                a.rows(),
                basis.rank()
            )));
        }
        Ok(Adapter::SboraFb { basis, a })
    }

    pub fn kind(&self) -> AdapterKind {
        match self {
            Adapter::Lora { .. } => AdapterKind::Lora,
            Adapter::SboraFa { .. } => AdapterKind::SboraFa,
            Adapter::SboraFb { .. } => AdapterKind::SboraFb,
        }
    }

    pub fn rank(&self) -> usize {
        match self {
            Adapter::Lora { a, .. } => a.rows(),
            Adapter::SboraFa { basis, .. } | Adapter::SboraFb { basis, .. } => basis.rank(),
        }
    }

    /// Output width `d`.
    pub fn out_dim(&self) -> usize {
        match self {
            Adapter::Lora { b, .. } | Adapter::SboraFa { b, .. } => b.rows(),
            Adapter::SboraFb { basis, .. } => basis.dim(),
        }
    }

    /// Input width `k`.
    pub fn in_dim(&self) -> usize {
        match self {
            Adapter::Lora { a, .. } | Adapter::SboraFb { a, .. } => a.cols(),
            Adapter::SboraFa { basis, .. } => basis.dim(),
        }
    }

    pub fn basis(&self) -> Option<&BasisIndexSet> {
        match self {
            Adapter::Lora { .. } => None,
            Adapter::SboraFa { basis, .. } | Adapter::SboraFb { basis, .. } => Some(basis),
        }
    }

    /// Trainable matrices in a fixed order (`[A, B]` for LoRA).
    pub fn trainable(&self) -> Vec<&Matrix<T>> {
        match self {
            Adapter::Lora { a, b } => vec![a, b],
            Adapter::SboraFa { b, .. } => vec![b],
            Adapter::SboraFb { a, .. } => vec![a],
        }
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Matrix<T>> {
        match self {
            Adapter::Lora { a, b } => vec![a, b],
            Adapter::SboraFa { b, .. } => vec![b],
            Adapter::SboraFb { a, .. } => vec![a],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.trainable().iter().all(|m| m.is_zero())
    }

    /// `h += scale · ΔW · x` row by row, without forming `ΔW`.
    pub fn apply_delta<C: Counter>(
        &self,
        x: &Activation<T>,
        h: &mut Activation<T>,
        scale: T,
        counter: &mut C,
    ) -> Result<()> {
        if x.features() != self.in_dim() || h.features() != self.out_dim() || x.batch() != h.batch() {
            return Err(dim_err(format!(
                "adapter maps {} -> {} features, got input {}x{} and output {}x{}",
                self.in_dim(),
                self.out_dim(),
                x.batch(),
                x.features(),
                h.batch(),
                h.features()
            )));
        }
        let scaled = scale != T::one();
        let r = self.rank();
        let mut buf = vec![T::zero(); r];
        for row in 0..x.batch() {
            let xr = x.row(row);
            let hr = h.row_mut(row);
            match self {
                Adapter::Lora { a, b } => {
                    for (p, z) in buf.iter_mut().enumerate() {
                        *z = dot(a.row(p), xr, counter);
                    }
                    accumulate_up(b, &buf, hr, scale, scaled, counter);
                }
                Adapter::SboraFa { basis, b } => {
                    // Projection-down is a gather: no arithmetic.
                    for (z, &idx) in buf.iter_mut().zip(basis.indices()) {
                        *z = xr[idx];
                    }
                    accumulate_up(b, &buf, hr, scale, scaled, counter);
                }
                Adapter::SboraFb { basis, a } => {
                    // Projection-up is an index-add of the r projected values.
                    for (p, &idx) in basis.indices().iter().enumerate() {
                        let mut z = dot(a.row(p), xr, counter);
                        if scaled {
                            z = z * scale;
                            counter.mul(1);
                        }
                        hr[idx] = hr[idx] + z;
                        counter.add(1);
                    }
                }
            }
        }
        Ok(())
    }

    /// Dense `d × k` update. SBoRA kinds copy the trainable matrix into the
    /// basis columns (FA) or rows (FB); every other entry is exactly zero.
    pub fn delta_weight(&self) -> Matrix<T> {
        let (d, k) = (self.out_dim(), self.in_dim());
        match self {
            Adapter::Lora { a, b } => b.matmul(a).expect("factor shapes validated"),
            Adapter::SboraFa { basis, b } => {
                let mut dw = Matrix::zeros(d, k).expect("positive dims");
                for (p, &col) in basis.indices().iter().enumerate() {
                    for i in 0..d {
                        dw.set(i, col, b.get(i, p));
                    }
                }
                dw
            }
            Adapter::SboraFb { basis, a } => {
                let mut dw = Matrix::zeros(d, k).expect("positive dims");
                for (p, &row) in basis.indices().iter().enumerate() {
                    dw.row_mut(row).copy_from_slice(a.row(p));
                }
                dw
            }
        }
    }

    /// `w += scale · ΔW`, touching only the entries `ΔW` can reach.
    pub fn merge_into(&self, w: &mut Matrix<T>, scale: T) -> Result<()> {
        if w.shape() != (self.out_dim(), self.in_dim()) {
            return Err(dim_err(format!(
                "cannot merge a {}x{} update into a {}x{} weight",
                self.out_dim(),
                self.in_dim(),
                w.rows(),
                w.cols()
            )));
        }
        let scaled = scale != T::one();
        let sc = |v: T| if scaled { v * scale } else { v };
        match self {
            Adapter::Lora { .. } => {
                let dw = self.delta_weight();
                for (wv, &dv) in w.data_mut().iter_mut().zip(dw.data()) {
                    *wv = *wv + sc(dv);
                }
            }
            Adapter::SboraFa { basis, b } => {
                for (p, &col) in basis.indices().iter().enumerate() {
                    for i in 0..w.rows() {
                        w.set(i, col, w.get(i, col) + sc(b.get(i, p)));
                    }
                }
            }
            Adapter::SboraFb { basis, a } => {
                for (p, &row) in basis.indices().iter().enumerate() {
                    for (wv, &av) in w.row_mut(row).iter_mut().zip(a.row(p)) {
                        *wv = *wv + sc(av);
                    }
                }
            }
        }
        Ok(())
    }
}

fn accumulate_up<T: Scalar, C: Counter>(b: &Matrix<T>, z: &[T], hr: &mut [T], scale: T, scaled: bool, counter: &mut C) {
    for (i, h) in hr.iter_mut().enumerate() {
        let mut u = dot(b.row(i), z, counter);
        if scaled {
            u = u * scale;
            counter.mul(1);
        }
        *h = *h + u;
        counter.add(1);
    }
}

/// A frozen base weight `W0 ∈ R^{d×k}` with one adapter attached.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterLayer<T> {
    w0: Matrix<T>,
    adapter: Adapter<T>,
    scale: T,
}

impl<T: Scalar> AdapterLayer<T> {
    pub fn new(w0: Matrix<T>, adapter: Adapter<T>, scale: T) -> Result<Self> {
        if w0.shape() != (adapter.out_dim(), adapter.in_dim()) {
            return Err(dim_err(format!(
                "{:?} adapter is {}x{} but W0 is {}x{}",
                adapter.kind(),
                adapter.out_dim(),
                adapter.in_dim(),
                w0.rows(),
                w0.cols()
            )));
        }
        if !scale.is_finite() {
            return Err(SboraError::Numeric("adapter scale must be finite".into()));
        }
        Ok(Self { w0, adapter, scale })
    }

    /// LoRA with `A ~ U[-1/√k, 1/√k]` and `B = 0`.
    pub fn lora(w0: Matrix<T>, r: usize, seed: u64) -> Result<Self> {
        let (d, k) = w0.shape();
        if r == 0 {
            return Err(SboraError::InvalidRank { rank: r, dim: d.min(k) });
        }
        let bound = 1.0 / (k as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Matrix::from_fn(r, k, |_, _| T::of(rng.random_range(-bound..=bound)))?;
        let b = Matrix::zeros(d, r)?;
        Self::new(w0, Adapter::new_lora(a, b)?, T::one())
    }

    /// SBoRA-FA with zero `B`; the basis indexes input features.
    pub fn sbora_fa(w0: Matrix<T>, basis: BasisIndexSet) -> Result<Self> {
        if basis.dim() != w0.cols() {
            return Err(dim_err(format!(
                "FA basis has dimension {} but W0 has {} input features",
                basis.dim(),
                w0.cols()
            )));
        }
        let b = Matrix::zeros(w0.rows(), basis.rank())?;
        Self::new(w0, Adapter::new_fa(basis, b)?, T::one())
    }

    /// SBoRA-FB with zero `A`; the basis indexes output features.
    pub fn sbora_fb(w0: Matrix<T>, basis: BasisIndexSet) -> Result<Self> {
        if basis.dim() != w0.rows() {
            return Err(dim_err(format!(
                "FB basis has dimension {} but W0 has {} output features",
                basis.dim(),
                w0.rows()
            )));
        }
        let a = Matrix::zeros(basis.rank(), w0.cols())?;
        Self::new(w0, Adapter::new_fb(basis, a)?, T::one())
    }

    /// Sets the conventional `alpha / r` scale. LoRA only.
    pub fn with_alpha(mut self, alpha: f64) -> Result<Self> {
        if self.kind() != AdapterKind::Lora {
            return Err(SboraError::KindMismatch {
                expected: AdapterKind::Lora.name(),
                actual: self.kind().name(),
            });
        }
        self.scale = T::of(alpha / self.rank() as f64);
        Ok(self)
    }

    pub fn kind(&self) -> AdapterKind {
        self.adapter.kind()
    }

    pub fn d(&self) -> usize {
        self.w0.rows()
    }

    pub fn k(&self) -> usize {
        self.w0.cols()
    }

    pub fn rank(&self) -> usize {
        self.adapter.rank()
    }

    pub fn scale(&self) -> T {
        self.scale
    }

    pub fn w0(&self) -> &Matrix<T> {
        &self.w0
    }

    pub fn adapter(&self) -> &Adapter<T> {
        &self.adapter
    }

    pub fn basis(&self) -> Option<&BasisIndexSet> {
        self.adapter.basis()
    }

    pub fn trainable(&self) -> Vec<&Matrix<T>> {
        self.adapter.trainable()
    }

    /// Mutable access to the trainable matrices only; `W0` and the basis
    /// stay frozen.
    pub fn trainable_mut(&mut self) -> Vec<&mut Matrix<T>> {
        self.adapter.trainable_mut()
    }

    pub fn into_adapter(self) -> Adapter<T> {
        self.adapter
    }

    pub fn forward(&self, x: &Activation<T>) -> Result<Activation<T>> {
        self.forward_counted(x, &mut NoCount)
    }

    pub fn forward_counted<C: Counter>(&self, x: &Activation<T>, counter: &mut C) -> Result<Activation<T>> {
        let mut h = linear(&self.w0, x, counter)?;
        self.adapter.apply_delta(x, &mut h, self.scale, counter)?;
        Ok(h)
    }

    pub fn delta_weight(&self) -> Matrix<T> {
        self.adapter.delta_weight()
    }

    /// `W' = W0 + scale · ΔW`. Entries outside the updated region are copied
    /// from `W0` untouched.
    pub fn merge(&self) -> Matrix<T> {
        let mut w = self.w0.clone();
        self.adapter
            .merge_into(&mut w, self.scale)
            .expect("layer shapes validated at construction");
        w
    }
}

fn expect_kind<T: Scalar>(layer: &AdapterLayer<T>, kind: AdapterKind) -> Result<()> {
    if layer.kind() != kind {
        return Err(SboraError::KindMismatch {
            expected: kind.name(),
            actual: layer.kind().name(),
        });
    }
    Ok(())
}

/// `h = W0·x + scale·B·(A·x)`.
pub fn lora_forward<T: Scalar>(layer: &AdapterLayer<T>, x: &Activation<T>) -> Result<Activation<T>> {
    expect_kind(layer, AdapterKind::Lora)?;
    layer.forward(x)
}

/// `h = W0·x + scale·B·x[:, basis]`.
pub fn sbora_fa_forward<T: Scalar>(layer: &AdapterLayer<T>, x: &Activation<T>) -> Result<Activation<T>> {
    expect_kind(layer, AdapterKind::SboraFa)?;
    layer.forward(x)
}

/// `h = (W0·x).index_add(basis, scale·A·x)`.
pub fn sbora_fb_forward<T: Scalar>(layer: &AdapterLayer<T>, x: &Activation<T>) -> Result<Activation<T>> {
    expect_kind(layer, AdapterKind::SboraFb)?;
    layer.forward(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::Side;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn fresh_layers_reproduce_base() {
        let mut g = rng(1);
        let w0 = Matrix::<f64>::random_normal(5, 7, 1.0, &mut g).unwrap();
        let x = Activation::random_normal(3, 7, &mut g).unwrap();
        let base = linear(&w0, &x, &mut NoCount).unwrap();
        let layers = [
            AdapterLayer::lora(w0.clone(), 2, 3).unwrap(),
            AdapterLayer::sbora_fa(w0.clone(), BasisIndexSet::sample(7, 2, 3).unwrap()).unwrap(),
            AdapterLayer::sbora_fb(w0.clone(), BasisIndexSet::sample(5, 2, 3).unwrap()).unwrap(),
        ];
        for l in &layers {
            assert_eq!(l.forward(&x).unwrap(), base);
            assert!(l.delta_weight().is_zero());
            assert_eq!(&l.merge(), l.w0());
        }
    }

    #[test]
    fn lora_init_bounds() {
        let w0 = Matrix::<f64>::zeros(3, 16).unwrap();
        let l = AdapterLayer::lora(w0, 4, 9).unwrap();
        let Adapter::Lora { a, b } = l.adapter() else { unreachable!() };
        assert!(b.is_zero());
        assert!(a.data().iter().all(|v| v.abs() <= 0.25));
        assert!(!a.is_zero());
    }

    #[test]
    fn fa_gathers_selected_components() {
        let w0 = Matrix::<f64>::zeros(2, 4).unwrap();
        let basis = BasisIndexSet::new(4, vec![0, 3]).unwrap();
        let b = Matrix::from_rows(&[&[1.0, 10.0], &[100.0, 1000.0]]).unwrap();
        let layer = AdapterLayer::new(w0, Adapter::new_fa(basis, b).unwrap(), 1.0).unwrap();
        let x = Activation::from_vector(vec![2.0, 3.0, 5.0, 7.0]).unwrap();
        let h = sbora_fa_forward(&layer, &x).unwrap();
        assert_eq!(h.data(), &[2.0 + 70.0, 200.0 + 7000.0]);
    }

    #[test]
    fn fb_touches_only_basis_outputs() {
        let mut g = rng(4);
        let w0 = Matrix::<f64>::random_normal(4, 3, 1.0, &mut g).unwrap();
        let basis = BasisIndexSet::new(4, vec![0, 3]).unwrap();
        let a = Matrix::random_normal(2, 3, 1.0, &mut g).unwrap();
        let layer = AdapterLayer::new(w0.clone(), Adapter::new_fb(basis, a).unwrap(), 1.0).unwrap();
        let x = Activation::random_normal(1, 3, &mut g).unwrap();
        let h = sbora_fb_forward(&layer, &x).unwrap();
        let base = linear(&w0, &x, &mut NoCount).unwrap();
        for i in 0..4 {
            let same = h.data()[i] == base.data()[i];
            assert_eq!(same, i == 1 || i == 2, "output {i}");
        }
    }

    #[test]
    fn lora_with_one_hot_a_matches_fa() {
        let mut g = rng(5);
        let w0 = Matrix::<f64>::random_normal(4, 4, 1.0, &mut g).unwrap();
        let basis = BasisIndexSet::new(4, vec![0, 3]).unwrap();
        let b = Matrix::random_normal(4, 2, 1.0, &mut g).unwrap();
        let lora = AdapterLayer::new(
            w0.clone(),
            Adapter::new_lora(basis.materialize(Side::Row), b.clone()).unwrap(),
            1.0,
        )
        .unwrap();
        let fa = AdapterLayer::new(w0, Adapter::new_fa(basis, b).unwrap(), 1.0).unwrap();
        let x = Activation::random_normal(6, 4, &mut g).unwrap();
        assert_eq!(lora_forward(&lora, &x).unwrap(), sbora_fa_forward(&fa, &x).unwrap());
    }

    #[test]
    fn lora_forward_matches_materialized_update_f32() {
        let mut g = rng(6);
        let w0 = Matrix::<f32>::random_normal(4, 4, 1.0, &mut g).unwrap();
        let a = Matrix::random_normal(2, 4, 1.0, &mut g).unwrap();
        let b = Matrix::random_normal(4, 2, 1.0, &mut g).unwrap();
        let dense = Matrix::from_fn(4, 4, |i, j| {
            w0.get(i, j) + (0..2).map(|p| b.get(i, p) * a.get(p, j)).sum::<f32>()
        })
        .unwrap();
        let layer = AdapterLayer::new(w0, Adapter::new_lora(a, b).unwrap(), 1.0).unwrap();
        let x = Activation::random_normal(5, 4, &mut g).unwrap();
        let expected = linear(&dense, &x, &mut NoCount).unwrap();
        assert!(lora_forward(&layer, &x).unwrap().max_abs_diff(&expected) <= 1e-5);
    }

    #[test]
    fn kind_and_shape_errors() {
        let w0 = Matrix::<f64>::zeros(4, 6).unwrap();
        let fa = AdapterLayer::sbora_fa(w0.clone(), BasisIndexSet::sample(6, 2, 0).unwrap()).unwrap();
        let x = Activation::zeros(1, 6).unwrap();
        assert!(matches!(lora_forward(&fa, &x), Err(SboraError::KindMismatch { .. })));
        assert!(matches!(sbora_fb_forward(&fa, &x), Err(SboraError::KindMismatch { .. })));
        assert!(matches!(
            fa.forward(&Activation::zeros(1, 4).unwrap()),
            Err(SboraError::Dimension(_))
        ));
        assert!(AdapterLayer::sbora_fa(w0.clone(), BasisIndexSet::sample(4, 2, 0).unwrap()).is_err());
        assert!(AdapterLayer::sbora_fb(w0.clone(), BasisIndexSet::sample(6, 2, 0).unwrap()).is_err());
        assert!(fa.clone().with_alpha(16.0).is_err());
        let lora = AdapterLayer::lora(w0, 2, 0).unwrap().with_alpha(16.0).unwrap();
        assert_eq!(lora.scale(), 8.0);
    }

    #[test]
    fn empty_batch() {
        let w0 = Matrix::<f64>::zeros(4, 6).unwrap();
        let fb = AdapterLayer::sbora_fb(w0, BasisIndexSet::sample(4, 2, 0).unwrap()).unwrap();
        let h = fb.forward(&Activation::zeros(0, 6).unwrap()).unwrap();
        assert_eq!((h.batch(), h.features()), (0, 4));
    }
}
