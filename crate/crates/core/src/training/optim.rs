use serde::{Deserialize, Serialize};

use crate::matrix::{Matrix, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Learning-rate multiplier over the run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Decays linearly from `lr` at step 0 to `lr / steps` at the last step.
    Linear,
}

impl LrSchedule {
    pub fn factor(self, step: usize, steps: usize) -> f64 {
        match self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Linear => (steps - step) as f64 / steps as f64,
        }
    }
}

/// Per-parameter optimizer state. Moments are kept in `f64`.
#[derive(Debug, Clone)]
pub(crate) struct Optimizer {
    kind: OptimizerKind,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Optimizer {
    pub(crate) fn new<T: Scalar>(kind: OptimizerKind, params: &[&Matrix<T>]) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.data().len()]).collect();
        Self {
            kind,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub(crate) fn step<T: Scalar>(&mut self, params: Vec<&mut Matrix<T>>, grads: &[Matrix<T>], lr: f64) {
        self.t += 1;
        for (pi, (p, g)) in params.into_iter().zip(grads).enumerate() {
            match self.kind {
                OptimizerKind::Sgd => {
                    for (w, &gv) in p.data_mut().iter_mut().zip(g.data()) {
                        *w = T::of(w.as_f64() - lr * gv.as_f64());
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let bc1 = 1.0 - beta1.powi(self.t);
                    let bc2 = 1.0 - beta2.powi(self.t);
                    let (m, v) = (&mut self.m[pi], &mut self.v[pi]);
                    for (i, (w, &gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        let gv = gv.as_f64();
                        m[i] = beta1 * m[i] + (1.0 - beta1) * gv;
                        v[i] = beta2 * v[i] + (1.0 - beta2) * gv * gv;
                        let m_hat = m[i] / bc1;
                        let v_hat = v[i] / bc2;
                        *w = T::of(w.as_f64() - lr * m_hat / (v_hat.sqrt() + eps));
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_step() {
        let mut p = Matrix::from_rows(&[&[1.0f64, 2.0]]).unwrap();
        let g = Matrix::from_rows(&[&[0.5f64, -1.0]]).unwrap();
        let mut opt = Optimizer::new(OptimizerKind::Sgd, &[&p]);
        opt.step(vec![&mut p], &[g], 0.1);
        assert_eq!(p.data(), &[0.95, 2.1]);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let mut p = Matrix::from_rows(&[&[0.0f64, 0.0]]).unwrap();
        let g = Matrix::from_rows(&[&[3.0f64, -0.001]]).unwrap();
        let mut opt = Optimizer::new(OptimizerKind::default(), &[&p]);
        opt.step(vec![&mut p], &[g], 0.01);
        assert!((p.get(0, 0) + 0.01).abs() < 1e-9);
        assert!((p.get(0, 1) - 0.01).abs() < 1e-7);
    }

    #[test]
    fn linear_schedule() {
        assert_eq!(LrSchedule::Linear.factor(0, 4), 1.0);
        assert_eq!(LrSchedule::Linear.factor(3, 4), 0.25);
        assert_eq!(LrSchedule::Constant.factor(3, 4), 1.0);
    }
}
