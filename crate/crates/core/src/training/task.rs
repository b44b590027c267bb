use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::accounting::NoCount;
use crate::adapters::{AdapterLayer, BasisIndexSet};
use crate::error::{dim_err, Result, SboraError};
use crate::matrix::{linear, Activation, Matrix, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    /// Teacher differs from `W0` on `r` columns.
    TeacherStudentColumns,
    /// Teacher differs from `W0` on `r` rows.
    TeacherStudentRows,
    /// Teacher differs from `W0` everywhere.
    DenseTeacher,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::TeacherStudentColumns => "columns",
            TaskKind::TeacherStudentRows => "rows",
            TaskKind::DenseTeacher => "dense",
        })
    }
}

impl FromStr for TaskKind {
    type Err = SboraError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "columns" | "teacher-student-columns" => Ok(TaskKind::TeacherStudentColumns),
            "rows" | "teacher-student-rows" => Ok(TaskKind::TeacherStudentRows),
            "dense" | "dense-teacher" => Ok(TaskKind::DenseTeacher),
            other => Err(SboraError::Config(format!("unknown task '{other}'"))),
        }
    }
}

/// Regression toward a teacher `W*` from i.i.d. standard normal inputs,
/// with targets `y = W*·x + noise·ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask<T> {
    pub kind: TaskKind,
    pub w0: Matrix<T>,
    pub teacher: Matrix<T>,
    /// Columns (or rows) where `W* - W0` is nonzero; `None` for dense tasks.
    pub support: Option<BasisIndexSet>,
    pub input_seed: u64,
    pub noise: f64,
}

impl<T: Scalar> SyntheticTask<T> {
    pub fn new(kind: TaskKind, w0: Matrix<T>, teacher: Matrix<T>, noise: f64, input_seed: u64) -> Result<Self> {
        if w0.shape() != teacher.shape() {
            return Err(dim_err("teacher and base weight shapes differ"));
        }
        if !(noise >= 0.0 && noise.is_finite()) {
            return Err(SboraError::Config(format!("noise must be finite and nonnegative, got {noise}")));
        }
        Ok(Self {
            kind,
            w0,
            teacher,
            support: None,
            input_seed,
            noise,
        })
    }

    pub fn d(&self) -> usize {
        self.w0.rows()
    }

    pub fn k(&self) -> usize {
        self.w0.cols()
    }

    /// `W* - W0`.
    pub fn teacher_delta(&self) -> Matrix<T> {
        let data = self
            .teacher
            .data()
            .iter()
            .zip(self.w0.data())
            .map(|(&t, &w)| t - w)
            .collect();
        Matrix::from_vec(self.d(), self.k(), data).expect("same shape")
    }

    /// Draws `n` inputs and their noisy targets.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<(Activation<T>, Activation<T>)> {
        let x = Activation::random_normal(n, self.k(), rng)?;
        let mut y = linear(&self.teacher, &x, &mut NoCount)?;
        if self.noise > 0.0 {
            for v in y.data_mut() {
                let e: f64 = rng.sample(StandardNormal);
                *v = *v + T::of(self.noise * e);
            }
        }
        Ok((x, y))
    }
}

/// Builds a reproducible task. `W0` and the teacher delta have entries
/// `N(0, 1/k)`; the delta is restricted to `r` random columns or rows for
/// the teacher-student kinds.
pub fn make_task<T: Scalar>(
    kind: TaskKind,
    d: usize,
    k: usize,
    r: usize,
    seed: u64,
    noise: f64,
) -> Result<SyntheticTask<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = 1.0 / (k as f64).sqrt();
    let w0 = Matrix::<T>::random_normal(d, k, std, &mut rng)?;
    let support_seed: u64 = rng.random();
    let support = match kind {
        TaskKind::TeacherStudentColumns => Some(BasisIndexSet::sample(k, r, support_seed)?),
        TaskKind::TeacherStudentRows => Some(BasisIndexSet::sample(d, r, support_seed)?),
        TaskKind::DenseTeacher => None,
    };
    let mut teacher = w0.clone();
    for i in 0..d {
        for j in 0..k {
            let inside = match (&support, kind) {
                (Some(s), TaskKind::TeacherStudentColumns) => s.contains(j),
                (Some(s), TaskKind::TeacherStudentRows) => s.contains(i),
                _ => true,
            };
            if inside {
                let z: f64 = rng.sample(StandardNormal);
                teacher.set(i, j, teacher.get(i, j) + T::of(z * std));
            }
        }
    }
    let input_seed = rng.random();
    let mut task = SyntheticTask::new(kind, w0, teacher, noise, input_seed)?;
    task.support = support;
    Ok(task)
}

/// Exact expected MSE under standard normal inputs:
/// `‖W' - W*‖²_F / d + noise²`.
pub fn population_mse<T: Scalar>(layer: &AdapterLayer<T>, task: &SyntheticTask<T>) -> f64 {
    let merged = layer.merge();
    let sq: f64 = merged
        .data()
        .iter()
        .zip(task.teacher.data())
        .map(|(&a, &b)| {
            let e = a.as_f64() - b.as_f64();
            e * e
        })
        .sum();
    sq / task.d() as f64 + task.noise * task.noise
}

/// Mean squared error over `batch × d` entries.
pub fn mse<T: Scalar>(h: &Activation<T>, y: &Activation<T>) -> f64 {
    let n = h.data().len();
    if n == 0 {
        return 0.0;
    }
    h.data()
        .iter()
        .zip(y.data())
        .map(|(&a, &b)| {
            let e = a.as_f64() - b.as_f64();
            e * e
        })
        .sum::<f64>()
        / n as f64
}

/// Monte-Carlo MSE on `n` fresh samples drawn from `seed`.
pub fn eval<T: Scalar>(layer: &AdapterLayer<T>, task: &SyntheticTask<T>, n: usize, seed: u64) -> Result<f64> {
    if (layer.d(), layer.k()) != (task.d(), task.k()) {
        return Err(dim_err("layer and task shapes differ"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (x, y) = task.sample(n, &mut rng)?;
    Ok(mse(&layer.forward(&x)?, &y))
}
