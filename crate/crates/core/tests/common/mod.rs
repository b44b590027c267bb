//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use sbora::training::SyntheticTask;
use sbora::{Activation, BasisIndexSet, Matrix, Side};

/// Left-to-right dot product, seeded with the first product.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = a[0] * b[0];
    for j in 1..a.len() {
        acc += a[j] * b[j];
    }
    acc
}

pub fn matvec(w: &Matrix<f64>, x: &[f64]) -> Vec<f64> {
    (0..w.rows()).map(|i| dot(w.row(i), x)).collect()
}

/// FA forward with the projection-down materialized as one-hot rows.
pub fn dense_fa_forward(w0: &Matrix<f64>, basis: &BasisIndexSet, b: &Matrix<f64>, x: &Activation<f64>) -> Vec<f64> {
    let a: Matrix<f64> = basis.materialize(Side::Row);
    let mut out = Vec::new();
    for row in 0..x.batch() {
        let base = matvec(w0, x.row(row));
        let z = matvec(&a, x.row(row));
        let up = matvec(b, &z);
        out.extend(base.iter().zip(&up).map(|(h, u)| h + u));
    }
    out
}

/// FB forward with the projection-up materialized as one-hot columns.
pub fn dense_fb_forward(w0: &Matrix<f64>, basis: &BasisIndexSet, a: &Matrix<f64>, x: &Activation<f64>) -> Vec<f64> {
    let p: Matrix<f64> = basis.materialize(Side::Column);
    let mut out = Vec::new();
    for row in 0..x.batch() {
        let base = matvec(w0, x.row(row));
        let z = matvec(a, x.row(row));
        let up = matvec(&p, &z);
        out.extend(base.iter().zip(&up).map(|(h, u)| h + u));
    }
    out
}

pub fn to_na(m: &Matrix<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.data())
}

/// `ΔW* = W* - W0` of a task.
pub fn teacher_delta(task: &SyntheticTask<f64>) -> DMatrix<f64> {
    to_na(&task.teacher) - to_na(&task.w0)
}

/// Least-squares residual `min_B ‖B·S - Δ‖²_F / d` for a fixed `r × k`
/// projection-down `S`.
pub fn residual_right(delta: &DMatrix<f64>, s: &DMatrix<f64>) -> f64 {
    let gram = s * s.transpose();
    let inv = gram.try_inverse().expect("projection has full row rank");
    let b = delta * s.transpose() * inv;
    (b * s - delta).norm_squared() / delta.nrows() as f64
}

/// Least-squares residual `min_A ‖P·A - Δ‖²_F / d` for a fixed `d × r`
/// projection-up `P`.
pub fn residual_left(delta: &DMatrix<f64>, p: &DMatrix<f64>) -> f64 {
    let gram = p.transpose() * p;
    let inv = gram.try_inverse().expect("projection has full column rank");
    let a = inv * p.transpose() * delta;
    (p * a - delta).norm_squared() / delta.nrows() as f64
}

/// Best population MSE reachable by an FA adapter with this basis.
pub fn fa_floor(task: &SyntheticTask<f64>, basis: &BasisIndexSet) -> f64 {
    let s = to_na(&basis.materialize::<f64>(Side::Row));
    residual_right(&teacher_delta(task), &s) + task.noise * task.noise
}

/// Best population MSE reachable by an FB adapter with this basis.
pub fn fb_floor(task: &SyntheticTask<f64>, basis: &BasisIndexSet) -> f64 {
    let p = to_na(&basis.materialize::<f64>(Side::Column));
    residual_left(&teacher_delta(task), &p) + task.noise * task.noise
}

/// Standard normal CDF by composite Simpson integration of the density.
pub fn normal_cdf(x: f64) -> f64 {
    let n = 20_000;
    let h = x / n as f64;
    let pdf = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut s = pdf(0.0) + pdf(x);
    for i in 1..n {
        s += pdf(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    0.5 + s * h / 3.0
}

/// Inverse of [`normal_cdf`] by bisection.
pub fn normal_quantile(p: f64) -> f64 {
    let (mut lo, mut hi) = (-10.0f64, 10.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if normal_cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// NF4 levels rebuilt from [`normal_quantile`].
pub fn nf4_levels_oracle() -> Vec<f64> {
    let offset = 0.9677083;
    let lin = |n: usize| -> Vec<f64> { (0..n).map(|i| offset + (0.5 - offset) * i as f64 / (n - 1) as f64).collect() };
    let mut v: Vec<f64> = lin(9)[..8].iter().map(|&p| normal_quantile(p)).collect();
    v.extend(lin(8)[..7].iter().map(|&p| -normal_quantile(p)));
    v.push(0.0);
    v.sort_by(f64::total_cmp);
    let max = v[15];
    v.iter().map(|x| x / max).collect()
}

/// Index of the closest level by exhaustive search; the lower index wins ties.
pub fn nearest_level(levels: &[f64], v: f64) -> usize {
    let mut best = 0;
    for (i, &c) in levels.iter().enumerate() {
        if (v - c).abs() < (v - levels[best]).abs() {
            best = i;
        }
    }
    best
}
