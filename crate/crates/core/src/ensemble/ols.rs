//! Least squares through the normal equations, solved by Cholesky in f64.

use crate::error::{Error, Result};

/// Lower-triangular factor of a symmetric positive-definite `k x k` matrix,
/// or `None` when a pivot is not strictly positive.
pub(crate) fn cholesky(a: &[f64], k: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..=i {
            let dot: f64 = (0..j).map(|p| l[i * k + p] * l[j * k + p]).sum();
            if i == j {
                let d = a[i * k + i] - dot;
                if !(d > 0.0) || !d.is_finite() {
                    return None;
                }
                l[i * k + i] = d.sqrt();
            } else {
                l[i * k + j] = (a[i * k + j] - dot) / l[j * k + j];
            }
        }
    }
    Some(l)
}

/// Solves `L Lᵀ x = b`.
pub(crate) fn cholesky_solve(l: &[f64], k: usize, b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; k];
    for i in 0..k {
        let s: f64 = (0..i).map(|p| l[i * k + p] * y[p]).sum();
        y[i] = (b[i] - s) / l[i * k + i];
    }
    let mut x = vec![0.0; k];
    for i in (0..k).rev() {
        let s: f64 = (i + 1..k).map(|p| l[p * k + i] * x[p]).sum();
        x[i] = (y[i] - s) / l[i * k + i];
    }
    x
}

/// Squared ratio of the largest to smallest Cholesky diagonal entry, a cheap
/// lower bound on the condition number of the factored matrix.
pub(crate) fn condition_estimate(l: &[f64], k: usize) -> f64 {
    let diag = (0..k).map(|i| l[i * k + i]);
    let (lo, hi) = diag.fold((f64::INFINITY, 0.0f64), |(lo, hi), d| (lo.min(d), hi.max(d)));
    (hi / lo).powi(2)
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Solution {
    pub x: Vec<f64>,
    pub ridge: f64,
    pub condition: f64,
}

/// Attempts for escalating the ridge term when the first one is not enough.
const RIDGE_ATTEMPTS: usize = 12;

/// Solves `(G + λI) x = b`, starting with `λ = 0` and falling back to
/// `ridge`, then `10 ridge`, ... when `G` is singular or its condition
/// estimate exceeds `max_condition`.
pub(crate) fn solve_normal(gram: &[f64], rhs: &[f64], k: usize, ridge: f64, max_condition: f64) -> Result<Solution> {
    let attempt = |lambda: f64| {
        let mut g = gram.to_vec();
        for i in 0..k {
            g[i * k + i] += lambda;
        }
        cholesky(&g, k).map(|l| (condition_estimate(&l, k), l))
    };
    if let Some((cond, l)) = attempt(0.0) {
        if cond <= max_condition {
            return Ok(Solution {
                x: cholesky_solve(&l, k, rhs),
                ridge: 0.0,
                condition: cond,
            });
        }
    }
    if !(ridge > 0.0) {
        return Err(Error::Format(
            "normal equations are singular and the ridge fallback is disabled".into(),
        ));
    }
    let mut lambda = ridge;
    for _ in 0..RIDGE_ATTEMPTS {
        if let Some((cond, l)) = attempt(lambda) {
            if cond <= max_condition {
                return Ok(Solution {
                    x: cholesky_solve(&l, k, rhs),
                    ridge: lambda,
                    condition: cond,
                });
            }
        }
        lambda *= 10.0;
    }
    Err(Error::Format(format!(
        "normal equations stay ill-conditioned up to ridge {lambda:e}"
    )))
}
