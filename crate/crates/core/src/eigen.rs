//! Extreme eigenvalues of operators that are self-adjoint in a given inner
//! product: Lanczos with full reorthogonalization and power iteration.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct EigenOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions {
            tol: 1e-12,
            max_iter: 300,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EigenPair {
    pub value: f64,
    /// Unit vector in the inner product.
    pub vector: Vec<f64>,
    pub iterations: usize,
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += a * xi);
}

/// Largest eigenvalue of an operator self-adjoint and positive
/// semidefinite in the inner product `inner`. The Krylov space is built
/// from `start`; the iteration stops when the residual estimate of the top
/// Ritz pair drops below `tol` relative to the Ritz value, or when the
/// Krylov space becomes invariant.
pub fn lanczos_max<A, I>(mut apply: A, inner: I, start: Vec<f64>, opts: EigenOptions) -> Result<EigenPair>
where
    A: FnMut(&[f64]) -> Result<Vec<f64>>,
    I: Fn(&[f64], &[f64]) -> f64,
{
    let norm0 = inner(&start, &start).sqrt();
    if !(norm0 > 0.0) || !norm0.is_finite() {
        return Err(Error::EigenSolveFailure("zero or non-finite starting vector".into()));
    }
    let mut basis: Vec<Vec<f64>> = vec![start.iter().map(|v| v / norm0).collect()];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut best = (0.0, Vec::new());
    for k in 0..opts.max_iter {
        let mut w = apply(&basis[k])?;
        let a = inner(&w, &basis[k]);
        alpha.push(a);
        // Full reorthogonalization, twice for stability.
        for _ in 0..2 {
            for b in &basis {
                let c = inner(&w, b);
                axpy(&mut w, -c, b);
            }
        }
        let bnext = inner(&w, &w).max(0.0).sqrt();

        let m = alpha.len();
        let t = DMatrix::from_fn(m, m, |i, j| {
            if i == j {
                alpha[i]
            } else if i + 1 == j {
                beta[i]
            } else if j + 1 == i {
                beta[j]
            } else {
                0.0
            }
        });
        let eig = SymmetricEigen::new(t);
        let (imax, &theta) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        let s = eig.eigenvectors.column(imax);
        let resid = (bnext * s[m - 1]).abs();
        best = (theta, s.iter().cloned().collect::<Vec<f64>>());
        if !theta.is_finite() {
            return Err(Error::EigenSolveFailure("non-finite Ritz value".into()));
        }
        let invariant = bnext <= 1e-14 * theta.abs().max(f64::MIN_POSITIVE) || bnext == 0.0;
        if resid <= opts.tol * theta.abs() || invariant {
            return Ok(EigenPair {
                value: theta,
                vector: ritz_vector(&basis, &best.1, &inner),
                iterations: k + 1,
            });
        }
        beta.push(bnext);
        basis.push(w.iter().map(|v| v / bnext).collect());
    }
    Err(Error::EigenSolveFailure(format!(
        "Lanczos did not converge in {} iterations (Ritz value {:.6e})",
        opts.max_iter, best.0
    )))
}

fn ritz_vector<I: Fn(&[f64], &[f64]) -> f64>(basis: &[Vec<f64>], coef: &[f64], inner: &I) -> Vec<f64> {
    let mut v = vec![0.0; basis[0].len()];
    for (b, c) in basis.iter().zip(coef) {
        axpy(&mut v, *c, b);
    }
    let n = inner(&v, &v).sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// Power iteration for the dominant eigenvalue of an operator that is
/// self-adjoint positive semidefinite in `inner`. Stops when successive
/// Rayleigh quotients differ by less than `tol` relative.
pub fn power_iteration<A, I>(mut apply: A, inner: I, start: Vec<f64>, opts: EigenOptions) -> Result<EigenPair>
where
    A: FnMut(&[f64]) -> Result<Vec<f64>>,
    I: Fn(&[f64], &[f64]) -> f64,
{
    let n0 = inner(&start, &start).sqrt();
    if !(n0 > 0.0) || !n0.is_finite() {
        return Err(Error::EigenSolveFailure("zero or non-finite starting vector".into()));
    }
    let mut v: Vec<f64> = start.iter().map(|x| x / n0).collect();
    let mut prev = f64::NAN;
    for k in 0..opts.max_iter {
        let w = apply(&v)?;
        let lambda = inner(&v, &w);
        let nw = inner(&w, &w).sqrt();
        if !(nw > 0.0) || !nw.is_finite() {
            return Ok(EigenPair {
                value: lambda.max(0.0),
                vector: v,
                iterations: k + 1,
            });
        }
        v = w.iter().map(|x| x / nw).collect();
        if (lambda - prev).abs() <= opts.tol * lambda.abs() {
            return Ok(EigenPair {
                value: lambda,
                vector: v,
                iterations: k + 1,
            });
        }
        prev = lambda;
    }
    Err(Error::EigenSolveFailure(format!(
        "power iteration did not converge in {} iterations (estimate {prev:.6e})",
        opts.max_iter
    )))
}
