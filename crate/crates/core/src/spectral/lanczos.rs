use serde::{Deserialize, Serialize};

use super::SymOperator;
use crate::linalg::{axpy, dot, norm, tridiagonal_eigen, SymEigen};
use crate::{Error, Result};

/// Relative breakdown threshold: stop once `β_j ≤ tol·max|α|`.
pub const BREAKDOWN_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TridiagonalMatrix {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub actual_steps: usize,
}

impl TridiagonalMatrix {
    pub fn eigen(&self) -> Result<SymEigen> {
        tridiagonal_eigen(&self.alpha, &self.beta)
    }

    /// Gauss quadrature rule: Ritz values and squared first components of the
    /// eigenvectors of `T`.
    pub fn quadrature(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let eig = self.eigen()?;
        let weights = (0..eig.values.len()).map(|k| eig.vector(k)[0].powi(2)).collect();
        Ok((eig.values, weights))
    }
}

#[derive(Clone, Debug)]
pub struct LanczosRun {
    pub tridiagonal: TridiagonalMatrix,
    /// Orthonormal Krylov basis, one vector per performed step.
    pub basis: Vec<Vec<f64>>,
    /// `m` was larger than the operator dimension and got clamped.
    pub clamped: bool,
}

impl LanczosRun {
    /// Ritz pairs `(θ, y)` with `y = Q·s`, ascending in `θ`.
    pub fn ritz_pairs(&self) -> Result<Vec<(f64, Vec<f64>)>> {
        let eig = self.tridiagonal.eigen()?;
        let n = self.basis.first().map_or(0, Vec::len);
        Ok((0..eig.values.len())
            .map(|k| {
                let s = eig.vector(k);
                let mut y = vec![0.0; n];
                for (sj, q) in s.iter().zip(&self.basis) {
                    axpy(*sj, q, &mut y);
                }
                (eig.values[k], y)
            })
            .collect())
    }
}

/// Lanczos with full reorthogonalization.
///
/// Each new vector is re-projected against every previous basis vector twice
/// (classical Gram-Schmidt, repeated once). Iteration stops after `m` steps
/// or when `β_j ≤ 1e-10·max|α|`; `m > dim` is clamped to `dim`.
pub fn lanczos(op: &dyn SymOperator, v0: &[f64], m: usize) -> Result<LanczosRun> {
    let n = op.dim();
    if v0.len() != n {
        return Err(Error::Shape(format!("start vector of {} for dimension {n}", v0.len())));
    }
    if m == 0 {
        return Err(Error::Config("Lanczos needs m ≥ 1".into()));
    }
    let v_norm = norm(v0);
    if v_norm == 0.0 || !v_norm.is_finite() {
        return Err(Error::ZeroVector);
    }
    let clamped = m > n;
    if clamped {
        log::warn!("Lanczos steps {m} exceed dimension {n}; clamping");
    }
    let m = m.min(n);

    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m);
    basis.push(v0.iter().map(|x| x / v_norm).collect());
    let mut alpha = Vec::with_capacity(m);
    let mut beta: Vec<f64> = Vec::with_capacity(m);
    let mut alpha_max = 0.0f64;

    for j in 0..m {
        let q = &basis[j];
        let mut w = op.apply(q)?;
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric { node: j, op: "lanczos" });
        }
        let a = dot(q, &w);
        alpha.push(a);
        alpha_max = alpha_max.max(a.abs());
        axpy(-a, q, &mut w);
        if j > 0 {
            axpy(-beta[j - 1], &basis[j - 1], &mut w);
        }
        for _ in 0..2 {
            let coeffs: Vec<f64> = basis.iter().map(|b| dot(b, &w)).collect();
            for (c, b) in coeffs.iter().zip(&basis) {
                axpy(-c, b, &mut w);
            }
        }
        if j + 1 == m {
            break;
        }
        let b = norm(&w);
        if b <= BREAKDOWN_TOL * alpha_max {
            break;
        }
        beta.push(b);
        basis.push(w.into_iter().map(|x| x / b).collect());
    }

    let steps = alpha.len();
    Ok(LanczosRun {
        tridiagonal: TridiagonalMatrix {
            alpha,
            beta,
            actual_steps: steps,
        },
        basis,
        clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DenseMatrix;
    use crate::spectral::DiagonalOperator;

    #[test]
    fn exact_after_n_steps() {
        let op = DiagonalOperator(vec![1.0, 2.0, 3.0]);
        let run = lanczos(&op, &[1.0, 1.0, 1.0], 3).unwrap();
        let eig = run.tridiagonal.eigen().unwrap();
        for (got, want) in eig.values.iter().zip([1.0, 2.0, 3.0]) {
            assert!((got - want).abs() < 1e-10);
        }
    }

    #[test]
    fn identity_stops_after_one_step() {
        let op = DenseMatrix::from_diagonal(&[1.0; 9]);
        let v0: Vec<f64> = (0..9).map(|i| (i as f64).sin() + 0.1).collect();
        let run = lanczos(&op, &v0, 5).unwrap();
        assert_eq!(run.tridiagonal.actual_steps, 1);
        assert!((run.tridiagonal.alpha[0] - 1.0).abs() < 1e-15);
        assert!(run.tridiagonal.beta.is_empty());
        let (nodes, weights) = run.tridiagonal.quadrature().unwrap();
        assert_eq!(weights, vec![1.0]);
        assert!((nodes[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn clamps_and_rejects_zero_start() {
        let op = DiagonalOperator(vec![1.0, 5.0]);
        let run = lanczos(&op, &[1.0, 1.0], 10).unwrap();
        assert!(run.clamped);
        assert_eq!(run.tridiagonal.actual_steps, 2);
        assert!(matches!(lanczos(&op, &[0.0, 0.0], 2), Err(Error::ZeroVector)));
    }

    #[test]
    fn basis_is_orthonormal() {
        let d: Vec<f64> = (0..60).map(|i| (i as f64 * 0.37).cos() * 10.0).collect();
        let op = DiagonalOperator(d);
        let v0: Vec<f64> = (0..60).map(|i| 1.0 + (i as f64 * 1.3).sin()).collect();
        let run = lanczos(&op, &v0, 40).unwrap();
        for (i, a) in run.basis.iter().enumerate() {
            for (j, b) in run.basis.iter().enumerate() {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dot(a, b) - expect).abs() < 1e-8);
            }
        }
    }
}
