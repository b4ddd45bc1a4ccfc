use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;

use crate::error::{Error, Result};

const REFINEMENT_STEPS: usize = 3;

/// Solves `A x = b` for a square sparse `A` given as triplets (duplicates are
/// summed) using sparse LU plus a few rounds of iterative refinement.
pub fn solve_sparse(n: usize, triplets: &[(usize, usize, f64)], rhs: &[f64]) -> Result<Vec<f64>> {
    assert_eq!(rhs.len(), n);
    if n == 0 {
        return Ok(Vec::new());
    }
    let trip: Vec<Triplet<usize, usize, f64>> = triplets
        .iter()
        .map(|&(i, j, v)| Triplet::new(i, j, v))
        .collect();
    let a = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &trip)
        .map_err(|e| Error::Singular(format!("bad sparse structure: {e:?}")))?;
    let lu = a
        .sp_lu()
        .map_err(|e| Error::Singular(format!("LU factorization failed: {e:?}")))?;

    let b = Mat::<f64>::from_fn(n, 1, |i, _| rhs[i]);
    let mut x: Vec<f64> = {
        let sol = lu.solve(&b);
        (0..n).map(|i| sol[(i, 0)]).collect()
    };
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("non-finite solution".into()));
    }

    for _ in 0..REFINEMENT_STEPS {
        let mut r = rhs.to_vec();
        for &(i, j, v) in triplets {
            r[i] -= v * x[j];
        }
        let rnorm = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if rnorm < 1e-15 {
            break;
        }
        let rb = Mat::<f64>::from_fn(n, 1, |i, _| r[i]);
        let dx = lu.solve(&rb);
        for (i, xi) in x.iter_mut().enumerate() {
            *xi += dx[(i, 0)];
        }
    }

    let mut r = rhs.to_vec();
    for &(i, j, v) in triplets {
        r[i] -= v * x[j];
    }
    let rnorm = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = 1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !rnorm.is_finite() || rnorm > 1e-8 * scale {
        return Err(Error::Singular(format!(
            "residual {rnorm:e} after refinement"
        )));
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_system() {
        // [2 1; 0 4] x = [1; 2]
        let x = solve_sparse(2, &[(0, 0, 2.0), (0, 1, 1.0), (1, 1, 4.0)], &[1.0, 2.0]).unwrap();
        assert!((x[0] - 0.25).abs() < 1e-14);
        assert!((x[1] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn duplicates_are_summed() {
        let x = solve_sparse(1, &[(0, 0, 1.0), (0, 0, 1.0)], &[4.0]).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn singular_is_an_error() {
        assert!(solve_sparse(2, &[(0, 0, 1.0), (1, 0, 1.0)], &[1.0, 1.0]).is_err());
    }
}
