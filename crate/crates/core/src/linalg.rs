use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Solves `(I - gamma * P) x = b` for a row-stochastic `P`.
pub(crate) fn solve_discounted(p: &DMatrix<f64>, gamma: f64, b: &[f64]) -> Result<Vec<f64>> {
    let n = b.len();
    let a = DMatrix::<f64>::identity(n, n) - p * gamma;
    solve(a, b)
}

/// Solves `(I - gamma * P^T) x = b`.
pub(crate) fn solve_discounted_transpose(p: &DMatrix<f64>, gamma: f64, b: &[f64]) -> Result<Vec<f64>> {
    let n = b.len();
    let a = DMatrix::<f64>::identity(n, n) - p.transpose() * gamma;
    solve(a, b)
}

fn solve(a: DMatrix<f64>, b: &[f64]) -> Result<Vec<f64>> {
    let rhs = DVector::from_column_slice(b);
    let lu = a.clone().lu();
    let mut x = lu.solve(&rhs).ok_or(Error::SingularSystem)?;
    // one step of iterative refinement
    let r = &rhs - &a * &x;
    if let Some(dx) = lu.solve(&r) {
        x += dx;
    }
    Ok(x.iter().copied().collect())
}
