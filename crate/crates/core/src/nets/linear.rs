//! One-layer linear estimator `z = A₀x`, used as a warm start for ISTA.

use nalgebra::{DMatrix, DVector};

use super::{sign0, Batch};
use crate::error::{check_dim, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    /// `m × n`.
    pub a0: DMatrix<f64>,
}

impl LinearParams {
    pub fn zeros(m: usize, n: usize) -> Self {
        Self {
            a0: DMatrix::zeros(m, n),
        }
    }
}

pub fn linear_forward(params: &LinearParams, x: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim("linear input", params.a0.ncols(), x.len())?;
    Ok(&params.a0 * x)
}

fn recon_residual(params: &LinearParams, batch: &Batch) -> DMatrix<f64> {
    let n = batch.n();
    DMatrix::identity(n, n) - batch.gram().d() * &params.a0
}

/// `‖I − DA₀‖_F² + λ·mean_x ‖A₀x‖₁`.
pub(crate) fn loss(params: &LinearParams, batch: &Batch) -> Result<f64> {
    check_dim("linear rows", batch.m(), params.a0.nrows())?;
    check_dim("linear cols", batch.n(), params.a0.ncols())?;
    let z = &params.a0 * batch.x();
    let l1: f64 = z.iter().map(|v| v.abs()).sum();
    Ok(recon_residual(params, batch).norm_squared() + batch.lambda() * l1 / batch.len() as f64)
}

pub(crate) fn backward(params: &LinearParams, batch: &Batch) -> Result<(f64, LinearParams)> {
    let value = loss(params, batch)?;
    let resid = recon_residual(params, batch);
    let signs = (&params.a0 * batch.x()).map(sign0);
    let grad =
        batch.gram().dt() * resid * (-2.0) + signs * batch.x().transpose() * (batch.lambda() / batch.len() as f64);
    Ok((value, LinearParams { a0: grad }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::pinv;

    #[test]
    fn forward_examples() {
        let x = DVector::from_vec(vec![1.0, -2.0, 3.0]);
        assert_eq!(
            linear_forward(&LinearParams::zeros(4, 3), &x).unwrap(),
            DVector::zeros(4)
        );
        let a0 = pinv(&DMatrix::identity(3, 3), 1e-12);
        assert_eq!(linear_forward(&LinearParams { a0 }, &x).unwrap(), x);

        let a0 = DMatrix::from_fn(4, 3, |i, j| (i as f64 + 1.0) * 0.5 - j as f64);
        let z = linear_forward(&LinearParams { a0: a0.clone() }, &x).unwrap();
        for i in 0..4 {
            let mut acc = 0.0;
            for j in 0..3 {
                acc += a0[(i, j)] * x[j];
            }
            assert!((z[i] - acc).abs() <= 1e-14);
        }
        assert!(linear_forward(&LinearParams::zeros(4, 2), &x).is_err());
    }
}
