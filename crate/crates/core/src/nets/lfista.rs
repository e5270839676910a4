//! LFISTA: `z_{k+1} = h_θ(W_g z_k + W_m z_{k−1} + W_e x)`, the unrolled FISTA with two
//! memory taps. The tap before the first layer is `z_{−1} = z_0`.

use nalgebra::{DMatrix, DVector};

use super::{shrink_batch, shrink_batch_backward, Batch};
use crate::error::{check_dim, Result};
use crate::problem::{shrink, Gram};
use crate::solvers::next_t;

#[derive(Debug, Clone, PartialEq)]
pub struct LfistaLayer {
    pub w_g: DMatrix<f64>,
    pub w_m: DMatrix<f64>,
    pub w_e: DMatrix<f64>,
    pub theta: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LfistaParams {
    pub layers: Vec<LfistaLayer>,
}

/// Layer `k` performs FISTA step `k` with momentum `c = (t_{k−1} − 1)/t_k`:
/// `W_g = (1 + c)(I − B/L)`, `W_m = −c(I − B/L)`, `W_e = Dᵀ/L`, `θ = λ/L`, where
/// `t_0 = t_1 = 1`.
pub fn lfista_init_from_fista(gram: &Gram, lambda: f64, depth: usize) -> LfistaParams {
    let m = gram.m();
    let l = gram.l();
    let base = DMatrix::identity(m, m) - gram.b() / l;
    let w_e = gram.dt() / l;
    let theta = DVector::from_element(m, lambda / l);
    let (mut t_prev, mut t) = (1.0, 1.0);
    let mut layers = Vec::with_capacity(depth);
    for _ in 0..depth {
        let c = (t_prev - 1.0) / t;
        layers.push(LfistaLayer {
            w_g: &base * (1.0 + c),
            w_m: &base * (-c),
            w_e: w_e.clone(),
            theta: theta.clone(),
        });
        t_prev = t;
        t = next_t(t);
    }
    LfistaParams { layers }
}

pub fn lfista_forward(
    params: &LfistaParams,
    x: &DVector<f64>,
    z0: &DVector<f64>,
) -> Result<(DVector<f64>, Vec<DVector<f64>>)> {
    let mut iterates = vec![z0.clone()];
    for (k, layer) in params.layers.iter().enumerate() {
        check_dim("lfista w_g", z0.len(), layer.w_g.ncols())?;
        check_dim("lfista w_m", z0.len(), layer.w_m.ncols())?;
        check_dim("lfista w_e", x.len(), layer.w_e.ncols())?;
        check_dim("lfista theta", layer.w_g.nrows(), layer.theta.len())?;
        let z = &iterates[k];
        let z_prev = &iterates[k.saturating_sub(1)];
        let mut pre = &layer.w_g * z;
        pre.gemv(1.0, &layer.w_m, z_prev, 1.0);
        pre.gemv(1.0, &layer.w_e, x, 1.0);
        let next = DVector::from_iterator(
            pre.len(),
            pre.iter().zip(layer.theta.iter()).map(|(u, t)| shrink(*u, *t)),
        );
        iterates.push(next);
    }
    Ok((iterates.last().expect("nonempty").clone(), iterates))
}

pub(crate) fn forward_with_cache(params: &LfistaParams, batch: &Batch) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
    let mut iterates = vec![DMatrix::zeros(batch.m(), batch.len())];
    let mut pres = Vec::with_capacity(params.layers.len());
    for (k, layer) in params.layers.iter().enumerate() {
        let pre = &layer.w_g * &iterates[k] + &layer.w_m * &iterates[k.saturating_sub(1)] + &layer.w_e * batch.x();
        iterates.push(shrink_batch(&pre, &layer.theta));
        pres.push(pre);
    }
    (iterates, pres)
}

pub(crate) fn forward_batch(params: &LfistaParams, batch: &Batch) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
    let (iterates, _) = forward_with_cache(params, batch);
    (iterates.last().expect("nonempty").clone(), iterates)
}

pub(crate) fn backward(params: &LfistaParams, batch: &Batch) -> (f64, LfistaParams) {
    let (iterates, pres) = forward_with_cache(params, batch);
    let depth = params.layers.len();
    let out = &iterates[depth];
    let loss = batch.mean_cost(out);
    // Adjoints of z_0 … z_K; z_0 is fixed, its entry only absorbs contributions.
    let mut z_bars = vec![DMatrix::zeros(batch.m(), batch.len()); depth + 1];
    z_bars[depth] = batch.cost_adjoint(out);
    let mut grads = Vec::with_capacity(depth);
    for k in (0..depth).rev() {
        let layer = &params.layers[k];
        let (pre_bar, theta_bar) = shrink_batch_backward(&pres[k], &layer.theta, &z_bars[k + 1]);
        let prev = k.saturating_sub(1);
        grads.push(LfistaLayer {
            w_g: &pre_bar * iterates[k].transpose(),
            w_m: &pre_bar * iterates[prev].transpose(),
            w_e: &pre_bar * batch.x().transpose(),
            theta: theta_bar,
        });
        z_bars[k] += layer.w_g.tr_mul(&pre_bar);
        z_bars[prev] += layer.w_m.tr_mul(&pre_bar);
    }
    grads.reverse();
    (loss, LfistaParams { layers: grads })
}
