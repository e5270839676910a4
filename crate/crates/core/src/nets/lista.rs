//! LISTA: `z_{k+1} = h_θ(W_g z_k + W_e x)` with free weights per layer.

use nalgebra::{DMatrix, DVector};

use super::{shrink_batch, shrink_batch_backward, Batch};
use crate::error::{check_dim, Result};
use crate::problem::{shrink, Gram};

#[derive(Debug, Clone, PartialEq)]
pub struct ListaLayer {
    pub w_g: DMatrix<f64>,
    pub w_e: DMatrix<f64>,
    /// Per-coordinate threshold.
    pub theta: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ListaParams {
    pub layers: Vec<ListaLayer>,
}

/// Every layer performs one ISTA step: `W_g = I − B/L`, `W_e = Dᵀ/L`, `θ = λ/L`.
pub fn lista_init_from_ista(gram: &Gram, lambda: f64, depth: usize) -> ListaParams {
    let m = gram.m();
    let l = gram.l();
    let layer = ListaLayer {
        w_g: DMatrix::identity(m, m) - gram.b() / l,
        w_e: gram.dt() / l,
        theta: DVector::from_element(m, lambda / l),
    };
    ListaParams {
        layers: vec![layer; depth],
    }
}

/// Applies every layer from `z0`; returns the output and the iterates `z_0, …, z_K`.
pub fn lista_forward(
    params: &ListaParams,
    x: &DVector<f64>,
    z0: &DVector<f64>,
) -> Result<(DVector<f64>, Vec<DVector<f64>>)> {
    let mut iterates = vec![z0.clone()];
    for layer in &params.layers {
        check_dim("lista w_g", z0.len(), layer.w_g.ncols())?;
        check_dim("lista w_e", x.len(), layer.w_e.ncols())?;
        check_dim("lista theta", layer.w_g.nrows(), layer.theta.len())?;
        let z = iterates.last().expect("nonempty");
        let mut pre = &layer.w_g * z;
        pre.gemv(1.0, &layer.w_e, x, 1.0);
        let next = DVector::from_iterator(
            pre.len(),
            pre.iter().zip(layer.theta.iter()).map(|(u, t)| shrink(*u, *t)),
        );
        iterates.push(next);
    }
    Ok((iterates.last().expect("nonempty").clone(), iterates))
}

pub(crate) struct LayerCache {
    pub(crate) pre: DMatrix<f64>,
}

pub(crate) fn forward_batch(params: &ListaParams, batch: &Batch) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
    let (out, iterates, _) = forward_with_cache(params, batch);
    (out, iterates)
}

pub(crate) fn forward_with_cache(
    params: &ListaParams,
    batch: &Batch,
) -> (DMatrix<f64>, Vec<DMatrix<f64>>, Vec<LayerCache>) {
    let mut iterates = vec![DMatrix::zeros(batch.m(), batch.len())];
    let mut caches = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let z = iterates.last().expect("nonempty");
        let pre = &layer.w_g * z + &layer.w_e * batch.x();
        iterates.push(shrink_batch(&pre, &layer.theta));
        caches.push(LayerCache { pre });
    }
    (iterates.last().expect("nonempty").clone(), iterates, caches)
}

pub(crate) fn backward(params: &ListaParams, batch: &Batch) -> (f64, ListaParams) {
    let (out, iterates, caches) = forward_with_cache(params, batch);
    let loss = batch.mean_cost(&out);
    let mut z_bar = batch.cost_adjoint(&out);
    let mut grads = Vec::with_capacity(params.layers.len());
    for (k, layer) in params.layers.iter().enumerate().rev() {
        let (pre_bar, theta_bar) = shrink_batch_backward(&caches[k].pre, &layer.theta, &z_bar);
        grads.push(ListaLayer {
            w_g: &pre_bar * iterates[k].transpose(),
            w_e: &pre_bar * batch.x().transpose(),
            theta: theta_bar,
        });
        z_bar = layer.w_g.tr_mul(&pre_bar);
    }
    grads.reverse();
    (loss, ListaParams { layers: grads })
}
