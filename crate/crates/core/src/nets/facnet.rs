//! FacNet: each layer is a rotated proximal step `Aᵀ h_{λS⁻¹}(Az − S⁻¹A(Bz − Dᵀx))`
//! with its own orthogonal `A` and positive diagonal `S`.

use nalgebra::{DMatrix, DVector};

use super::Batch;
use crate::error::Result;
use crate::factorization::{
    rotated_layer_backward, rotated_layer_forward, rotated_prox_step, stiefel_project, unitarity_defect, Factorization,
    RotatedLayerCache,
};
use crate::problem::{Gram, Problem};

/// Floor applied to the diagonal factors during training and finalization.
pub const MIN_S: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct FacnetLayer {
    pub a: DMatrix<f64>,
    pub s: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FacnetParams {
    pub layers: Vec<FacnetLayer>,
    /// Weight of the unitarity penalty. Not trained.
    pub mu: f64,
}

impl FacnetParams {
    /// `(μ/K) Σ_k ‖I − A_kᵀA_k‖_F²`.
    pub fn penalty(&self) -> f64 {
        if self.layers.is_empty() || self.mu == 0.0 {
            return 0.0;
        }
        let total: f64 = self.layers.iter().map(|l| unitarity_defect(&l.a).powi(2)).sum();
        self.mu * total / self.layers.len() as f64
    }

    pub fn factorization(&self, k: usize) -> Result<Factorization> {
        let l = &self.layers[k];
        Factorization::new(l.a.clone(), l.s.clone())
    }
}

/// Every layer set to the ISTA step: `A = I`, `S = ‖B‖·1`.
pub fn facnet_identity(gram: &Gram, depth: usize, mu: f64) -> FacnetParams {
    let m = gram.m();
    FacnetParams {
        layers: vec![
            FacnetLayer {
                a: DMatrix::identity(m, m),
                s: DVector::from_element(m, gram.l()),
            };
            depth
        ],
        mu,
    }
}

/// Layer `k` is exactly [`rotated_prox_step`] with `(A_k, S_k)`.
pub fn facnet_forward(
    params: &FacnetParams,
    p: &Problem,
    z0: &DVector<f64>,
) -> Result<(DVector<f64>, Vec<DVector<f64>>)> {
    let mut iterates = vec![z0.clone()];
    for k in 0..params.layers.len() {
        let next = rotated_prox_step(p, &params.factorization(k)?, iterates.last().expect("nonempty"))?;
        iterates.push(next);
    }
    Ok((iterates.last().expect("nonempty").clone(), iterates))
}

fn check_s(params: &FacnetParams) -> Result<()> {
    for (k, l) in params.layers.iter().enumerate() {
        if let Some(v) = l.s.iter().find(|v| !(**v > 0.0)) {
            return Err(crate::Error::InvalidArgument(format!(
                "layer {} has a nonpositive diagonal entry {v}",
                k + 1
            )));
        }
    }
    Ok(())
}

pub(crate) fn forward_batch(params: &FacnetParams, batch: &Batch) -> Result<(DMatrix<f64>, Vec<RotatedLayerCache>)> {
    check_s(params)?;
    let b = batch.gram().b();
    let mut z = DMatrix::zeros(batch.m(), batch.len());
    let mut caches = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let (next, cache) = rotated_layer_forward(&layer.a, &layer.s, b, batch.dtx(), batch.lambda(), &z);
        caches.push(cache);
        z = next;
    }
    Ok((z, caches))
}

pub(crate) fn backward(params: &FacnetParams, batch: &Batch) -> Result<(f64, FacnetParams)> {
    let (out, caches) = forward_batch(params, batch)?;
    let loss = batch.mean_cost(&out) + params.penalty();
    let b = batch.gram().b();
    let depth = params.layers.len();
    let mut z_bar = batch.cost_adjoint(&out);
    let mut grads = Vec::with_capacity(depth);
    for (k, layer) in params.layers.iter().enumerate().rev() {
        let (mut a_bar, s_bar, zb) = rotated_layer_backward(&layer.a, &layer.s, b, batch.lambda(), &caches[k], &z_bar);
        if params.mu != 0.0 {
            let m = layer.a.ncols();
            let gap = layer.a.tr_mul(&layer.a) - DMatrix::<f64>::identity(m, m);
            a_bar += &layer.a * gap * (4.0 * params.mu / depth as f64);
        }
        grads.push(FacnetLayer { a: a_bar, s: s_bar });
        z_bar = zb;
    }
    grads.reverse();
    Ok((
        loss,
        FacnetParams {
            layers: grads,
            mu: params.mu,
        },
    ))
}

/// Projects every `A_k` onto the orthogonal group and floors `S_k` at [`MIN_S`].
pub fn finalize_facnet(params: &FacnetParams) -> FacnetParams {
    FacnetParams {
        layers: params
            .layers
            .iter()
            .map(|l| FacnetLayer {
                a: stiefel_project(&l.a).map(|(q, _)| q).unwrap_or_else(|_| l.a.clone()),
                s: l.s.map(|v| v.max(MIN_S)),
            })
            .collect(),
        mu: params.mu,
    }
}
