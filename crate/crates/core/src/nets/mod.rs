//! Unrolled networks: LISTA, LFISTA, FacNet and the one-layer linear warm start.
//!
//! Single-sample forwards work on a [`Problem`]; training works on a [`Batch`] whose
//! columns share the dictionary and `λ`. Gradients are hand-written reverse passes
//! with the convention that a unit sitting exactly at its threshold is inactive.

mod checkpoint;
pub mod facnet;
mod gradcheck;
pub mod lfista;
pub mod linear;
pub mod lista;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::problem::{shrink, Gram, Problem};

pub use checkpoint::{load_checkpoint, parse_checkpoint, save_checkpoint, write_checkpoint};
pub use facnet::{facnet_forward, facnet_identity, finalize_facnet, FacnetLayer, FacnetParams};
pub use gradcheck::{finite_difference_check, kink_margin, sample_kink_safe, GradCheck};
pub use lfista::{lfista_forward, lfista_init_from_fista, LfistaLayer, LfistaParams};
pub use linear::{linear_forward, LinearParams};
pub use lista::{lista_forward, lista_init_from_ista, ListaLayer, ListaParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetKind {
    Lista,
    Lfista,
    Facnet,
    Linear,
}

impl NetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NetKind::Lista => "lista",
            NetKind::Lfista => "lfista",
            NetKind::Facnet => "facnet",
            NetKind::Linear => "linear",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "lista" => Some(NetKind::Lista),
            "lfista" => Some(NetKind::Lfista),
            "facnet" => Some(NetKind::Facnet),
            "linear" => Some(NetKind::Linear),
            _ => None,
        }
    }
}

impl fmt::Display for NetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Signals sharing one dictionary and one `λ`, stored column-wise.
#[derive(Debug, Clone)]
pub struct Batch {
    gram: Arc<Gram>,
    lambda: f64,
    x: DMatrix<f64>,
    dtx: DMatrix<f64>,
}

impl Batch {
    pub fn new(gram: Arc<Gram>, lambda: f64, x: DMatrix<f64>) -> Result<Self> {
        check_dim("batch signal dimension", gram.n(), x.nrows())?;
        if x.ncols() == 0 {
            return Err(Error::InvalidArgument("batch is empty".into()));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("batch signals".into()));
        }
        let dtx = gram.dt() * &x;
        Ok(Self { gram, lambda, x, dtx })
    }

    /// All problems must share the same Gram data (same allocation or equal
    /// dictionary) and the same `λ`.
    pub fn from_problems(problems: &[Problem]) -> Result<Self> {
        let first = problems
            .first()
            .ok_or_else(|| Error::InvalidArgument("batch is empty".into()))?;
        for p in problems {
            if !Arc::ptr_eq(p.gram(), first.gram()) && p.d() != first.d() {
                return Err(Error::InvalidArgument(
                    "batch problems use different dictionaries".into(),
                ));
            }
            if p.lambda() != first.lambda() {
                return Err(Error::InvalidArgument("batch problems use different lambdas".into()));
            }
        }
        let x = DMatrix::from_columns(&problems.iter().map(|p| p.x().clone()).collect::<Vec<_>>());
        Self::new(first.gram().clone(), first.lambda(), x)
    }

    pub fn gram(&self) -> &Arc<Gram> {
        &self.gram
    }
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }
    pub fn dtx(&self) -> &DMatrix<f64> {
        &self.dtx
    }
    pub fn len(&self) -> usize {
        self.x.ncols()
    }
    pub fn is_empty(&self) -> bool {
        self.x.ncols() == 0
    }
    pub fn n(&self) -> usize {
        self.gram.n()
    }
    pub fn m(&self) -> usize {
        self.gram.m()
    }

    pub fn problem(&self, i: usize) -> Result<Problem> {
        Problem::with_gram(self.gram.clone(), self.x.column(i).into_owned(), self.lambda)
    }

    /// `F_x(z)` for every column.
    pub fn costs(&self, z: &DMatrix<f64>) -> Vec<f64> {
        let r = &self.x - self.gram.d() * z;
        (0..z.ncols())
            .map(|j| {
                let l1: f64 = z.column(j).iter().map(|v| v.abs()).sum();
                0.5 * r.column(j).norm_squared() + self.lambda * l1
            })
            .collect()
    }

    pub fn mean_cost(&self, z: &DMatrix<f64>) -> f64 {
        self.costs(z).iter().sum::<f64>() / self.len() as f64
    }

    /// Gradient of the mean cost with respect to each column of `z`, using
    /// `sign(0) = 0`.
    pub(crate) fn cost_adjoint(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let scale = 1.0 / self.len() as f64;
        let mut g = self.gram.b() * z - &self.dtx;
        for (gv, zv) in g.iter_mut().zip(z.iter()) {
            *gv = (*gv + self.lambda * sign0(*zv)) * scale;
        }
        g
    }
}

pub(crate) fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Row-wise soft threshold of a batch of pre-activations.
pub(crate) fn shrink_batch(pre: &DMatrix<f64>, theta: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(pre.nrows(), pre.ncols(), |i, j| shrink(pre[(i, j)], theta[i]))
}

/// Reverse pass of [`shrink_batch`]: adjoints of the pre-activations and thresholds.
pub(crate) fn shrink_batch_backward(
    pre: &DMatrix<f64>,
    theta: &DVector<f64>,
    out_bar: &DMatrix<f64>,
) -> (DMatrix<f64>, DVector<f64>) {
    let mut pre_bar = DMatrix::zeros(pre.nrows(), pre.ncols());
    let mut theta_bar = DVector::zeros(theta.len());
    for j in 0..pre.ncols() {
        for i in 0..pre.nrows() {
            let u = pre[(i, j)];
            if u.abs() > theta[i] {
                let g = out_bar[(i, j)];
                pre_bar[(i, j)] = g;
                theta_bar[i] -= u.signum() * g;
            }
        }
    }
    (pre_bar, theta_bar)
}

/// Parameters of any of the four architectures. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub enum NetParams {
    Lista(ListaParams),
    Lfista(LfistaParams),
    Facnet(FacnetParams),
    Linear(LinearParams),
}

impl NetParams {
    /// Classical-solver initialization: ISTA, FISTA, `(I, ‖B‖·1)` or zero.
    pub fn init(kind: NetKind, gram: &Gram, lambda: f64, depth: usize, mu: f64) -> Result<Self> {
        if depth == 0 && kind != NetKind::Linear {
            return Err(Error::InvalidArgument("network depth must be at least 1".into()));
        }
        Ok(match kind {
            NetKind::Lista => NetParams::Lista(lista_init_from_ista(gram, lambda, depth)),
            NetKind::Lfista => NetParams::Lfista(lfista_init_from_fista(gram, lambda, depth)),
            NetKind::Facnet => NetParams::Facnet(facnet_identity(gram, depth, mu)),
            NetKind::Linear => NetParams::Linear(LinearParams::zeros(gram.m(), gram.n())),
        })
    }

    pub fn kind(&self) -> NetKind {
        match self {
            NetParams::Lista(_) => NetKind::Lista,
            NetParams::Lfista(_) => NetKind::Lfista,
            NetParams::Facnet(_) => NetKind::Facnet,
            NetParams::Linear(_) => NetKind::Linear,
        }
    }

    /// Number of layers; the linear model counts as one.
    pub fn depth(&self) -> usize {
        match self {
            NetParams::Lista(p) => p.layers.len(),
            NetParams::Lfista(p) => p.layers.len(),
            NetParams::Facnet(p) => p.layers.len(),
            NetParams::Linear(_) => 1,
        }
    }

    /// Named views of every trainable tensor, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = Vec::new();
        match self {
            NetParams::Lista(p) => {
                for (k, l) in p.layers.iter().enumerate() {
                    out.push((format!("layer{}.w_g", k + 1), l.w_g.as_slice()));
                    out.push((format!("layer{}.w_e", k + 1), l.w_e.as_slice()));
                    out.push((format!("layer{}.theta", k + 1), l.theta.as_slice()));
                }
            }
            NetParams::Lfista(p) => {
                for (k, l) in p.layers.iter().enumerate() {
                    out.push((format!("layer{}.w_g", k + 1), l.w_g.as_slice()));
                    out.push((format!("layer{}.w_m", k + 1), l.w_m.as_slice()));
                    out.push((format!("layer{}.w_e", k + 1), l.w_e.as_slice()));
                    out.push((format!("layer{}.theta", k + 1), l.theta.as_slice()));
                }
            }
            NetParams::Facnet(p) => {
                for (k, l) in p.layers.iter().enumerate() {
                    out.push((format!("layer{}.a", k + 1), l.a.as_slice()));
                    out.push((format!("layer{}.s", k + 1), l.s.as_slice()));
                }
            }
            NetParams::Linear(p) => out.push(("a0".to_string(), p.a0.as_slice())),
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = Vec::new();
        match self {
            NetParams::Lista(p) => {
                for (k, l) in p.layers.iter_mut().enumerate() {
                    out.push((format!("layer{}.w_g", k + 1), l.w_g.as_mut_slice()));
                    out.push((format!("layer{}.w_e", k + 1), l.w_e.as_mut_slice()));
                    out.push((format!("layer{}.theta", k + 1), l.theta.as_mut_slice()));
                }
            }
            NetParams::Lfista(p) => {
                for (k, l) in p.layers.iter_mut().enumerate() {
                    out.push((format!("layer{}.w_g", k + 1), l.w_g.as_mut_slice()));
                    out.push((format!("layer{}.w_m", k + 1), l.w_m.as_mut_slice()));
                    out.push((format!("layer{}.w_e", k + 1), l.w_e.as_mut_slice()));
                    out.push((format!("layer{}.theta", k + 1), l.theta.as_mut_slice()));
                }
            }
            NetParams::Facnet(p) => {
                for (k, l) in p.layers.iter_mut().enumerate() {
                    out.push((format!("layer{}.a", k + 1), l.a.as_mut_slice()));
                    out.push((format!("layer{}.s", k + 1), l.s.as_mut_slice()));
                }
            }
            NetParams::Linear(p) => out.push(("a0".to_string(), p.a0.as_mut_slice())),
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Adds `scale · N(0, 1)` to every parameter, then restores the constraints.
    pub fn jitter<R: Rng>(&mut self, scale: f64, rng: &mut R) {
        for (_, t) in self.tensors_mut() {
            for v in t.iter_mut() {
                *v += scale * rng.sample::<f64, _>(StandardNormal);
            }
        }
        self.clamp_constraints();
    }

    /// Keeps thresholds nonnegative and diagonal factors at least `1e−8`.
    pub fn clamp_constraints(&mut self) {
        match self {
            NetParams::Lista(p) => p.layers.iter_mut().for_each(|l| l.theta.apply(|v| *v = v.max(0.0))),
            NetParams::Lfista(p) => p.layers.iter_mut().for_each(|l| l.theta.apply(|v| *v = v.max(0.0))),
            NetParams::Facnet(p) => p
                .layers
                .iter_mut()
                .for_each(|l| l.s.apply(|v| *v = v.max(facnet::MIN_S))),
            NetParams::Linear(_) => {}
        }
    }

    /// Network output for every column of the batch, starting from `z = 0`.
    pub fn forward_batch(&self, batch: &Batch) -> Result<DMatrix<f64>> {
        self.check_shapes(batch)?;
        Ok(match self {
            NetParams::Lista(p) => lista::forward_batch(p, batch).0,
            NetParams::Lfista(p) => lfista::forward_batch(p, batch).0,
            NetParams::Facnet(p) => facnet::forward_batch(p, batch)?.0,
            NetParams::Linear(p) => &p.a0 * batch.x(),
        })
    }

    /// Iterates `z_0, …, z_K` for every column, starting from `z = 0`.
    pub fn forward_batch_iterates(&self, batch: &Batch) -> Result<Vec<DMatrix<f64>>> {
        self.check_shapes(batch)?;
        Ok(match self {
            NetParams::Lista(p) => lista::forward_batch(p, batch).1,
            NetParams::Lfista(p) => lfista::forward_batch(p, batch).1,
            NetParams::Facnet(p) => {
                let (last, caches) = facnet::forward_batch(p, batch)?;
                let mut out: Vec<_> = caches.into_iter().map(|c| c.z).collect();
                out.push(last);
                out
            }
            NetParams::Linear(p) => vec![DMatrix::zeros(batch.m(), batch.len()), &p.a0 * batch.x()],
        })
    }

    pub(crate) fn check_shapes(&self, batch: &Batch) -> Result<()> {
        let (m, n) = (batch.m(), batch.n());
        match self {
            NetParams::Lista(p) => {
                for l in &p.layers {
                    check_dim("lista w_g", m, l.w_g.nrows())?;
                    check_dim("lista w_g", m, l.w_g.ncols())?;
                    check_dim("lista w_e rows", m, l.w_e.nrows())?;
                    check_dim("lista w_e cols", n, l.w_e.ncols())?;
                    check_dim("lista theta", m, l.theta.len())?;
                }
            }
            NetParams::Lfista(p) => {
                for l in &p.layers {
                    check_dim("lfista w_g", m, l.w_g.nrows())?;
                    check_dim("lfista w_g", m, l.w_g.ncols())?;
                    check_dim("lfista w_m", m, l.w_m.nrows())?;
                    check_dim("lfista w_m", m, l.w_m.ncols())?;
                    check_dim("lfista w_e rows", m, l.w_e.nrows())?;
                    check_dim("lfista w_e cols", n, l.w_e.ncols())?;
                    check_dim("lfista theta", m, l.theta.len())?;
                }
            }
            NetParams::Facnet(p) => {
                for l in &p.layers {
                    check_dim("facnet a", m, l.a.nrows())?;
                    check_dim("facnet a", m, l.a.ncols())?;
                    check_dim("facnet s", m, l.s.len())?;
                }
            }
            NetParams::Linear(p) => {
                check_dim("linear rows", m, p.a0.nrows())?;
                check_dim("linear cols", n, p.a0.ncols())?;
            }
        }
        Ok(())
    }

    /// Penalty part of the loss: `(μ/K) Σ_k ‖I − A_kᵀA_k‖_F²` for FacNet, zero
    /// otherwise.
    pub fn penalty(&self) -> f64 {
        match self {
            NetParams::Facnet(p) => p.penalty(),
            _ => 0.0,
        }
    }
}

/// Training objective: mean cost of the network output, plus the unitarity penalty
/// for FacNet. The linear model uses `‖I − DA₀‖_F² + λ·mean‖A₀x‖₁`.
pub fn network_loss(params: &NetParams, batch: &Batch) -> Result<f64> {
    match params {
        NetParams::Linear(p) => linear::loss(p, batch),
        _ => Ok(batch.mean_cost(&params.forward_batch(batch)?) + params.penalty()),
    }
}

/// Loss and its gradient with respect to every trainable tensor.
pub fn network_backward(params: &NetParams, batch: &Batch) -> Result<(f64, NetParams)> {
    params.check_shapes(batch)?;
    Ok(match params {
        NetParams::Lista(p) => {
            let (loss, g) = lista::backward(p, batch);
            (loss, NetParams::Lista(g))
        }
        NetParams::Lfista(p) => {
            let (loss, g) = lfista::backward(p, batch);
            (loss, NetParams::Lfista(g))
        }
        NetParams::Facnet(p) => {
            let (loss, g) = facnet::backward(p, batch)?;
            (loss, NetParams::Facnet(g))
        }
        NetParams::Linear(p) => {
            let (loss, g) = linear::backward(p, batch)?;
            (loss, NetParams::Linear(g))
        }
    })
}
