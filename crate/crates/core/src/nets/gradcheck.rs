//! Central finite-difference check of [`network_backward`].

use nalgebra::DMatrix;
use rand::Rng;

use super::{lfista, lista, network_backward, network_loss, Batch, NetParams};
use crate::error::{Error, Result};

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone)]
pub struct GradCheck {
    /// Largest `‖fd − analytic‖∞ / ‖analytic‖∞` over the tensors.
    pub max_rel_error: f64,
    pub worst_tensor: String,
    /// Distance of the closest unit to a kink when the check started.
    pub kink_margin: f64,
}

fn shrink_margin(pre: &DMatrix<f64>, theta: impl Fn(usize) -> f64) -> f64 {
    let mut margin = f64::INFINITY;
    for j in 0..pre.ncols() {
        for i in 0..pre.nrows() {
            margin = margin.min((pre[(i, j)].abs() - theta(i)).abs());
        }
    }
    margin
}

fn nonzero_margin(z: &DMatrix<f64>) -> f64 {
    z.iter()
        .filter(|v| **v != 0.0)
        .fold(f64::INFINITY, |acc, v| acc.min(v.abs()))
}

/// Smallest distance of any piecewise-linear unit to its switching point: shrink
/// pre-activations against their thresholds and nonzero outputs against zero.
/// The loss is smooth in a neighbourhood whose size scales with this margin.
pub fn kink_margin(params: &NetParams, batch: &Batch) -> Result<f64> {
    params.check_shapes(batch)?;
    Ok(match params {
        NetParams::Lista(p) => {
            let (_, _, caches) = lista::forward_with_cache(p, batch);
            caches
                .iter()
                .zip(&p.layers)
                .map(|(c, l)| shrink_margin(&c.pre, |i| l.theta[i]))
                .fold(f64::INFINITY, f64::min)
        }
        NetParams::Lfista(p) => {
            let (_, pres) = lfista::forward_with_cache(p, batch);
            pres.iter()
                .zip(&p.layers)
                .map(|(pre, l)| shrink_margin(pre, |i| l.theta[i]))
                .fold(f64::INFINITY, f64::min)
        }
        NetParams::Facnet(p) => {
            let (out, caches) = super::facnet::forward_batch(p, batch)?;
            let lambda = batch.lambda();
            caches
                .iter()
                .zip(&p.layers)
                .map(|(c, l)| shrink_margin(&c.pre, |i| lambda / l.s[i]))
                .fold(nonzero_margin(&out), f64::min)
        }
        NetParams::Linear(p) => (&p.a0 * batch.x())
            .iter()
            .fold(f64::INFINITY, |acc, v| acc.min(v.abs())),
    })
}

/// Compares the analytic gradient with central differences of step `h` on every
/// parameter.
pub fn finite_difference_check(params: &NetParams, batch: &Batch, h: f64) -> Result<GradCheck> {
    let margin = kink_margin(params, batch)?;
    let (_, grad) = network_backward(params, batch)?;
    let mut probe = params.clone();
    let mut max_rel_error: f64 = 0.0;
    let mut worst_tensor = String::new();
    let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
    for (t, name) in names.iter().enumerate() {
        let analytic = grad.tensors()[t].1.to_vec();
        let mut err: f64 = 0.0;
        for (i, g) in analytic.iter().enumerate() {
            let orig = params.tensors()[t].1[i];
            probe.tensors_mut()[t].1[i] = orig + h;
            let up = network_loss(&probe, batch)?;
            probe.tensors_mut()[t].1[i] = orig - h;
            let down = network_loss(&probe, batch)?;
            probe.tensors_mut()[t].1[i] = orig;
            err = err.max(((up - down) / (2.0 * h) - g).abs());
        }
        let scale = analytic.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1e-12);
        let rel = err / scale;
        if rel >= max_rel_error {
            max_rel_error = rel;
            worst_tensor = name.clone();
        }
    }
    Ok(GradCheck {
        max_rel_error,
        worst_tensor,
        kink_margin: margin,
    })
}

/// Jitters `base` until every unit sits at least `min_margin` away from its kink.
pub fn sample_kink_safe<R: Rng>(
    base: &NetParams,
    batch: &Batch,
    scale: f64,
    min_margin: f64,
    rng: &mut R,
) -> Result<NetParams> {
    const MAX_TRIES: usize = 1000;
    for _ in 0..MAX_TRIES {
        let mut candidate = base.clone();
        candidate.jitter(scale, rng);
        if kink_margin(&candidate, batch)? >= min_margin {
            return Ok(candidate);
        }
    }
    Err(Error::InvalidArgument(format!(
        "no parameter point with kink margin {min_margin:e} found in {MAX_TRIES} draws"
    )))
}
