//! Factorizations `B ≈ AᵀSA` of the Gram matrix and the rotated proximal step they
//! induce.
//!
//! With `A` orthogonal and `S` diagonal positive, the surrogate
//! `E(z_k) + ∇E(z_k)ᵀ(z − z_k) + ½(z − z_k)ᵀAᵀSA(z − z_k) + λ‖Az‖₁`
//! separates in `u = Az`, so its minimizer is a linear map, a soft threshold with
//! per-coordinate level `λ/S`, and a rotation back by `Aᵀ`.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, count_nonzero};
use crate::problem::{shrink, Problem};
use crate::solvers::ReferenceSolution;

/// Magnitude below which a coordinate counts as zero for sparsity and sign
/// selections in Lipschitz estimates.
pub const SPARSITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Factorization {
    a: DMatrix<f64>,
    s: DVector<f64>,
    unitarity_defect: f64,
    residual_min_eig: Option<f64>,
}

pub fn unitarity_defect(a: &DMatrix<f64>) -> f64 {
    let m = a.ncols();
    (DMatrix::identity(m, m) - a.tr_mul(a)).norm()
}

impl Factorization {
    pub fn new(a: DMatrix<f64>, s: DVector<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::InvalidArgument(format!(
                "factorization matrix must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        check_dim("factorization diagonal", a.nrows(), s.len())?;
        let unitarity_defect = unitarity_defect(&a);
        Ok(Self {
            a,
            s,
            unitarity_defect,
            residual_min_eig: None,
        })
    }

    /// `A = I`, `S = s·1`.
    pub fn scaled_identity(m: usize, s: f64) -> Self {
        Self::new(DMatrix::identity(m, m), DVector::from_element(m, s)).expect("square")
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn s(&self) -> &DVector<f64> {
        &self.s
    }
    pub fn m(&self) -> usize {
        self.s.len()
    }
    /// `‖I − AᵀA‖_F`, stored at construction.
    pub fn unitarity_defect(&self) -> f64 {
        self.unitarity_defect
    }
    pub fn recompute_defect(&self) -> f64 {
        unitarity_defect(&self.a)
    }
    /// All diagonal entries strictly positive.
    pub fn is_valid(&self) -> bool {
        self.s.iter().all(|v| *v > 0.0)
    }
    pub fn residual_min_eig(&self) -> Option<f64> {
        self.residual_min_eig
    }
    /// Computes and caches the smallest eigenvalue of `AᵀSA − B`.
    pub fn fill_residual(&mut self, b: &DMatrix<f64>) -> Result<f64> {
        let r = residual(self, b)?;
        self.residual_min_eig = Some(r.min_eig);
        Ok(r.min_eig)
    }

    pub fn into_parts(self) -> (DMatrix<f64>, DVector<f64>) {
        (self.a, self.s)
    }
}

/// `δ_A(z) = λ(‖Az‖₁ − ‖z‖₁)`.
pub fn delta_a(a: &DMatrix<f64>, z: &DVector<f64>, lambda: f64) -> f64 {
    lambda * (linalg::l1(&(a * z)) - linalg::l1(z))
}

fn sign_tol(v: f64, tol: f64) -> f64 {
    if v > tol {
        1.0
    } else if v < -tol {
        -1.0
    } else {
        0.0
    }
}

/// `λ(Aᵀ sign(Az) − sign(z))` with `sign(0) = 0`; the gradient of `δ_A` wherever
/// neither `z` nor `Az` has a zero coordinate.
pub fn delta_subgradient(a: &DMatrix<f64>, z: &DVector<f64>, lambda: f64) -> DVector<f64> {
    delta_subgradient_tol(a, z, lambda, 0.0)
}

pub(crate) fn delta_subgradient_tol(a: &DMatrix<f64>, z: &DVector<f64>, lambda: f64, tol: f64) -> DVector<f64> {
    let sa = (a * z).map(|v| sign_tol(v, tol));
    let sz = z.map(|v| sign_tol(v, tol));
    (a.tr_mul(&sa) - sz) * lambda
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzEstimate {
    /// `λ(√‖z‖₀ + √‖Az‖₀)`.
    pub upper: f64,
    /// Norm of the `sign(0) = 0` subgradient of `δ_A` at `z`.
    pub local: f64,
}

/// Both estimates count entries below [`SPARSITY_TOL`] as zero.
pub fn lipschitz_estimate(a: &DMatrix<f64>, z: &DVector<f64>, lambda: f64) -> LipschitzEstimate {
    let az = a * z;
    let upper =
        lambda * ((count_nonzero(z, SPARSITY_TOL) as f64).sqrt() + (count_nonzero(&az, SPARSITY_TOL) as f64).sqrt());
    let local = delta_subgradient_tol(a, z, lambda, SPARSITY_TOL).norm();
    LipschitzEstimate { upper, local }
}

#[derive(Debug, Clone)]
pub struct Residual {
    /// `AᵀSA − B`, symmetrized.
    pub r: DMatrix<f64>,
    pub min_eig: f64,
    pub spec_norm: f64,
}

pub fn residual(f: &Factorization, b: &DMatrix<f64>) -> Result<Residual> {
    check_dim("residual Gram rows", f.m(), b.nrows())?;
    check_dim("residual Gram cols", f.m(), b.ncols())?;
    let sa = DMatrix::from_fn(f.m(), f.m(), |i, j| f.s[i] * f.a[(i, j)]);
    let r = linalg::symmetrize(&(f.a.tr_mul(&sa) - b));
    let ext = linalg::sym_extremes(&r);
    Ok(Residual {
        spec_norm: ext.max.abs().max(ext.min.abs()),
        min_eig: ext.min,
        r,
    })
}

/// Intermediate values of one rotated step.
#[derive(Debug, Clone)]
pub struct RotatedStep {
    /// Pre-threshold point `Az − S⁻¹A(Bz − Dᵀx)`.
    pub pre: DVector<f64>,
    /// Thresholded point in the rotated basis.
    pub u: DVector<f64>,
    pub z_next: DVector<f64>,
}

fn check_positive(s: &DVector<f64>) -> Result<()> {
    if let Some(v) = s.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "diagonal factor must be positive, found {v}"
        )));
    }
    Ok(())
}

pub(crate) fn rotated_step_parts(p: &Problem, f: &Factorization, z: &DVector<f64>) -> Result<RotatedStep> {
    check_dim("rotated step code", p.m(), z.len())?;
    check_dim("rotated step factorization", p.m(), f.m())?;
    check_positive(&f.s)?;
    let lambda = p.lambda();
    let az = &f.a * z;
    let ag = &f.a * p.smooth_grad(z);
    let pre = DVector::from_iterator(
        z.len(),
        az.iter().zip(ag.iter()).zip(f.s.iter()).map(|((&a, &g), &s)| a - g / s),
    );
    let u = DVector::from_iterator(
        z.len(),
        pre.iter().zip(f.s.iter()).map(|(&v, &s)| shrink(v, lambda / s)),
    );
    let z_next = f.a.tr_mul(&u);
    Ok(RotatedStep { pre, u, z_next })
}

/// `Aᵀ h_{λS⁻¹}(Az − S⁻¹A(Bz − Dᵀx))`. Equals [`crate::solvers::ista_step`] bit for
/// bit when `A = I` and `S = L·1`.
pub fn rotated_prox_step(p: &Problem, f: &Factorization, z: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(rotated_step_parts(p, f, z)?.z_next)
}

/// Subgradient of `δ_A` at the output of a rotated step that makes the one-step
/// optimality conditions exact.
///
/// The step certifies `v ∈ ∂‖·‖₁(u)` with `v_i = S_i·pre_i/λ` on thresholded
/// coordinates; the returned vector is `λ(Aᵀv − w)` with `w ∈ ∂‖·‖₁(z_next)` chosen
/// closest to `Aᵀv`. With `A = I` it is exactly zero.
pub fn certified_delta_subgradient(f: &Factorization, step: &RotatedStep, lambda: f64) -> DVector<f64> {
    let v = DVector::from_iterator(
        step.u.len(),
        step.u
            .iter()
            .zip(step.pre.iter())
            .zip(f.s.iter())
            .map(|((&u, &pre), &s)| {
                if u != 0.0 {
                    u.signum()
                } else {
                    (s * pre / lambda).clamp(-1.0, 1.0)
                }
            }),
    );
    let atv = f.a.tr_mul(&v);
    let w = DVector::from_iterator(
        atv.len(),
        atv.iter()
            .zip(step.z_next.iter())
            .map(|(&g, &z)| if z != 0.0 { z.signum() } else { g.clamp(-1.0, 1.0) }),
    );
    (atv - w) * lambda
}

/// Closest orthogonal matrix `UVᵀ`; the flag marks numerically rank-deficient input.
pub fn stiefel_project(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, bool)> {
    if !a.is_square() {
        return Err(Error::InvalidArgument(
            "stiefel projection needs a square matrix".into(),
        ));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix to project".into()));
    }
    Ok(linalg::polar_orthogonal(a))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccelerationMargin {
    /// `‖B‖/2 − ‖R_k‖ − 2·L_{A_k}(z_{k+1}) / ‖z* − z_k‖`.
    pub margin: f64,
    pub satisfied: bool,
    pub residual_norm: f64,
    pub lipschitz: f64,
    pub distance: f64,
}

/// Whether the factorization used at `z_k` improves on the ISTA upper bound. The
/// Lipschitz term uses the subgradient-norm estimate at `z_next`.
pub fn acceleration_condition(
    p: &Problem,
    f: &Factorization,
    z_k: &DVector<f64>,
    z_next: &DVector<f64>,
    reference: &ReferenceSolution,
) -> Result<AccelerationMargin> {
    check_dim("acceleration iterate", p.m(), z_k.len())?;
    check_dim("acceleration next iterate", p.m(), z_next.len())?;
    let distance = (&reference.z_star - z_k).norm();
    if distance == 0.0 {
        return Err(Error::ZeroDistance);
    }
    let res = residual(f, p.b())?;
    let lipschitz = lipschitz_estimate(&f.a, z_next, p.lambda()).local;
    let margin = p.l() / 2.0 - res.spec_norm - 2.0 * lipschitz / distance;
    Ok(AccelerationMargin {
        margin,
        satisfied: margin >= 0.0,
        residual_norm: res.spec_norm,
        lipschitz,
        distance,
    })
}

/// Rotated step applied to every column of `z`, with the intermediates needed by
/// [`rotated_layer_backward`].
#[derive(Debug, Clone)]
pub struct RotatedLayerCache {
    pub z: DMatrix<f64>,
    pub grad: DMatrix<f64>,
    pub a_grad: DMatrix<f64>,
    pub pre: DMatrix<f64>,
    pub u: DMatrix<f64>,
}

/// `dtx` holds `Dᵀx` for each column.
pub fn rotated_layer_forward(
    a: &DMatrix<f64>,
    s: &DVector<f64>,
    b: &DMatrix<f64>,
    dtx: &DMatrix<f64>,
    lambda: f64,
    z: &DMatrix<f64>,
) -> (DMatrix<f64>, RotatedLayerCache) {
    let m = s.len();
    let grad = b * z - dtx;
    let a_grad = a * &grad;
    let mut pre = a * z;
    for (idx, v) in pre.iter_mut().enumerate() {
        *v -= a_grad.as_slice()[idx] / s[idx % m];
    }
    let u = DMatrix::from_fn(m, z.ncols(), |i, j| shrink(pre[(i, j)], lambda / s[i]));
    let out = a.tr_mul(&u);
    (
        out,
        RotatedLayerCache {
            z: z.clone(),
            grad,
            a_grad,
            pre,
            u,
        },
    )
}

/// Reverse pass of [`rotated_layer_forward`]. Returns the adjoints of `A`, `S` and
/// the input iterate. Units sitting exactly at the threshold are treated as inactive.
pub fn rotated_layer_backward(
    a: &DMatrix<f64>,
    s: &DVector<f64>,
    b: &DMatrix<f64>,
    lambda: f64,
    cache: &RotatedLayerCache,
    out_bar: &DMatrix<f64>,
) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let m = s.len();
    let u_bar = a * out_bar;
    let mut a_bar = &cache.u * out_bar.transpose();
    let mut s_bar = DVector::zeros(m);
    let mut pre_bar = DMatrix::zeros(m, out_bar.ncols());
    for j in 0..out_bar.ncols() {
        for i in 0..m {
            let theta = lambda / s[i];
            let pv = cache.pre[(i, j)];
            if pv.abs() > theta {
                let g = u_bar[(i, j)];
                pre_bar[(i, j)] = g;
                // d h / d theta = −sign(pre), d theta / d s = −λ/s².
                s_bar[i] += pv.signum() * g * lambda / (s[i] * s[i]);
                // d pre / d s = (A grad) / s².
                s_bar[i] += g * cache.a_grad[(i, j)] / (s[i] * s[i]);
            }
        }
    }
    a_bar += &pre_bar * cache.z.transpose();
    let q_bar = DMatrix::from_fn(m, out_bar.ncols(), |i, j| -pre_bar[(i, j)] / s[i]);
    a_bar += &q_bar * cache.grad.transpose();
    let grad_bar = a.tr_mul(&q_bar);
    let z_bar = a.tr_mul(&pre_bar) + b * grad_bar;
    (a_bar, s_bar, z_bar)
}

/// One training pair for [`fit_factorization`]: the correlation `Dᵀx`, the starting
/// iterate and the optimal code.
#[derive(Debug, Clone, PartialEq)]
pub struct FitSample {
    pub dtx: DVector<f64>,
    pub z0: DVector<f64>,
    pub z_star: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub iterations: usize,
    /// Weight of `‖AᵀA − I‖_F²`, relative to the data scale.
    pub unitarity_weight: f64,
    /// Weight of `max(0, −min_eig(R))²`; defaults to `10·‖B‖` times the data scale.
    pub psd_weight: Option<f64>,
    /// Inflate `S` uniformly after the final projection until `R ⪰ 0`.
    pub repair: bool,
    /// Project `A` back onto the orthogonal group after every accepted step, which
    /// keeps the unitarity penalty at rounding level.
    pub retract: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            iterations: 500,
            unitarity_weight: 1.0,
            psd_weight: None,
            repair: true,
            retract: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub factorization: Factorization,
    /// Dataset objective of the returned factorization.
    pub objective: f64,
    /// Dataset objective at `(I, ‖B‖·1)`.
    pub init_objective: f64,
    /// Descent iterations behind the returned factorization; zero when the tightened
    /// identity start won.
    pub iterations: usize,
    pub start: FitStart,
}

struct FitData {
    dtx: DMatrix<f64>,
    z0: DMatrix<f64>,
    z_star: DMatrix<f64>,
    e: DMatrix<f64>,
    /// `½ Σ eᵢᵀBeᵢ`, independent of the factorization.
    e_gram: f64,
}

impl FitData {
    fn new(samples: &[FitSample], b: &DMatrix<f64>) -> Result<Self> {
        let m = b.nrows();
        for s in samples {
            check_dim("fit sample dtx", m, s.dtx.len())?;
            check_dim("fit sample z0", m, s.z0.len())?;
            check_dim("fit sample z*", m, s.z_star.len())?;
        }
        let cols = |f: fn(&FitSample) -> &DVector<f64>| DMatrix::from_fn(m, samples.len(), |i, j| f(&samples[j])[i]);
        let dtx = cols(|s| &s.dtx);
        let z0 = cols(|s| &s.z0);
        let z_star = cols(|s| &s.z_star);
        let e = &z0 - &z_star;
        let e_gram = 0.5 * e.component_mul(&(b * &e)).sum();
        Ok(Self {
            dtx,
            z0,
            z_star,
            e,
            e_gram,
        })
    }

    fn len(&self) -> f64 {
        self.e.ncols() as f64
    }
}

fn l1_mat(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v.abs()).sum()
}

fn sign_mat(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.map(|v| sign_tol(v, SPARSITY_TOL))
}

/// Mean of `½eᵀRe + δ_A(z*) − δ_A(z₁)` over the dataset.
fn data_objective(d: &FitData, a: &DMatrix<f64>, s: &DVector<f64>, b: &DMatrix<f64>, lambda: f64) -> f64 {
    let w = a * &d.e;
    let quad = 0.5
        * w.row_iter()
            .zip(s.iter())
            .map(|(r, si)| si * r.norm_squared())
            .sum::<f64>()
        - d.e_gram;
    let (z1, _) = rotated_layer_forward(a, s, b, &d.dtx, lambda, &d.z0);
    let delta_star = lambda * (l1_mat(&(a * &d.z_star)) - l1_mat(&d.z_star));
    let delta_one = lambda * (l1_mat(&(a * &z1)) - l1_mat(&z1));
    (quad + delta_star - delta_one) / d.len()
}

struct Evaluation {
    total: f64,
    grad_a: DMatrix<f64>,
    grad_s: DVector<f64>,
}

struct Weights {
    unitarity: f64,
    psd: f64,
}

fn penalties(a: &DMatrix<f64>, s: &DVector<f64>, b: &DMatrix<f64>, w: &Weights) -> (f64, DMatrix<f64>, DVector<f64>) {
    let m = s.len();
    let gap = a.tr_mul(a) - DMatrix::<f64>::identity(m, m);
    let mut value = w.unitarity * gap.norm_squared();
    let mut grad_a = a * &gap * (4.0 * w.unitarity);
    let mut grad_s = DVector::zeros(m);
    let sa = DMatrix::from_fn(m, m, |i, j| s[i] * a[(i, j)]);
    let ext = linalg::sym_extremes(&(a.tr_mul(&sa) - b));
    if ext.min < 0.0 {
        // d min_eig = vᵀ dR v for the bottom eigenvector v.
        let av = a * &ext.min_vector;
        value += w.psd * ext.min * ext.min;
        let coef = 2.0 * w.psd * ext.min;
        grad_a += DVector::from_fn(m, |i, _| s[i] * av[i]) * ext.min_vector.transpose() * (2.0 * coef);
        grad_s += av.map(|v| v * v) * coef;
    }
    (value, grad_a, grad_s)
}

fn evaluate(d: &FitData, a: &DMatrix<f64>, s: &DVector<f64>, b: &DMatrix<f64>, lambda: f64, w: &Weights) -> Evaluation {
    let n = d.len();
    let m = s.len();
    let we = a * &d.e;
    let quad = 0.5
        * we.row_iter()
            .zip(s.iter())
            .map(|(r, si)| si * r.norm_squared())
            .sum::<f64>()
        - d.e_gram;
    let mut grad_a = DMatrix::from_fn(m, d.e.ncols(), |i, j| s[i] * we[(i, j)]) * d.e.transpose();
    let mut grad_s = DVector::from_fn(m, |i, _| 0.5 * we.row(i).norm_squared());

    let a_star = a * &d.z_star;
    let delta_star = lambda * (l1_mat(&a_star) - l1_mat(&d.z_star));
    grad_a += sign_mat(&a_star) * d.z_star.transpose() * lambda;

    let (z1, cache) = rotated_layer_forward(a, s, b, &d.dtx, lambda, &d.z0);
    let a_one = a * &z1;
    let delta_one = lambda * (l1_mat(&a_one) - l1_mat(&z1));
    let sign_one = sign_mat(&a_one);
    grad_a -= &sign_one * z1.transpose() * lambda;
    let z1_bar = (a.tr_mul(&sign_one) - sign_mat(&z1)) * (-lambda);
    let (ga, gs, _) = rotated_layer_backward(a, s, b, lambda, &cache, &z1_bar);
    grad_a += ga;
    grad_s += gs;

    let (pen, pa, ps) = penalties(a, s, b, w);
    Evaluation {
        total: (quad + delta_star - delta_one) / n + pen,
        grad_a: grad_a / n + pa,
        grad_s: grad_s / n + ps,
    }
}

const MIN_DIAGONAL: f64 = 1e-8;

/// Starting point of the descent that produced a fitted factorization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitStart {
    /// `A = I`, `S = ‖B‖·1`: no commutation error, ISTA residual.
    Identity,
    /// Eigendecomposition of `B`: zero residual, large commutation error.
    Spectral,
}

/// Fits `(A, S)` to a dataset by minimizing the mean first-step bound
/// `½eᵀ(AᵀSA − B)e + δ_A(z*) − δ_A(z₁)` with `e = z₀ − z*`.
///
/// Plain gradient descent with Armijo backtracking on the objective plus a
/// unitarity penalty and a hinge on the smallest eigenvalue of `R`, run from the
/// two extreme factorizations (see [`FitStart`]). Entries of `S` stay in
/// `(0, ‖B‖]`, which keeps `‖R‖` at or below the ISTA residual `‖‖B‖I − B‖` once
/// `R ⪰ 0`. Each descent result is projected onto the orthogonal group and, if
/// requested, `S` is raised uniformly until `R ⪰ 0` and then each `S_i` is lowered
/// as far as the PSD constraint allows. The candidate with the lowest objective is
/// returned; the tightened identity start is always a candidate, so the result
/// never scores worse than `(I, ‖B‖·1)`.
pub fn fit_factorization(samples: &[FitSample], b: &DMatrix<f64>, lambda: f64, opts: &FitOptions) -> Result<FitResult> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("factorization dataset is empty".into()));
    }
    if !b.is_square() {
        return Err(Error::InvalidArgument("Gram matrix must be square".into()));
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
    }
    let m = b.nrows();
    let data = FitData::new(samples, b)?;
    let l = linalg::power_iteration(b, linalg::POWER_TOL, linalg::POWER_MAX_ITER).value;
    let scale = d_scale(&data).max(f64::MIN_POSITIVE);
    let ctx = FitContext {
        data: &data,
        b,
        lambda,
        l,
        weights: Weights {
            unitarity: opts.unitarity_weight * scale,
            psd: opts.psd_weight.unwrap_or(10.0 * l) * scale,
        },
    };
    let eye = DMatrix::identity(m, m);
    let init_objective = data_objective(&data, &eye, &DVector::from_element(m, l), b, lambda);

    let eig = nalgebra::SymmetricEigen::new(linalg::symmetrize(b));
    let starts = [
        (FitStart::Identity, eye.clone(), DVector::from_element(m, l)),
        (
            FitStart::Spectral,
            eig.eigenvectors.transpose(),
            eig.eigenvalues.map(|v| v.clamp(MIN_DIAGONAL, l)),
        ),
    ];

    let mut s_id = DVector::from_element(m, l);
    let mut best_objective = tighten_diagonal(&data, &eye, &mut s_id, b, lambda, l);
    let mut best = (FitStart::Identity, eye.clone(), s_id, 0);
    for (start, a0, s0) in starts {
        let (a, s, iterations) = descend(&ctx, a0, s0, opts)?;
        let (q, _) = stiefel_project(&a)?;
        let mut s = s.map(|v| v.max(MIN_DIAGONAL));
        let objective = if opts.repair {
            let sa = DMatrix::from_fn(m, m, |i, j| s[i] * q[(i, j)]);
            let min_eig = linalg::sym_extremes(&(q.tr_mul(&sa) - b)).min;
            if min_eig < 0.0 {
                // For orthogonal A, raising S by t raises every eigenvalue of R by t.
                s.add_scalar_mut(-min_eig * (1.0 + 1e-9) + 1e-12 * l);
            }
            tighten_diagonal(&data, &q, &mut s, b, lambda, l)
        } else {
            data_objective(&data, &q, &s, b, lambda)
        };
        log::debug!("factorization fit from {start:?}: {iterations} iterations, objective {objective}");
        if objective.is_finite() && objective < best_objective {
            best_objective = objective;
            best = (start, q, s, iterations);
        }
    }
    let (start, a, s, iterations) = best;
    let mut factorization = Factorization::new(a, s)?;
    factorization.fill_residual(b)?;
    Ok(FitResult {
        factorization,
        objective: best_objective,
        init_objective,
        iterations,
        start,
    })
}

struct FitContext<'a> {
    data: &'a FitData,
    b: &'a DMatrix<f64>,
    lambda: f64,
    l: f64,
    weights: Weights,
}

fn descend(
    ctx: &FitContext<'_>,
    mut a: DMatrix<f64>,
    mut s: DVector<f64>,
    opts: &FitOptions,
) -> Result<(DMatrix<f64>, DVector<f64>, usize)> {
    let eval = |a: &DMatrix<f64>, s: &DVector<f64>| evaluate(ctx.data, a, s, ctx.b, ctx.lambda, &ctx.weights);
    let mut cur = eval(&a, &s);
    if !cur.total.is_finite() {
        return Err(Error::Diverged("objective at the starting point is not finite".into()));
    }
    // `S` lives on the scale of ‖B‖ while `A` has unit-scale entries; the step on
    // `S` is scaled by ‖B‖² so that both move by comparable relative amounts.
    let precond = ctx.l * ctx.l;
    let sq_norm = |ev: &Evaluation| ev.grad_a.norm_squared() + precond * ev.grad_s.norm_squared();
    let mut step = 1.0 / sq_norm(&cur).sqrt().max(1e-300);
    let mut iterations = 0;
    for _ in 0..opts.iterations {
        let gnorm2 = sq_norm(&cur);
        if gnorm2 == 0.0 {
            break;
        }
        let mut accepted = None;
        for _ in 0..60 {
            let mut a_try = &a - &cur.grad_a * step;
            if opts.retract {
                a_try = stiefel_project(&a_try)?.0;
            }
            let s_try = (&s - &cur.grad_s * (step * precond)).map(|v| v.clamp(MIN_DIAGONAL, ctx.l));
            let ev = eval(&a_try, &s_try);
            if ev.total.is_nan() {
                return Err(Error::Diverged(format!(
                    "objective became NaN after {iterations} iterations; last finite value {}",
                    cur.total
                )));
            }
            if ev.total <= cur.total - 1e-4 * step * gnorm2 {
                accepted = Some((a_try, s_try, ev));
                break;
            }
            step *= 0.5;
        }
        let Some((a_new, s_new, ev)) = accepted else {
            break;
        };
        a = a_new;
        s = s_new;
        cur = ev;
        iterations += 1;
        step *= 2.0;
    }
    Ok((a, s, iterations))
}

/// Lowers each `S_i` in turn to the smallest value that keeps `R ⪰ 0` with the
/// other entries fixed, keeping the change when the objective does not increase.
/// `A` must be orthogonal and `R` positive semidefinite on entry. Returns the final
/// objective.
fn tighten_diagonal(
    data: &FitData,
    a: &DMatrix<f64>,
    s: &mut DVector<f64>,
    b: &DMatrix<f64>,
    lambda: f64,
    l: f64,
) -> f64 {
    let m = s.len();
    // R = Aᵀ(S − M)A with M = ABAᵀ, so R ⪰ 0 iff S − M ⪰ 0.
    let mm = linalg::symmetrize(&(a * b * a.transpose()));
    let mut best = data_objective(data, a, s, b, lambda);
    for _ in 0..TIGHTEN_SWEEPS {
        let mut changed = false;
        for i in 0..m {
            let others: Vec<usize> = (0..m).filter(|&j| j != i).collect();
            let k = DMatrix::from_fn(m - 1, m - 1, |r, c| {
                let (jr, jc) = (others[r], others[c]);
                if jr == jc {
                    s[jr] - mm[(jr, jc)]
                } else {
                    -mm[(jr, jc)]
                }
            });
            let q = DVector::from_fn(m - 1, |r, _| mm[(others[r], i)]);
            // Schur complement: S_i − M_ii − qᵀK⁺q ≥ 0.
            let floor = mm[(i, i)] + q.dot(&(linalg::pinv(&k, 1e-10) * &q)) + 1e-12 * l;
            if !(floor < s[i]) || floor <= 0.0 {
                continue;
            }
            let old = s[i];
            s[i] = floor;
            let value = data_objective(data, a, s, b, lambda);
            if value <= best {
                best = value;
                changed = true;
            } else {
                s[i] = old;
            }
        }
        if !changed {
            break;
        }
    }
    best
}

const TIGHTEN_SWEEPS: usize = 3;

fn d_scale(d: &FitData) -> f64 {
    d.e.norm_squared() / d.len()
}

/// Value of the fit objective for an arbitrary factorization, for diagnostics.
pub fn fit_objective(samples: &[FitSample], b: &DMatrix<f64>, lambda: f64, f: &Factorization) -> Result<f64> {
    let data = FitData::new(samples, b)?;
    check_dim("fit objective factorization", b.nrows(), f.m())?;
    Ok(data_objective(&data, &f.a, &f.s, b, lambda))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::build_problem;
    use crate::solvers::{ista_step, solve_reference};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
    }

    fn rot2(angle: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[angle.cos(), -angle.sin(), angle.sin(), angle.cos()])
    }

    fn signed_perm(m: usize) -> DMatrix<f64> {
        let mut p = DMatrix::zeros(m, m);
        for i in 0..m {
            p[(i, (i * 3 + 1) % m)] = if i % 2 == 0 { 1.0 } else { -1.0 };
        }
        p
    }

    fn problem(n: usize, m: usize, seed: u64) -> Problem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = randn(&mut rng, n, m);
        let x = DVector::from_fn(n, |_, _| 3.0 * rng.sample::<f64, _>(StandardNormal));
        build_problem(&d, &x, 0.1).unwrap()
    }

    #[test]
    fn delta_examples() {
        let z = DVector::from_vec(vec![0.3, -2.0, 0.0, 1.0, 5.0]);
        assert_eq!(delta_a(&DMatrix::identity(5, 5), &z, 0.7), 0.0);
        assert_relative_eq!(delta_a(&signed_perm(5), &z, 0.7), 0.0, epsilon = 1e-15);
        let v = delta_a(
            &rot2(std::f64::consts::FRAC_PI_4),
            &DVector::from_vec(vec![1.0, 0.0]),
            0.1,
        );
        assert_relative_eq!(v, 0.1 * (2f64.sqrt() - 1.0), epsilon = 1e-15);
        assert_relative_eq!(v, 0.041_421_4, epsilon = 1e-7);
    }

    #[test]
    fn delta_subgradient_examples_and_fd() {
        let z = DVector::from_vec(vec![0.3, -2.0, 0.5]);
        assert_eq!(delta_subgradient(&DMatrix::identity(3, 3), &z, 0.5), DVector::zeros(3));
        let a = rot2(0.3);
        assert_eq!(delta_subgradient(&a, &DVector::zeros(2), 0.5), DVector::zeros(2));

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut tested = 0;
        while tested < 50 {
            let a = stiefel_project(&randn(&mut rng, 6, 6)).unwrap().0;
            let z = DVector::from_fn(6, |_, _| rng.sample::<f64, _>(StandardNormal));
            let az = &a * &z;
            if z.iter().chain(az.iter()).any(|v| v.abs() < 1e-3) {
                continue;
            }
            tested += 1;
            let g = delta_subgradient(&a, &z, 0.4);
            let h = 1e-6;
            for i in 0..6 {
                let mut zp = z.clone();
                zp[i] += h;
                let mut zm = z.clone();
                zm[i] -= h;
                let fd = (delta_a(&a, &zp, 0.4) - delta_a(&a, &zm, 0.4)) / (2.0 * h);
                assert!((fd - g[i]).abs() <= 1e-6 * g[i].abs().max(1.0), "{fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn lipschitz_examples() {
        let z = DVector::from_vec(vec![1.0, 0.0, -2.0, 0.0, 0.5]);
        let est = lipschitz_estimate(&DMatrix::identity(5, 5), &z, 0.1);
        assert_eq!(est.local, 0.0);
        let mut a = DMatrix::identity(4, 4);
        a[(1, 0)] = 1.0;
        let z = DVector::from_vec(vec![1.0, 0.0, 2.0, 3.0]);
        let est = lipschitz_estimate(&a, &z, 0.1);
        assert_relative_eq!(est.upper, 0.1 * (3f64.sqrt() + 2.0), epsilon = 1e-15);
        assert_relative_eq!(est.upper, 0.3732, epsilon = 1e-4);
    }

    #[test]
    fn lipschitz_local_bounds_difference_quotients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut done = 0;
        while done < 20 {
            let a = stiefel_project(&(DMatrix::identity(5, 5) + randn(&mut rng, 5, 5) * 0.3))
                .unwrap()
                .0;
            let z = DVector::from_fn(5, |_, _| rng.sample::<f64, _>(StandardNormal));
            let az = &a * &z;
            if z.iter().chain(az.iter()).any(|v| v.abs() < 0.05) {
                continue;
            }
            done += 1;
            let local = lipschitz_estimate(&a, &z, 0.2).local;
            for _ in 0..200 {
                let dir = DVector::from_fn(5, |_, _| rng.sample::<f64, _>(StandardNormal));
                let r = 1e-3 * rng.random::<f64>();
                let zp = &z + dir.normalize() * r;
                let q = (delta_a(&a, &z, 0.2) - delta_a(&a, &zp, 0.2)).abs() / (&z - &zp).norm();
                assert!(q <= local + 1e-6, "{q} > {local}");
            }
        }
    }

    #[test]
    fn residual_examples() {
        let b = DMatrix::identity(3, 3);
        let f = Factorization::scaled_identity(3, 2.0);
        let r = residual(&f, &b).unwrap();
        assert!((r.r - DMatrix::<f64>::identity(3, 3)).amax() < 1e-15);
        assert_relative_eq!(r.min_eig, 1.0, epsilon = 1e-12);
        assert_relative_eq!(r.spec_norm, 1.0, epsilon = 1e-12);

        let p = problem(6, 10, 3);
        let eig = nalgebra::SymmetricEigen::new(p.b().clone());
        let f = Factorization::new(eig.eigenvectors.transpose(), eig.eigenvalues.clone()).unwrap();
        let r = residual(&f, p.b()).unwrap();
        assert!(r.spec_norm <= 1e-10, "{}", r.spec_norm);

        let f = Factorization::scaled_identity(10, p.l());
        let r = residual(&f, p.b()).unwrap();
        assert!(r.min_eig >= -1e-9);
        assert!(residual(&Factorization::scaled_identity(3, 1.0), p.b()).is_err());
    }

    #[test]
    fn rotated_step_reduces_to_ista() {
        let p = problem(6, 10, 4);
        let f = Factorization::scaled_identity(10, p.l());
        let mut z = DVector::zeros(10);
        for _ in 0..20 {
            let r = rotated_prox_step(&p, &f, &z).unwrap();
            let i = ista_step(&p, &z).unwrap();
            assert_eq!(r, i);
            z = i;
        }
        let sp = Factorization::new(signed_perm(10), DVector::from_element(10, p.l())).unwrap();
        let z = DVector::from_fn(10, |i, _| (i as f64 * 0.7).sin());
        let r = rotated_prox_step(&p, &sp, &z).unwrap();
        let i = ista_step(&p, &z).unwrap();
        assert!((r - i).amax() <= 1e-14);
    }

    #[test]
    fn rotated_step_rejects_nonpositive_diagonal() {
        let p = problem(3, 4, 5);
        let mut s = DVector::from_element(4, 1.0);
        s[2] = 0.0;
        let f = Factorization::new(DMatrix::identity(4, 4), s).unwrap();
        assert!(!f.is_valid());
        assert!(rotated_prox_step(&p, &f, &DVector::zeros(4)).is_err());
    }

    #[test]
    fn rotated_step_minimizes_surrogate_on_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..5 {
            let d = randn(&mut rng, 2, 2);
            let x = DVector::from_fn(2, |_, _| rng.sample::<f64, _>(StandardNormal));
            let p = build_problem(&d, &x, 0.3).unwrap();
            let a = rot2(rng.random::<f64>() * 6.0);
            let s = DVector::from_fn(2, |_, _| p.l() * (1.0 + rng.random::<f64>()));
            let f = Factorization::new(a.clone(), s.clone()).unwrap();
            let zk = DVector::from_fn(2, |_, _| rng.sample::<f64, _>(StandardNormal));
            let g = p.smooth_grad(&zk);
            let ata = a.transpose() * DMatrix::from_diagonal(&s) * &a;
            let surrogate = |z: &DVector<f64>| {
                let dz = z - &zk;
                g.dot(&dz) + 0.5 * dz.dot(&(&ata * &dz)) + p.lambda() * linalg::l1(&(&a * z))
            };
            let step = rotated_prox_step(&p, &f, &zk).unwrap();
            let fs = surrogate(&step);
            let h = 0.01;
            let mut best = f64::INFINITY;
            let mut best_z = step.clone();
            for i in -400..=400 {
                for j in -400..=400 {
                    let z = DVector::from_vec(vec![step[0] + i as f64 * h, step[1] + j as f64 * h]);
                    let v = surrogate(&z);
                    if v < best {
                        best = v;
                        best_z = z;
                    }
                }
            }
            assert!(fs <= best + 1e-12, "{fs} > {best}");
            assert!((best_z - &step).amax() <= h);
        }
    }

    #[test]
    fn stiefel_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let q = stiefel_project(&randn(&mut rng, 5, 5)).unwrap().0;
        assert!(unitarity_defect(&q) <= 1e-10);
        let q2 = stiefel_project(&q).unwrap().0;
        assert!((&q2 - &q).amax() <= 1e-12);
        let (id, flag) = stiefel_project(&(DMatrix::identity(4, 4) * 2.0)).unwrap();
        assert!(!flag);
        assert!((id - DMatrix::<f64>::identity(4, 4)).amax() <= 1e-12);
        let (_, flag) = stiefel_project(&DMatrix::from_element(3, 3, 1.0)).unwrap();
        assert!(flag);
        assert!(stiefel_project(&DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn stiefel_is_closest_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = randn(&mut rng, 4, 4);
        let q = stiefel_project(&a).unwrap().0;
        let d0 = (&a - &q).norm();
        for _ in 0..1000 {
            let other = stiefel_project(&randn(&mut rng, 4, 4)).unwrap().0;
            assert!(d0 <= (&a - other).norm() + 1e-12);
        }
    }

    #[test]
    fn acceleration_examples() {
        let x = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let p = build_problem(&DMatrix::identity(3, 3), &x, 0.1).unwrap();
        let r = solve_reference(&p, 1e-12, 100).unwrap();
        let f = Factorization::scaled_identity(3, 1.0);
        let z0 = DVector::zeros(3);
        let z1 = rotated_prox_step(&p, &f, &z0).unwrap();
        let m = acceleration_condition(&p, &f, &z0, &z1, &r).unwrap();
        assert_relative_eq!(m.margin, 0.5, epsilon = 1e-12);
        assert!(m.satisfied);
        assert!(matches!(
            acceleration_condition(&p, &f, &r.z_star, &z1, &r),
            Err(Error::ZeroDistance)
        ));
    }

    #[test]
    fn acceleration_well_conditioned_ista() {
        // Eigenvalues in (L/2, L]: the ISTA residual is smaller than ‖B‖/2.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let q = stiefel_project(&randn(&mut rng, 4, 4)).unwrap().0;
        let evals = DVector::from_vec(vec![1.0, 0.9, 0.8, 0.7]);
        let b = q.transpose() * DMatrix::from_diagonal(&evals) * &q;
        let d = nalgebra::Cholesky::new(b).unwrap().l().transpose();
        let x = DVector::from_vec(vec![3.0, -1.0, 2.0, 0.5]);
        let p = build_problem(&d, &x, 0.05).unwrap();
        let r = solve_reference(&p, 1e-12, 10_000).unwrap();
        let f = Factorization::scaled_identity(4, p.l());
        let z0 = DVector::zeros(4);
        let z1 = rotated_prox_step(&p, &f, &z0).unwrap();
        let m = acceleration_condition(&p, &f, &z0, &z1, &r).unwrap();
        assert!(m.satisfied, "margin {}", m.margin);
    }

    #[test]
    fn certified_subgradient_vanishes_for_identity() {
        let p = problem(6, 10, 10);
        let f = Factorization::scaled_identity(10, p.l());
        let step = rotated_step_parts(&p, &f, &DVector::zeros(10)).unwrap();
        assert_eq!(certified_delta_subgradient(&f, &step, p.lambda()), DVector::zeros(10));
    }

    #[test]
    fn batched_layer_matches_single_step() {
        let p = problem(5, 8, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = stiefel_project(&randn(&mut rng, 8, 8)).unwrap().0;
        let s = DVector::from_fn(8, |_, _| p.l() * (1.0 + rng.random::<f64>()));
        let f = Factorization::new(a.clone(), s.clone()).unwrap();
        let z = randn(&mut rng, 8, 3);
        let dtx = DMatrix::from_columns(&[p.dtx().clone(), p.dtx().clone(), p.dtx().clone()]);
        let (out, _) = rotated_layer_forward(&a, &s, p.b(), &dtx, p.lambda(), &z);
        for j in 0..3 {
            let single = rotated_prox_step(&p, &f, &z.column(j).into_owned()).unwrap();
            assert!((out.column(j) - single).amax() <= 1e-12);
        }
    }
    #[test]
    fn commutation_error_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let lambda = 0.3;
        for i in 0..1000 {
            let m = 2 + i % 9;
            let spread = [0.01, 0.1, 1.0][i % 3];
            let a = stiefel_project(&(DMatrix::identity(m, m) + randn(&mut rng, m, m) * spread))
                .unwrap()
                .0;
            let z = DVector::from_fn(m, |_, _| {
                if rng.random::<f64>() < 0.4 {
                    rng.sample::<f64, _>(StandardNormal)
                } else {
                    0.0
                }
            });
            let nnz = count_nonzero(&(&a * &z), SPARSITY_TOL).max(count_nonzero(&z, SPARSITY_TOL));
            let dist = linalg::spectral_norm(&(&a - DMatrix::identity(m, m)));
            let rhs = lambda * (2.0 * nnz as f64).sqrt() * dist * z.norm();
            assert!(delta_a(&a, &z, lambda).abs() <= rhs + 1e-9);
        }
    }

    fn fit_dataset(p: &Problem, codes: &DMatrix<f64>) -> Vec<FitSample> {
        let d = p.d();
        let m = p.m();
        (0..codes.ncols())
            .map(|j| {
                let x = d * codes.column(j);
                let q = build_problem(d, &x, p.lambda()).unwrap();
                let r = solve_reference(&q, 1e-10, 100_000).unwrap();
                FitSample {
                    dtx: q.dtx().clone(),
                    z0: DVector::zeros(m),
                    z_star: r.z_star,
                }
            })
            .collect()
    }

    #[test]
    fn fit_on_diagonal_gram_reaches_exact_factorization() {
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.5, 1.0, 0.5]));
        let b = d.transpose() * &d;
        let x = DVector::from_element(4, 1.0);
        let p = build_problem(&d, &x, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let codes = randn(&mut rng, 4, 30);
        let data = fit_dataset(&p, &codes);
        let fit = fit_factorization(&data, &b, 0.1, &FitOptions::default()).unwrap();
        let exact = Factorization::new(DMatrix::identity(4, 4), b.diagonal()).unwrap();
        let best = fit_objective(&data, &b, 0.1, &exact).unwrap();
        assert!(fit.objective <= best + 1e-6, "{} vs {}", fit.objective, best);
        assert!(fit.objective <= fit.init_objective);
    }

    #[test]
    fn fit_beats_ista_residual_on_gaussian_dictionary() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let mut d = randn(&mut rng, 8, 16);
        for mut c in d.column_iter_mut() {
            c.normalize_mut();
        }
        let p = build_problem(&d, &DVector::zeros(8), 0.05).unwrap();
        let codes = DMatrix::from_fn(16, 60, |_, _| {
            if rng.random::<f64>() < 0.3 {
                rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            }
        });
        let data = fit_dataset(&p, &codes);
        let opts = FitOptions {
            iterations: 200,
            ..FitOptions::default()
        };
        let fit = fit_factorization(&data, p.b(), p.lambda(), &opts).unwrap();
        assert!(fit.objective <= fit.init_objective);
        assert!(fit.objective < fit.init_objective);
        let fitted = residual(&fit.factorization, p.b()).unwrap();
        let ista = residual(&Factorization::scaled_identity(16, p.l()), p.b()).unwrap();
        assert!(
            fitted.spec_norm < ista.spec_norm,
            "{} vs {}",
            fitted.spec_norm,
            ista.spec_norm
        );
        assert!(fitted.min_eig >= -1e-8 * p.l());
        assert!(fit.factorization.unitarity_defect() <= 1e-10);
    }

    #[test]
    fn fit_rejects_empty_dataset() {
        assert!(fit_factorization(&[], &DMatrix::identity(2, 2), 0.1, &FitOptions::default()).is_err());
    }

    #[test]
    fn rotated_layer_gradients_match_finite_differences() {
        let p = problem(5, 6, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let a = stiefel_project(&(DMatrix::identity(6, 6) + randn(&mut rng, 6, 6) * 0.2))
            .unwrap()
            .0;
        let s = DVector::from_fn(6, |_, _| p.l() * (1.0 + rng.random::<f64>()));
        let z = randn(&mut rng, 6, 4);
        let dtx = randn(&mut rng, 6, 4) * 3.0;
        let w = randn(&mut rng, 6, 4);
        let lambda = p.lambda();
        let loss = |a: &DMatrix<f64>, s: &DVector<f64>, z: &DMatrix<f64>| {
            rotated_layer_forward(a, s, p.b(), &dtx, lambda, z)
                .0
                .component_mul(&w)
                .sum()
        };
        let (_, cache) = rotated_layer_forward(&a, &s, p.b(), &dtx, lambda, &z);
        let (ga, gs, gz) = rotated_layer_backward(&a, &s, p.b(), lambda, &cache, &w);
        let h = 1e-6;
        let check = |analytic: f64, plus: f64, minus: f64| {
            let fd = (plus - minus) / (2.0 * h);
            assert!(
                (fd - analytic).abs() <= 1e-5 * analytic.abs().max(1.0),
                "{fd} vs {analytic}"
            );
        };
        for idx in 0..36 {
            let mut ap = a.clone();
            ap[idx] += h;
            let mut am = a.clone();
            am[idx] -= h;
            check(ga[idx], loss(&ap, &s, &z), loss(&am, &s, &z));
        }
        for i in 0..6 {
            let mut sp = s.clone();
            sp[i] += h;
            let mut sm = s.clone();
            sm[i] -= h;
            check(gs[i], loss(&a, &sp, &z), loss(&a, &sm, &z));
        }
        for idx in 0..24 {
            let mut zp = z.clone();
            zp[idx] += h;
            let mut zm = z.clone();
            zm[idx] -= h;
            check(gz[idx], loss(&a, &s, &zp), loss(&a, &s, &zm));
        }
    }
}
