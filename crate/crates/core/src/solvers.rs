//! ISTA, FISTA and the certified reference solver.

use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::problem::{duality_gap, shrink, Gram, Problem};

/// One proximal-gradient step from `y`: `h_{λ/L}(y − (By − Dᵀx)/L)`.
///
/// Written so that the rotated step with `A = I, S = L` performs the same
/// floating-point operations.
pub fn prox_grad(p: &Problem, y: &DVector<f64>) -> DVector<f64> {
    let l = p.l();
    let grad = p.smooth_grad(y);
    let theta = p.lambda() / l;
    DVector::from_iterator(
        y.len(),
        y.iter().zip(grad.iter()).map(|(&yi, &gi)| shrink(yi - gi / l, theta)),
    )
}

pub fn ista_step(p: &Problem, z: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim("ista_step code", p.m(), z.len())?;
    Ok(prox_grad(p, z))
}

/// Momentum scalar recurrence `t' = (1 + √(1 + 4t²)) / 2`.
pub fn next_t(t: f64) -> f64 {
    (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0
}

/// FISTA iterate. A fresh state has `t_prev = t = 1`, so the first step carries no
/// momentum.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub z: DVector<f64>,
    pub z_prev: DVector<f64>,
    pub t_prev: f64,
    pub t: f64,
    pub k: usize,
}

impl SolverState {
    pub fn new(z0: DVector<f64>) -> Self {
        Self {
            z_prev: z0.clone(),
            z: z0,
            t_prev: 1.0,
            t: 1.0,
            k: 0,
        }
    }

    pub fn momentum(&self) -> f64 {
        (self.t_prev - 1.0) / self.t
    }
}

pub fn fista_step(p: &Problem, st: &SolverState) -> Result<SolverState> {
    fista_step_with(p, st, true)
}

/// FISTA step; with `momentum = false` the extrapolation coefficient is forced to zero
/// and the step reduces to ISTA.
pub fn fista_step_with(p: &Problem, st: &SolverState, momentum: bool) -> Result<SolverState> {
    check_dim("fista_step code", p.m(), st.z.len())?;
    check_dim("fista_step previous code", p.m(), st.z_prev.len())?;
    let coef = if momentum { st.momentum() } else { 0.0 };
    let y = &st.z + (&st.z - &st.z_prev) * coef;
    let z = prox_grad(p, &y);
    Ok(SolverState {
        z_prev: st.z.clone(),
        z,
        t_prev: st.t,
        t: next_t(st.t),
        k: st.k + 1,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSolution {
    pub z_star: DVector<f64>,
    pub f_star: f64,
    pub gap: f64,
    pub iterations: usize,
    pub certified: bool,
}

/// FISTA from zero with function-value restarts, stopped once the duality gap of the
/// best iterate drops below `tol`. Returns the lowest-cost iterate seen; it is flagged
/// uncertified when `max_iter` runs out first.
pub fn solve_reference(p: &Problem, tol: f64, max_iter: usize) -> Result<ReferenceSolution> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let mut st = SolverState::new(DVector::zeros(p.m()));
    let mut f_cur = p.cost(&st.z);
    let mut best = st.z.clone();
    let mut f_best = f_cur;
    let mut gap = duality_gap(p, &best);
    let mut checked_best = true;
    let mut it = 0;
    while gap > tol && it < max_iter {
        let next = fista_step(p, &st)?;
        it += 1;
        let f_next = p.cost(&next.z);
        if f_next > f_cur && st.momentum() != 0.0 {
            // Restart: drop momentum and take a plain step from the current iterate.
            st = SolverState {
                z_prev: st.z.clone(),
                z: st.z.clone(),
                t_prev: 1.0,
                t: 1.0,
                k: st.k,
            };
            continue;
        }
        st = next;
        f_cur = f_next;
        if f_cur < f_best {
            f_best = f_cur;
            best.copy_from(&st.z);
            checked_best = false;
        }
        if !checked_best && (it <= 16 || it % 8 == 0) {
            gap = duality_gap(p, &best);
            checked_best = true;
            if gap > tol {
                if let Some((z, g)) = polish(p, &best).filter(|(_, g)| *g < gap) {
                    best = z;
                    f_best = p.cost(&best);
                    gap = g;
                }
            }
        }
    }
    if !checked_best {
        gap = duality_gap(p, &best);
    }
    Ok(ReferenceSolution {
        f_star: p.cost(&best),
        z_star: best,
        gap,
        iterations: it,
        certified: gap <= tol,
    })
}

/// Solves the optimality conditions on the support and signs of `z`:
/// `D_Sᵀ D_S z_S = D_Sᵀx − λ sign(z_S)`, taking the solution closest to `z`. First-order
/// iterates stall at a duality gap of order `√ε`, because the cost they minimize is
/// flat to rounding near the optimum; this recovers the last digits once the support
/// is right. The pseudo-inverse handles supports with linearly dependent atoms.
fn polish(p: &Problem, z: &DVector<f64>) -> Option<(DVector<f64>, f64)> {
    let support: Vec<usize> = (0..z.len()).filter(|&i| z[i] != 0.0).collect();
    if support.is_empty() {
        return None;
    }
    let ds = p.d().select_columns(&support);
    let g = ds.tr_mul(&ds);
    let z_s = DVector::from_iterator(support.len(), support.iter().map(|&i| z[i]));
    let rhs = DVector::from_iterator(
        support.len(),
        support.iter().map(|&i| p.dtx()[i] - p.lambda() * z[i].signum()),
    );
    let svd = g.clone().svd(true, true);
    let cutoff = 1e-12 * svd.singular_values.max();
    let mut sol = z_s;
    // Two rounds of refinement; the second removes the error of the first solve.
    for _ in 0..2 {
        let correction = svd.solve(&(&rhs - &g * &sol), cutoff).ok()?;
        sol += correction;
    }
    let mut out = DVector::zeros(z.len());
    for (k, &i) in support.iter().enumerate() {
        out[i] = sol[k];
    }
    let gap = duality_gap(p, &out);
    gap.is_finite().then_some((out, gap))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Ista,
    Fista,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub k: usize,
    pub f: f64,
    pub f_gap: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConvergenceTrace {
    pub records: Vec<TraceRecord>,
}

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

impl ConvergenceTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,f,f_gap,wall_ms\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                r.k,
                fmt_f64(r.f),
                fmt_f64(r.f_gap),
                fmt_f64(r.wall_ms)
            );
        }
        out
    }
}

pub fn run_solver(
    p: &Problem,
    kind: SolverKind,
    k_max: usize,
    z0: &DVector<f64>,
    reference: &ReferenceSolution,
) -> Result<ConvergenceTrace> {
    if !reference.certified {
        return Err(Error::InvalidArgument("reference solution is not certified".into()));
    }
    check_dim("run_solver start", p.m(), z0.len())?;
    let start = Instant::now();
    let mut trace = ConvergenceTrace::default();
    let push = |k: usize, z: &DVector<f64>, trace: &mut ConvergenceTrace| {
        let f = p.cost(z);
        trace.records.push(TraceRecord {
            k,
            f,
            f_gap: f - reference.f_star,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
    };
    let mut st = SolverState::new(z0.clone());
    push(0, &st.z, &mut trace);
    for k in 1..=k_max {
        st = match kind {
            SolverKind::Ista => SolverState {
                z_prev: st.z.clone(),
                z: prox_grad(p, &st.z),
                t_prev: st.t,
                t: next_t(st.t),
                k,
            },
            SolverKind::Fista => fista_step(p, &st)?,
        };
        push(k, &st.z, &mut trace);
    }
    Ok(trace)
}

/// Column-wise soft threshold with a per-row level.
pub(crate) fn shrink_rows(u: &mut DMatrix<f64>, theta: &[f64]) {
    let m = u.nrows();
    for (idx, v) in u.iter_mut().enumerate() {
        *v = shrink(*v, theta[idx % m]);
    }
}

/// ISTA or FISTA run on every column of `z0` at once; `dtx` holds `Dᵀx` per column.
/// Returns the iterates `z_0 … z_{k_max}`.
pub fn run_batch(
    gram: &Gram,
    lambda: f64,
    kind: SolverKind,
    dtx: &DMatrix<f64>,
    z0: &DMatrix<f64>,
    k_max: usize,
) -> Vec<DMatrix<f64>> {
    let l = gram.l();
    let theta = vec![lambda / l; gram.m()];
    let mut out = Vec::with_capacity(k_max + 1);
    out.push(z0.clone());
    let mut z = z0.clone();
    let mut z_prev = z0.clone();
    let (mut t_prev, mut t) = (1.0, 1.0);
    for _ in 0..k_max {
        let y = match kind {
            SolverKind::Ista => z.clone(),
            SolverKind::Fista => {
                let coef = (t_prev - 1.0) / t;
                &z + (&z - &z_prev) * coef
            }
        };
        let grad = gram.b() * &y - dtx;
        let mut u = y - grad / l;
        shrink_rows(&mut u, &theta);
        z_prev = std::mem::replace(&mut z, u);
        t_prev = t;
        t = next_t(t);
        out.push(z.clone());
    }
    out
}
