//! Python bindings. Matrices cross the boundary as row-major lists of rows and
//! vectors as flat lists.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use sparse_accel::generate::{gen_dictionary, sample_codes, DictKind, GeneratorConfig};
use sparse_accel::problem::{Gram, Problem};
use sparse_accel::rng::Stream;
use sparse_accel::solvers::{fista_step, ista_step, SolverState};

fn py_err(e: sparse_accel::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(PyValueError::new_err(
            "matrix must be a non-empty list of equal-length rows",
        ));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn from_matrix(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn problem(d: Vec<Vec<f64>>, x: Vec<f64>, lam: f64) -> PyResult<Problem> {
    let gram = Arc::new(Gram::new(to_matrix(&d)?).map_err(py_err)?);
    Problem::with_gram(gram, DVector::from_vec(x), lam).map_err(py_err)
}

fn generator(n: usize, m: usize, seed: u64, kind: &str) -> PyResult<GeneratorConfig> {
    let kind =
        DictKind::parse(kind).ok_or_else(|| PyValueError::new_err(format!("unknown dictionary kind `{kind}`")))?;
    let mut cfg = GeneratorConfig::gaussian(n, m, seed);
    cfg.dict_kind = kind;
    cfg.validate().map_err(py_err)?;
    Ok(cfg)
}

/// Seeded dictionary with unit-norm columns, as an `n × m` list of rows.
#[pyfunction]
#[pyo3(signature = (n, m, seed, kind = "gaussian"))]
fn dictionary(n: usize, m: usize, seed: u64, kind: &str) -> PyResult<Vec<Vec<f64>>> {
    let dict = gen_dictionary(&generator(n, m, seed, kind)?).map_err(py_err)?;
    Ok(from_matrix(&dict.d))
}

/// `count` test signals drawn for the dictionary of `seed`, one list per signal.
#[pyfunction]
#[pyo3(signature = (n, m, seed, count, kind = "gaussian"))]
fn signals(n: usize, m: usize, seed: u64, count: usize, kind: &str) -> PyResult<Vec<Vec<f64>>> {
    let cfg = generator(n, m, seed, kind)?;
    let dict = gen_dictionary(&cfg).map_err(py_err)?;
    let batch = sample_codes(&cfg, &dict.d, count, seed, Stream::Test).map_err(py_err)?;
    Ok(from_matrix(&batch.signals.transpose()))
}

/// LASSO objective `½‖x − Dz‖² + λ‖z‖₁`.
#[pyfunction]
fn lasso_cost(d: Vec<Vec<f64>>, x: Vec<f64>, lam: f64, z: Vec<f64>) -> PyResult<f64> {
    let p = problem(d, x, lam)?;
    if z.len() != p.m() {
        return Err(PyValueError::new_err(format!(
            "code has length {}, expected {}",
            z.len(),
            p.m()
        )));
    }
    Ok(p.cost(&DVector::from_vec(z)))
}

/// Iterates `z_0 = 0, …, z_k` of ISTA.
#[pyfunction]
fn ista(d: Vec<Vec<f64>>, x: Vec<f64>, lam: f64, k: usize) -> PyResult<Vec<Vec<f64>>> {
    let p = problem(d, x, lam)?;
    let mut z = DVector::zeros(p.m());
    let mut out = vec![z.as_slice().to_vec()];
    for _ in 0..k {
        z = ista_step(&p, &z).map_err(py_err)?;
        out.push(z.as_slice().to_vec());
    }
    Ok(out)
}

/// Iterates `z_0 = 0, …, z_k` of FISTA.
#[pyfunction]
fn fista(d: Vec<Vec<f64>>, x: Vec<f64>, lam: f64, k: usize) -> PyResult<Vec<Vec<f64>>> {
    let p = problem(d, x, lam)?;
    let mut st = SolverState::new(DVector::zeros(p.m()));
    let mut out = vec![st.z.as_slice().to_vec()];
    for _ in 0..k {
        st = fista_step(&p, &st).map_err(py_err)?;
        out.push(st.z.as_slice().to_vec());
    }
    Ok(out)
}

/// Duality-gap certified minimizer: `(z_star, f_star, gap, certified)`.
#[pyfunction]
#[pyo3(signature = (d, x, lam, tol = 1e-10, max_iter = 200_000))]
fn solve_reference(
    d: Vec<Vec<f64>>,
    x: Vec<f64>,
    lam: f64,
    tol: f64,
    max_iter: usize,
) -> PyResult<(Vec<f64>, f64, f64, bool)> {
    let p = problem(d, x, lam)?;
    let r = sparse_accel::solvers::solve_reference(&p, tol, max_iter).map_err(py_err)?;
    Ok((r.z_star.as_slice().to_vec(), r.f_star, r.gap, r.certified))
}

#[pymodule]
fn sparse_accel_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(dictionary, m)?)?;
    m.add_function(wrap_pyfunction!(signals, m)?)?;
    m.add_function(wrap_pyfunction!(lasso_cost, m)?)?;
    m.add_function(wrap_pyfunction!(ista, m)?)?;
    m.add_function(wrap_pyfunction!(fista, m)?)?;
    m.add_function(wrap_pyfunction!(solve_reference, m)?)?;
    Ok(())
}
