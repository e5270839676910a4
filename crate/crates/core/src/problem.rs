//! LASSO problem representation and cost evaluation.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::linalg;

/// Dictionary-level quantities shared by every signal coded against the same `D`.
#[derive(Debug, Clone)]
pub struct Gram {
    d: DMatrix<f64>,
    dt: DMatrix<f64>,
    b: DMatrix<f64>,
    pinv: DMatrix<f64>,
    l: f64,
}

impl Gram {
    pub fn new(d: DMatrix<f64>) -> Result<Self> {
        if d.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dictionary".into()));
        }
        if d.ncols() == 0 || d.nrows() == 0 {
            return Err(Error::InvalidArgument("empty dictionary".into()));
        }
        let dt = d.transpose();
        let b = &dt * &d;
        let pinv = linalg::pinv(&d, linalg::PINV_RCOND);
        let l = linalg::power_iteration(&b, linalg::POWER_TOL, linalg::POWER_MAX_ITER).value;
        Ok(Self { d, dt, b, pinv, l })
    }

    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }
    pub fn dt(&self) -> &DMatrix<f64> {
        &self.dt
    }
    /// `DᵀD`.
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    /// `D†`.
    pub fn pinv(&self) -> &DMatrix<f64> {
        &self.pinv
    }
    /// Spectral norm of `B`.
    pub fn l(&self) -> f64 {
        self.l
    }
    pub fn n(&self) -> usize {
        self.d.nrows()
    }
    pub fn m(&self) -> usize {
        self.d.ncols()
    }
}

/// One sparse-coding instance: minimize `½‖x − Dz‖² + λ‖z‖₁`.
#[derive(Debug, Clone)]
pub struct Problem {
    gram: Arc<Gram>,
    x: DVector<f64>,
    lambda: f64,
    y: DVector<f64>,
    dtx: DVector<f64>,
}

impl Problem {
    pub fn with_gram(gram: Arc<Gram>, x: DVector<f64>, lambda: f64) -> Result<Self> {
        check_dim("signal", gram.n(), x.len())?;
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("signal".into()));
        }
        let y = gram.pinv() * &x;
        let dtx = gram.dt() * &x;
        Ok(Self {
            gram,
            x,
            lambda,
            y,
            dtx,
        })
    }

    pub fn gram(&self) -> &Arc<Gram> {
        &self.gram
    }
    pub fn d(&self) -> &DMatrix<f64> {
        self.gram.d()
    }
    pub fn b(&self) -> &DMatrix<f64> {
        self.gram.b()
    }
    pub fn l(&self) -> f64 {
        self.gram.l()
    }
    pub fn x(&self) -> &DVector<f64> {
        &self.x
    }
    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }
    pub fn dtx(&self) -> &DVector<f64> {
        &self.dtx
    }
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn n(&self) -> usize {
        self.gram.n()
    }
    pub fn m(&self) -> usize {
        self.gram.m()
    }

    /// Gradient of the smooth part, `Bz − Dᵀx`.
    pub fn smooth_grad(&self, z: &DVector<f64>) -> DVector<f64> {
        self.b() * z - &self.dtx
    }

    pub fn cost(&self, z: &DVector<f64>) -> f64 {
        let r = &self.x - self.d() * z;
        0.5 * r.norm_squared() + self.lambda * linalg::l1(z)
    }
}

/// Caches `B = DᵀD`, `y = D†x` and `L = ‖B‖` for a single signal.
pub fn build_problem(d: &DMatrix<f64>, x: &DVector<f64>, lambda: f64) -> Result<Problem> {
    let gram = Arc::new(Gram::new(d.clone())?);
    Problem::with_gram(gram, x.clone(), lambda)
}

/// Soft-threshold level: one scalar or one value per coordinate.
#[derive(Debug, Clone, Copy)]
pub enum Threshold<'a> {
    Scalar(f64),
    PerCoord(&'a [f64]),
}

#[inline]
pub fn shrink(u: f64, theta: f64) -> f64 {
    let a = u.abs() - theta;
    if a > 0.0 {
        a.copysign(u)
    } else {
        0.0
    }
}

/// `sign(u)·max(|u| − θ, 0)` coordinatewise.
pub fn soft_threshold(u: &DVector<f64>, theta: Threshold<'_>) -> Result<DVector<f64>> {
    match theta {
        Threshold::Scalar(t) => {
            if !(t >= 0.0) {
                return Err(Error::InvalidArgument(format!("negative threshold {t}")));
            }
            Ok(u.map(|v| shrink(v, t)))
        }
        Threshold::PerCoord(ts) => {
            check_dim("threshold", u.len(), ts.len())?;
            if let Some(t) = ts.iter().find(|t| !(**t >= 0.0)) {
                return Err(Error::InvalidArgument(format!("negative threshold {t}")));
            }
            Ok(DVector::from_iterator(
                u.len(),
                u.iter().zip(ts).map(|(&v, &t)| shrink(v, t)),
            ))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cost {
    /// `E + G`.
    pub f: f64,
    /// `½‖x − Dz‖²`.
    pub e: f64,
    /// `λ‖z‖₁`.
    pub g: f64,
    /// `½(y − z)ᵀB(y − z)`, which differs from `e` by `½‖x − DD†x‖²`.
    pub e_gram: f64,
}

pub fn lasso_cost(p: &Problem, z: &DVector<f64>) -> Result<Cost> {
    check_dim("code", p.m(), z.len())?;
    let r = p.x() - p.d() * z;
    let e = 0.5 * r.norm_squared();
    let g = p.lambda() * linalg::l1(z);
    let dy = p.y() - z;
    let e_gram = 0.5 * dy.dot(&(p.b() * &dy));
    Ok(Cost { f: e + g, e, g, e_gram })
}

/// Quadratic metric for [`quad_form`].
#[derive(Debug, Clone, Copy)]
pub enum Metric<'a> {
    Full(&'a DMatrix<f64>),
    Diag(&'a DVector<f64>),
}

/// `½(v − w)ᵀM(v − w) + λ‖v‖₁`.
pub fn quad_form(m: Metric<'_>, v: &DVector<f64>, w: &DVector<f64>, lambda: f64) -> Result<f64> {
    check_dim("quad_form operands", v.len(), w.len())?;
    let d = v - w;
    let quad = match m {
        Metric::Full(mat) => {
            check_dim("quad_form metric", v.len(), mat.nrows())?;
            check_dim("quad_form metric", v.len(), mat.ncols())?;
            d.dot(&(mat * &d))
        }
        Metric::Diag(s) => {
            check_dim("quad_form metric", v.len(), s.len())?;
            d.iter().zip(s.iter()).map(|(a, s)| s * a * a).sum()
        }
    };
    Ok(0.5 * quad + lambda * linalg::l1(v))
}

/// Duality gap of `z` using the rescaled residual as dual point.
pub fn duality_gap(p: &Problem, z: &DVector<f64>) -> f64 {
    raw_duality_gap(p, z).max(0.0)
}

/// Primal minus dual value without clamping rounding noise at zero.
pub(crate) fn raw_duality_gap(p: &Problem, z: &DVector<f64>) -> f64 {
    let r = p.x() - p.d() * z;
    let primal = 0.5 * r.norm_squared() + p.lambda() * linalg::l1(z);
    let corr = p.gram.dt() * &r;
    let inf = corr.amax();
    let c = if inf > p.lambda() { p.lambda() / inf } else { 1.0 };
    let nu = r * c;
    let dual = 0.5 * p.x().norm_squared() - 0.5 * (p.x() - nu).norm_squared();
    primal - dual
}
