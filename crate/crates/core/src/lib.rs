//! Sparse coding with classical proximal solvers and their unrolled, trainable
//! counterparts.
//!
//! The crate covers the LASSO problem `min_z ½‖x − Dz‖² + λ‖z‖₁`:
//!
//! * [`problem`] and [`generate`]: problem instances, costs and synthetic
//!   Gaussian / partial-Fourier dictionaries with Bernoulli-Gaussian codes.
//! * [`solvers`]: ISTA, FISTA and a duality-gap certified reference solver.
//! * [`factorization`] and [`bounds`]: rotated proximal steps built from a
//!   factorization `B ≈ AᵀSA` of the Gram matrix, the commutation error
//!   `δ_A(z) = λ(‖Az‖₁ − ‖z‖₁)` and evaluators for the resulting convergence bounds.
//! * [`nets`] and [`training`]: LISTA, LFISTA, FacNet and a linear warm-start model
//!   with hand-written reverse-mode gradients, trained with Adagrad.
//! * [`harness`]: seeded experiments producing CSV tables, SVG charts and
//!   factorization diagnostics.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod error;
pub mod factorization;
pub mod generate;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod nets;
pub mod problem;
pub mod rng;
pub mod solvers;
pub mod training;

pub use error::{Error, Result};
