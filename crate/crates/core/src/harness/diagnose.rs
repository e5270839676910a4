//! Per-layer factorization diagnostics of a trained FacNet.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::config::ExperimentConfig;
use super::experiment::TestSet;
use crate::error::{Error, Result};
use crate::factorization::{acceleration_condition, delta_a, residual, Factorization};
use crate::nets::{facnet_forward, load_checkpoint, FacnetParams, NetParams};
use crate::solvers::fmt_f64;

pub const DIAGNOSE_CSV_HEADER: &str = "layer,residual_norm,residual_min_eig,unitarity_defect,a_minus_identity,mean_delta,mean_margin,fraction_accelerating,samples";

#[derive(Debug, Clone, PartialEq)]
pub struct LayerDiagnostics {
    pub layer: usize,
    /// `‖A_kᵀS_kA_k − B‖₂`.
    pub residual_norm: f64,
    pub residual_min_eig: f64,
    /// `‖I − A_kᵀA_k‖_F`.
    pub unitarity_defect: f64,
    /// `‖A_k − I‖_F`.
    pub a_minus_identity: f64,
    /// Mean of `δ_{A_k}(z*)` over the test set.
    pub mean_delta: f64,
    /// Mean acceleration margin along the network trajectories at this layer.
    pub mean_margin: f64,
    pub fraction_accelerating: f64,
    /// Test samples entering the margin statistics (those with `z_k ≠ z*`).
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnoseReport {
    pub layers: Vec<LayerDiagnostics>,
}

impl DiagnoseReport {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{DIAGNOSE_CSV_HEADER}\n");
        for l in &self.layers {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                l.layer,
                fmt_f64(l.residual_norm),
                fmt_f64(l.residual_min_eig),
                fmt_f64(l.unitarity_defect),
                fmt_f64(l.a_minus_identity),
                fmt_f64(l.mean_delta),
                fmt_f64(l.mean_margin),
                fmt_f64(l.fraction_accelerating),
                l.samples
            );
        }
        out
    }
}

/// Diagnostics of `params` on the test set of `seed`.
pub fn diagnose_params(params: &FacnetParams, test: &TestSet) -> Result<DiagnoseReport> {
    let m = test.gram.m();
    let factorizations = params
        .layers
        .iter()
        .map(|l| Factorization::new(l.a.clone(), l.s.clone()))
        .collect::<Result<Vec<_>>>()?;
    let count = test.batch.len();
    let mut trajectories = Vec::with_capacity(count);
    for i in 0..count {
        let p = test.batch.problem(i)?;
        let (_, iterates) = facnet_forward(params, &p, &DVector::zeros(m))?;
        trajectories.push((p, iterates));
    }
    let mut layers = Vec::with_capacity(factorizations.len());
    for (k, f) in factorizations.iter().enumerate() {
        let res = residual(f, test.gram.b())?;
        let mut delta_sum = 0.0;
        let mut margin_sum = 0.0;
        let mut accelerating = 0usize;
        let mut samples = 0usize;
        for ((p, iterates), reference) in trajectories.iter().zip(&test.references) {
            delta_sum += delta_a(f.a(), &reference.z_star, p.lambda());
            match acceleration_condition(p, f, &iterates[k], &iterates[k + 1], reference) {
                Ok(am) => {
                    margin_sum += am.margin;
                    accelerating += usize::from(am.satisfied);
                    samples += 1;
                }
                Err(Error::ZeroDistance) => {}
                Err(e) => return Err(e),
            }
        }
        let per = |v: f64| if samples > 0 { v / samples as f64 } else { f64::NAN };
        layers.push(LayerDiagnostics {
            layer: k + 1,
            residual_norm: res.spec_norm,
            residual_min_eig: res.min_eig,
            unitarity_defect: f.unitarity_defect(),
            a_minus_identity: (f.a() - DMatrix::<f64>::identity(m, m)).norm(),
            mean_delta: delta_sum / count as f64,
            mean_margin: per(margin_sum),
            fraction_accelerating: per(accelerating as f64),
            samples,
        });
    }
    Ok(DiagnoseReport { layers })
}

/// Loads a FacNet checkpoint and writes `diagnose.csv` next to `out`.
pub fn diagnose_factorization(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    seed: u64,
    out: &Path,
) -> Result<DiagnoseReport> {
    let params = match load_checkpoint(checkpoint)? {
        NetParams::Facnet(p) => p,
        other => {
            return Err(Error::InvalidArgument(format!(
                "diagnostics need a facnet checkpoint, got {}",
                other.kind()
            )))
        }
    };
    let test = TestSet::build(cfg, seed)?;
    let report = diagnose_params(&params, &test)?;
    crate::io::write_atomic(out, report.to_csv().as_bytes())?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::experiment::tests::tiny_config;
    use crate::nets::{facnet_identity, save_checkpoint};

    #[test]
    fn identity_network_has_zero_rotation() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path(), 0);
        let test = TestSet::build(&cfg, 3).unwrap();
        let params = facnet_identity(&test.gram, 3, 1.0);
        let report = diagnose_params(&params, &test).unwrap();
        assert_eq!(report.layers.len(), 3);
        for l in &report.layers {
            assert_eq!(l.a_minus_identity, 0.0);
            assert_eq!(l.unitarity_defect, 0.0);
            assert_eq!(l.mean_delta, 0.0);
            assert!(l.residual_min_eig >= -1e-9);
        }
        let ckpt = dir.path().join("f.ckpt");
        save_checkpoint(&ckpt, &NetParams::Facnet(params), 6).unwrap();
        let out = dir.path().join("diag.csv");
        let again = diagnose_factorization(&cfg, &ckpt, 3, &out).unwrap();
        assert_eq!(again, report);
        assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 4);
        assert!(matches!(
            diagnose_factorization(&cfg, &dir.path().join("missing.ckpt"), 3, &out),
            Err(Error::Missing(_))
        ));
    }
}
