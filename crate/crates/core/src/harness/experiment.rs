//! End-to-end experiment: references, classical baselines and trained networks
//! evaluated on a fixed test set.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DMatrix;

use super::config::ExperimentConfig;
use super::plot::emit_plots;
use crate::error::{Error, Result};
use crate::generate::gen_dictionary;
use crate::io::{save_dictionary, write_atomic};
use crate::nets::{save_checkpoint, Batch, NetKind, NetParams};
use crate::problem::Gram;
use crate::solvers::{fmt_f64, run_batch, solve_reference, ReferenceSolution, SolverKind};
use crate::training::{held_out_batch, train};

pub const RESULTS_CSV_HEADER: &str = "experiment_id,model,depth_or_iter,seed,f_gap_median,f_gap_q25,f_gap_q75";

/// Slack allowed below zero for `F(z) − F*` given a certified reference.
pub const F_GAP_FLOOR: f64 = -1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub model: String,
    pub depth_or_iter: usize,
    pub seed: u64,
    pub f_gap_median: f64,
    pub f_gap_q25: f64,
    pub f_gap_q75: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub experiment_id: String,
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{RESULTS_CSV_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                self.experiment_id,
                r.model,
                r.depth_or_iter,
                r.seed,
                fmt_f64(r.f_gap_median),
                fmt_f64(r.f_gap_q25),
                fmt_f64(r.f_gap_q75)
            );
        }
        out
    }

    /// Parses a `results.csv`. Every row must carry the same experiment id.
    pub fn from_csv(text: &str) -> std::result::Result<Self, String> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(RESULTS_CSV_HEADER) {
            return Err("unexpected results header".into());
        }
        let mut experiment_id = None::<String>;
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(format!("row {} has {} fields", i + 1, f.len()));
            }
            match &experiment_id {
                None => experiment_id = Some(f[0].to_string()),
                Some(id) if id != f[0] => return Err(format!("row {} mixes experiment ids", i + 1)),
                _ => {}
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| format!("row {}: {e}", i + 1));
            rows.push(ResultRow {
                model: f[1].to_string(),
                depth_or_iter: f[2].parse().map_err(|e| format!("row {}: {e}", i + 1))?,
                seed: f[3].parse().map_err(|e| format!("row {}: {e}", i + 1))?,
                f_gap_median: num(f[4])?,
                f_gap_q25: num(f[5])?,
                f_gap_q75: num(f[6])?,
            });
        }
        Ok(Self {
            experiment_id: experiment_id.ok_or("results table has no rows")?,
            rows,
        })
    }

    pub fn get(&self, model: &str, depth_or_iter: usize, seed: u64) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.model == model && r.depth_or_iter == depth_or_iter && r.seed == seed)
    }

    /// Median over seeds of the per-seed median gap.
    pub fn median_over_seeds(&self, model: &str, depth_or_iter: usize) -> Option<f64> {
        let values: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.model == model && r.depth_or_iter == depth_or_iter)
            .map(|r| r.f_gap_median)
            .collect();
        (!values.is_empty()).then(|| quantile(&values, 0.5))
    }
}

/// Linear-interpolation quantile of unsorted data (`q ∈ [0, 1]`).
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone)]
pub struct TrainingSummary {
    pub model: NetKind,
    pub depth: usize,
    pub seed: u64,
    pub best_step: usize,
    pub init_test_loss: f64,
    pub test_loss: f64,
    pub diverged: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub table: ResultTable,
    pub training: Vec<TrainingSummary>,
    pub files: Vec<PathBuf>,
}

/// Test set of one seed with certified references.
pub struct TestSet {
    pub gram: Arc<Gram>,
    pub batch: Batch,
    pub references: Vec<ReferenceSolution>,
}

impl TestSet {
    pub fn build(cfg: &ExperimentConfig, seed: u64) -> Result<Self> {
        let gen = cfg.problem_for_seed(seed);
        let dict = gen_dictionary(&gen)?;
        let gram = Arc::new(Gram::new(dict.d)?);
        let batch = held_out_batch(&gram, &gen, cfg.test_size, seed)?;
        let mut references = Vec::with_capacity(batch.len());
        for i in 0..batch.len() {
            let r = solve_reference(&batch.problem(i)?, cfg.ref_tol, cfg.ref_max_iter)?;
            if !r.certified {
                return Err(Error::Uncertified {
                    index: i,
                    gap: r.gap,
                    tol: cfg.ref_tol,
                });
            }
            references.push(r);
        }
        Ok(Self {
            gram,
            batch,
            references,
        })
    }

    /// `F(z_i) − F*_i` for every test column.
    pub fn f_gaps(&self, z: &DMatrix<f64>) -> Result<Vec<f64>> {
        let gaps: Vec<f64> = self
            .batch
            .costs(z)
            .into_iter()
            .zip(&self.references)
            .map(|(c, r)| c - r.f_star)
            .collect();
        if let Some((i, g)) = gaps.iter().enumerate().find(|(_, g)| !(**g >= F_GAP_FLOOR)) {
            return Err(Error::InvalidArgument(format!(
                "test sample {i} has f_gap {g:e}, below the certified floor"
            )));
        }
        Ok(gaps)
    }

    fn row(&self, model: &str, depth_or_iter: usize, seed: u64, z: &DMatrix<f64>) -> Result<ResultRow> {
        let gaps = self.f_gaps(z)?;
        Ok(ResultRow {
            model: model.to_string(),
            depth_or_iter,
            seed,
            f_gap_median: quantile(&gaps, 0.5),
            f_gap_q25: quantile(&gaps, 0.25),
            f_gap_q75: quantile(&gaps, 0.75),
        })
    }
}

fn cell_name(model: &str, depth: usize, seed: u64) -> String {
    format!("{model}_k{depth}_seed{seed}")
}

/// Runs every cell of the experiment and writes its files under `output_dir`:
/// `results.csv`, `config.resolved.toml`, `dictionaries/`, `traces/`,
/// `checkpoints/` and `plots/`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let out = &cfg.output_dir;
    let mut files = Vec::new();
    let write = |rel: &Path, bytes: &[u8], files: &mut Vec<PathBuf>| -> Result<()> {
        let path = out.join(rel);
        write_atomic(&path, bytes)?;
        files.push(path);
        Ok(())
    };
    write(Path::new("config.resolved.toml"), cfg.to_toml().as_bytes(), &mut files)?;

    let mut rows = Vec::new();
    let mut training = Vec::new();
    for &seed in &cfg.seeds {
        log::info!("{}: seed {seed}: solving references", cfg.experiment_id);
        let test = TestSet::build(cfg, seed)?;
        let gen = cfg.problem_for_seed(seed);
        let dict_path = out.join("dictionaries").join(format!("seed{seed}.txt"));
        save_dictionary(&dict_path, &gen_dictionary(&gen)?)?;
        files.push(dict_path);

        let zero = DMatrix::zeros(test.gram.m(), test.batch.len());
        for (name, kind, k_max) in [
            ("ista", SolverKind::Ista, cfg.baselines.ista),
            ("fista", SolverKind::Fista, cfg.baselines.fista),
        ] {
            if k_max == 0 {
                continue;
            }
            let iterates = run_batch(&test.gram, gen.lambda, kind, test.batch.dtx(), &zero, k_max);
            for (k, z) in iterates.iter().enumerate() {
                rows.push(test.row(name, k, seed, z)?);
            }
        }

        if cfg.baselines.linear_warm_start {
            log::info!("{}: seed {seed}: training linear warm start", cfg.experiment_id);
            let tc = cfg.train_for_seed(&cfg.baselines.linear, seed);
            let outcome = train(NetKind::Linear, 1, &test.gram, &gen, &tc)?;
            let NetParams::Linear(lin) = &outcome.params else {
                unreachable!("linear training returns linear parameters")
            };
            let z0 = &lin.a0 * test.batch.x();
            let iterates = run_batch(
                &test.gram,
                gen.lambda,
                SolverKind::Ista,
                test.batch.dtx(),
                &z0,
                cfg.baselines.ista,
            );
            for (k, z) in iterates.iter().enumerate() {
                rows.push(test.row("ista_linear", k, seed, z)?);
            }
            let name = cell_name("linear", 1, seed);
            write(
                Path::new("traces").join(format!("{name}.csv")).as_path(),
                outcome.trace.to_csv().as_bytes(),
                &mut files,
            )?;
            let ckpt = out.join("checkpoints").join(format!("{name}.ckpt"));
            save_checkpoint(&ckpt, &outcome.params, gen.n)?;
            files.push(ckpt);
            training.push(TrainingSummary {
                model: NetKind::Linear,
                depth: 1,
                seed,
                best_step: outcome.best_step,
                init_test_loss: outcome.init_test_loss,
                test_loss: outcome.test_loss,
                diverged: outcome.diverged,
            });
        }

        for spec in &cfg.models {
            let tc = cfg.train_for_seed(&spec.train, seed);
            for &depth in &spec.depths {
                log::info!("{}: seed {seed}: training {} K={depth}", cfg.experiment_id, spec.kind);
                let outcome = train(spec.kind, depth, &test.gram, &gen, &tc)?;
                let z = outcome.params.forward_batch(&test.batch)?;
                rows.push(test.row(spec.kind.as_str(), depth, seed, &z)?);
                let name = cell_name(spec.kind.as_str(), depth, seed);
                write(
                    Path::new("traces").join(format!("{name}.csv")).as_path(),
                    outcome.trace.to_csv().as_bytes(),
                    &mut files,
                )?;
                let ckpt = out.join("checkpoints").join(format!("{name}.ckpt"));
                save_checkpoint(&ckpt, &outcome.params, gen.n)?;
                files.push(ckpt);
                training.push(TrainingSummary {
                    model: spec.kind,
                    depth,
                    seed,
                    best_step: outcome.best_step,
                    init_test_loss: outcome.init_test_loss,
                    test_loss: outcome.test_loss,
                    diverged: outcome.diverged,
                });
            }
        }
    }

    let table = ResultTable {
        experiment_id: cfg.experiment_id.clone(),
        rows,
    };
    debug_assert_eq!(table.rows.len(), cfg.expected_rows());
    write(Path::new("results.csv"), table.to_csv().as_bytes(), &mut files)?;
    for (name, svg) in emit_plots(&table) {
        write(Path::new("plots").join(name).as_path(), svg.as_bytes(), &mut files)?;
    }
    Ok(ExperimentReport { table, training, files })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::generate::GeneratorConfig;
    use crate::harness::config::{Baselines, ModelSpec};
    use crate::training::TrainConfig;

    pub(crate) fn tiny_config(dir: &Path, steps: usize) -> ExperimentConfig {
        let train = TrainConfig {
            steps,
            batch_size: 20,
            eval_every: 5,
            learning_rate: 0.01,
            ..TrainConfig::default()
        };
        ExperimentConfig {
            experiment_id: "tiny".into(),
            output_dir: dir.to_path_buf(),
            seeds: vec![3, 4],
            test_size: 30,
            ref_tol: 1e-9,
            ref_max_iter: 100_000,
            problem: GeneratorConfig::gaussian(6, 10, 0),
            baselines: Baselines {
                ista: 3,
                fista: 3,
                linear_warm_start: true,
                linear: train.clone(),
            },
            models: [NetKind::Lista, NetKind::Lfista, NetKind::Facnet]
                .into_iter()
                .map(|kind| ModelSpec {
                    kind,
                    depths: vec![1, 3],
                    train: train.clone(),
                })
                .collect(),
        }
    }

    #[test]
    fn quantile_examples() {
        assert_eq!(quantile(&[3.0, 1.0, 2.0], 0.5), 2.0);
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0], 0.5), 2.5);
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.25), 2.0);
        assert_eq!(quantile(&[7.0], 0.75), 7.0);
    }

    #[test]
    fn untrained_models_match_baselines() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path(), 0);
        let report = run_experiment(&cfg).unwrap();
        let t = &report.table;
        assert_eq!(t.rows.len(), cfg.expected_rows());
        for &seed in &cfg.seeds {
            for depth in [1, 3] {
                let ista = t.get("ista", depth, seed).unwrap();
                let fista = t.get("fista", depth, seed).unwrap();
                for (model, base) in [("lista", ista), ("facnet", ista), ("lfista", fista)] {
                    let r = t.get(model, depth, seed).unwrap();
                    let tol = 1e-9 * base.f_gap_median.abs().max(1.0);
                    assert!((r.f_gap_median - base.f_gap_median).abs() <= tol, "{model} K={depth}");
                    assert!((r.f_gap_q75 - base.f_gap_q75).abs() <= tol, "{model} K={depth}");
                }
            }
            // The untrained linear model outputs zero, so its ISTA rows are plain ISTA.
            assert_eq!(
                t.get("ista_linear", 2, seed).unwrap().f_gap_median,
                t.get("ista", 2, seed).unwrap().f_gap_median
            );
        }
        assert!(t.rows.iter().all(|r| r.f_gap_q25 >= F_GAP_FLOOR));
        let csv = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
        assert_eq!(ResultTable::from_csv(&csv).unwrap(), *t);
        assert!(dir.path().join("plots").join("tiny.svg").exists());
        assert!(dir.path().join("checkpoints").join("facnet_k3_seed4.ckpt").exists());
        assert!(dir.path().join("traces").join("lista_k1_seed3.csv").exists());
    }

    #[test]
    fn results_are_deterministic() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        run_experiment(&tiny_config(a.path(), 10)).unwrap();
        run_experiment(&tiny_config(b.path(), 10)).unwrap();
        let read = |d: &Path| std::fs::read(d.join("results.csv")).unwrap();
        assert_eq!(read(a.path()), read(b.path()));
    }

    #[test]
    fn csv_parser_rejects_malformed_input() {
        assert!(ResultTable::from_csv("nope\n").is_err());
        let bad = format!("{RESULTS_CSV_HEADER}\nx,ista,1,0,1.0,1.0\n");
        assert!(ResultTable::from_csv(&bad).is_err());
        let mixed = format!("{RESULTS_CSV_HEADER}\nx,ista,1,0,1,1,1\ny,ista,1,0,1,1,1\n");
        assert!(ResultTable::from_csv(&mixed).is_err());
    }
}
