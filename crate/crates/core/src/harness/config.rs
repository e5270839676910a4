//! Experiment configuration files and the built-in presets.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generate::{DictKind, GeneratorConfig};
use crate::nets::NetKind;
use crate::training::TrainConfig;

pub const DEFAULT_REF_TOL: f64 = 1e-9;
pub const DEFAULT_REF_MAX_ITER: usize = 200_000;

fn default_ref_tol() -> f64 {
    DEFAULT_REF_TOL
}
fn default_ref_max_iter() -> usize {
    DEFAULT_REF_MAX_ITER
}
fn default_test_size() -> usize {
    1000
}
fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// One trained architecture evaluated at several depths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: NetKind,
    pub depths: Vec<usize>,
    #[serde(default)]
    pub train: TrainConfig,
}

/// Classical solvers run on the test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Baselines {
    /// Largest ISTA iteration count reported; 0 disables the baseline.
    pub ista: usize,
    pub fista: usize,
    /// Train the linear model and report ISTA started from its output.
    pub linear_warm_start: bool,
    #[serde(default)]
    pub linear: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment_id: String,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Every seed selects the dictionary, the training batches and the test set.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_test_size")]
    pub test_size: usize,
    #[serde(default = "default_ref_tol")]
    pub ref_tol: f64,
    #[serde(default = "default_ref_max_iter")]
    pub ref_max_iter: usize,
    pub problem: GeneratorConfig,
    pub baselines: Baselines,
    #[serde(default)]
    pub models: Vec<ModelSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    GaussianDesk,
    GaussianPaper,
    AdversarialDesk,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::GaussianDesk, Preset::GaussianPaper, Preset::AdversarialDesk];

    pub fn as_str(self) -> &'static str {
        match self {
            Preset::GaussianDesk => "gaussian-desk",
            Preset::GaussianPaper => "gaussian-paper",
            Preset::AdversarialDesk => "adversarial-desk",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.as_str() == s)
    }

    pub fn config(self) -> ExperimentConfig {
        match self {
            Preset::GaussianDesk => desk(Preset::GaussianDesk, DictKind::Gaussian, &[1, 2, 4, 7], true),
            Preset::AdversarialDesk => desk(Preset::AdversarialDesk, DictKind::Adversarial, &[1, 2, 4], false),
            Preset::GaussianPaper => {
                let mut cfg = desk(Preset::GaussianPaper, DictKind::Gaussian, &[1, 2, 4, 7, 12, 20], true);
                cfg.problem = GeneratorConfig {
                    rho: 1.0 / 20.0,
                    ..GeneratorConfig::gaussian(64, 100, 0)
                };
                cfg.baselines.ista = 20;
                cfg.baselines.fista = 20;
                cfg
            }
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Training settings shared by the presets; FacNet is trained with a retraction
/// after every step, which keeps its layers exactly orthogonal.
fn preset_train(kind: NetKind) -> TrainConfig {
    let base = TrainConfig::default();
    match kind {
        NetKind::Linear => base,
        NetKind::Lista | NetKind::Lfista => TrainConfig {
            learning_rate: 0.03,
            ..base
        },
        NetKind::Facnet => TrainConfig {
            learning_rate: 0.05,
            retraction: true,
            ..base
        },
    }
}

fn desk(preset: Preset, dict_kind: DictKind, depths: &[usize], lfista: bool) -> ExperimentConfig {
    let k_max = depths.iter().copied().max().unwrap_or(1);
    let mut kinds = vec![NetKind::Lista];
    if lfista {
        kinds.push(NetKind::Lfista);
    }
    kinds.push(NetKind::Facnet);
    ExperimentConfig {
        experiment_id: preset.as_str().to_string(),
        output_dir: PathBuf::from("out").join(preset.as_str()),
        seeds: default_seeds(),
        test_size: default_test_size(),
        ref_tol: DEFAULT_REF_TOL,
        ref_max_iter: DEFAULT_REF_MAX_ITER,
        problem: GeneratorConfig {
            dict_kind,
            ..GeneratorConfig::gaussian(16, 32, 0)
        },
        baselines: Baselines {
            ista: k_max,
            fista: k_max,
            linear_warm_start: true,
            linear: preset_train(NetKind::Linear),
        },
        models: kinds
            .into_iter()
            .map(|kind| ModelSpec {
                kind,
                depths: depths.to_vec(),
                train: preset_train(kind),
            })
            .collect(),
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Missing(path.to_path_buf()));
        }
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment configs are always serializable")
    }

    pub fn validate(&self) -> Result<()> {
        if self.experiment_id.is_empty()
            || !self
                .experiment_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        {
            return Err(Error::Config(format!(
                "experiment_id must be nonempty and use only [A-Za-z0-9_-], got `{}`",
                self.experiment_id
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.seeds.iter().collect::<HashSet<_>>().len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if self.test_size == 0 {
            return Err(Error::Config("test_size must be positive".into()));
        }
        if !(self.ref_tol > 0.0) {
            return Err(Error::Config("ref_tol must be positive".into()));
        }
        self.problem.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.baselines.linear_warm_start {
            self.baselines.linear.validate()?;
        }
        let mut seen = HashSet::new();
        for m in &self.models {
            if m.kind == NetKind::Linear {
                return Err(Error::Config(
                    "the linear model is configured under [baselines], not [[models]]".into(),
                ));
            }
            if !seen.insert(m.kind) {
                return Err(Error::Config(format!("model `{}` is listed twice", m.kind)));
            }
            if m.depths.is_empty() || m.depths.contains(&0) {
                return Err(Error::Config(format!("model `{}` needs positive depths", m.kind)));
            }
            m.train.validate()?;
        }
        Ok(())
    }

    /// Generator settings for one run seed.
    pub fn problem_for_seed(&self, seed: u64) -> GeneratorConfig {
        GeneratorConfig {
            seed,
            ..self.problem.clone()
        }
    }

    /// Training settings for one run seed; the test set size follows the experiment.
    pub fn train_for_seed(&self, base: &TrainConfig, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            test_size: self.test_size,
            ..base.clone()
        }
    }

    /// Rows `results.csv` will hold.
    pub fn expected_rows(&self) -> usize {
        let baseline = if self.baselines.ista > 0 {
            self.baselines.ista + 1
        } else {
            0
        } + if self.baselines.fista > 0 {
            self.baselines.fista + 1
        } else {
            0
        } + if self.baselines.linear_warm_start {
            self.baselines.ista + 1
        } else {
            0
        };
        let trained: usize = self.models.iter().map(|m| m.depths.len()).sum();
        self.seeds.len() * (baseline + trained)
    }
}
