//! Synthetic dictionaries and Bernoulli-Gaussian codes.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DictKind {
    Gaussian,
    Adversarial,
}

impl DictKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DictKind::Gaussian => "gaussian",
            DictKind::Adversarial => "adversarial",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gaussian" => Some(DictKind::Gaussian),
            "adversarial" => Some(DictKind::Adversarial),
            _ => None,
        }
    }
}

fn default_noise() -> f64 {
    0.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n: usize,
    pub m: usize,
    /// Bernoulli activation probability of each code coefficient.
    pub rho: f64,
    /// Standard deviation of the active coefficients.
    pub sigma: f64,
    pub lambda: f64,
    pub dict_kind: DictKind,
    /// Dictionary seed. Experiment configs replace it with each run seed.
    #[serde(default)]
    pub seed: u64,
    /// Standard deviation of additive observation noise; zero keeps `x = Dz` exact.
    #[serde(default = "default_noise")]
    pub noise_std: f64,
}

impl GeneratorConfig {
    pub fn gaussian(n: usize, m: usize, seed: u64) -> Self {
        Self {
            n,
            m,
            rho: 5.0 / m as f64,
            sigma: 10.0,
            lambda: 0.01,
            dict_kind: DictKind::Gaussian,
            seed,
            noise_std: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 {
            return Err(Error::InvalidArgument("n and m must be positive".into()));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "rho must lie in (0, 1], got {}",
                self.rho
            )));
        }
        if self.rho * (self.m as f64) < 1.0 - 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "rho * m must be at least 1, got {}",
                self.rho * self.m as f64
            )));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::InvalidArgument("sigma must be positive".into()));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::InvalidArgument("lambda must be positive".into()));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::InvalidArgument("noise_std must be nonnegative".into()));
        }
        if self.m <= self.n {
            log::warn!("dictionary is not overcomplete (m = {}, n = {})", self.m, self.n);
        }
        Ok(())
    }
}

/// A generated dictionary with the metadata needed to regenerate it.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    pub d: DMatrix<f64>,
    pub kind: DictKind,
    pub seed: u64,
    /// Frequencies of the adversarial construction; empty for Gaussian dictionaries.
    pub zeta: Vec<f64>,
}

impl Dictionary {
    pub fn n(&self) -> usize {
        self.d.nrows()
    }
    pub fn m(&self) -> usize {
        self.d.ncols()
    }
}

fn normalize_columns(d: &mut DMatrix<f64>) {
    for mut col in d.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
    }
}

pub fn gen_dictionary(cfg: &GeneratorConfig) -> Result<Dictionary> {
    match cfg.dict_kind {
        DictKind::Gaussian => gen_gaussian_dictionary(cfg),
        DictKind::Adversarial => gen_adversarial_dictionary(cfg),
    }
}

/// Columns drawn from `N(0, I_n)` and scaled to unit norm.
pub fn gen_gaussian_dictionary(cfg: &GeneratorConfig) -> Result<Dictionary> {
    cfg.validate()?;
    if cfg.dict_kind != DictKind::Gaussian {
        return Err(Error::InvalidArgument("expected a gaussian generator config".into()));
    }
    let mut rng = rng::stream(cfg.seed, Stream::Dictionary);
    // Column-major fill: column j is drawn as one contiguous block.
    let mut d = DMatrix::from_fn(cfg.n, cfg.m, |_, _| 0.0);
    for v in d.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    normalize_columns(&mut d);
    Ok(Dictionary {
        d,
        kind: DictKind::Gaussian,
        seed: cfg.seed,
        zeta: Vec::new(),
    })
}

/// Real-valued partial Fourier dictionary.
///
/// `n/2` distinct frequencies are drawn from `{1/m, …, ⌊m/2⌋/m}`; atom `j` stacks
/// `cos(2π j ζ_k)` and `−sin(2π j ζ_k)` for every frequency, then is normalized.
/// The Gram matrix is circulant, so its eigenvectors are spread Fourier modes.
pub fn gen_adversarial_dictionary(cfg: &GeneratorConfig) -> Result<Dictionary> {
    cfg.validate()?;
    if cfg.dict_kind != DictKind::Adversarial {
        return Err(Error::InvalidArgument(
            "expected an adversarial generator config".into(),
        ));
    }
    if !cfg.n.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "adversarial dictionaries need an even signal dimension, got n = {}",
            cfg.n
        )));
    }
    let half = cfg.n / 2;
    let available = cfg.m / 2;
    if half > available {
        return Err(Error::InvalidArgument(format!(
            "need {half} distinct frequencies but only {available} are available for m = {}",
            cfg.m
        )));
    }
    let mut rng = rng::stream(cfg.seed, Stream::Dictionary);
    let picks = index::sample(&mut rng, available, half);
    let zeta: Vec<f64> = picks.iter().map(|i| (i + 1) as f64 / cfg.m as f64).collect();
    let mut d = DMatrix::zeros(cfg.n, cfg.m);
    for j in 0..cfg.m {
        let t = (j + 1) as f64;
        for (k, z) in zeta.iter().enumerate() {
            let phase = 2.0 * PI * t * z;
            d[(2 * k, j)] = phase.cos();
            d[(2 * k + 1, j)] = -phase.sin();
        }
    }
    normalize_columns(&mut d);
    Ok(Dictionary {
        d,
        kind: DictKind::Adversarial,
        seed: cfg.seed,
        zeta,
    })
}

/// Ground-truth codes (`m × N`) and their signals (`n × N`).
#[derive(Debug, Clone)]
pub struct SampleBatch {
    pub codes: DMatrix<f64>,
    pub signals: DMatrix<f64>,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.codes.ncols()
    }
    pub fn is_empty(&self) -> bool {
        self.codes.ncols() == 0
    }
    pub fn signal(&self, i: usize) -> DVector<f64> {
        self.signals.column(i).into_owned()
    }
}

/// Draws `count` Bernoulli-Gaussian codes `z_i = b_i a_i` and their signals `D z_i`.
pub fn sample_codes_with<R: Rng>(
    cfg: &GeneratorConfig,
    d: &DMatrix<f64>,
    count: usize,
    rng: &mut R,
) -> Result<SampleBatch> {
    cfg.validate()?;
    if count == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    if d.ncols() != cfg.m || d.nrows() != cfg.n {
        return Err(Error::InvalidArgument(format!(
            "dictionary is {}x{} but the config asks for {}x{}",
            d.nrows(),
            d.ncols(),
            cfg.n,
            cfg.m
        )));
    }
    let mut codes = DMatrix::zeros(cfg.m, count);
    for v in codes.iter_mut() {
        let active = rng.random::<f64>() < cfg.rho;
        let amp: f64 = rng.sample(StandardNormal);
        if active {
            *v = cfg.sigma * amp;
        }
    }
    let mut signals = d * &codes;
    if cfg.noise_std > 0.0 {
        for v in signals.iter_mut() {
            let e: f64 = rng.sample(StandardNormal);
            *v += cfg.noise_std * e;
        }
    }
    Ok(SampleBatch { codes, signals })
}

pub fn sample_codes(
    cfg: &GeneratorConfig,
    d: &DMatrix<f64>,
    count: usize,
    seed: u64,
    label: Stream,
) -> Result<SampleBatch> {
    let mut rng = rng::stream(seed, label);
    sample_codes_with(cfg, d, count, &mut rng)
}
