//! Adagrad training of the unrolled networks on freshly sampled batches.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generate::{sample_codes_with, GeneratorConfig};
use crate::nets::{finalize_facnet, network_backward, network_loss, Batch, NetKind, NetParams};
use crate::problem::Gram;
use crate::rng::{self, Stream};
use crate::solvers::fmt_f64;

pub const ADAGRAD_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub mu: f64,
    pub eval_every: usize,
    pub test_size: usize,
    pub seed: u64,
    pub keep_best: bool,
    /// Project FacNet's `A_k` onto the orthogonal group after every update instead
    /// of only once at the end.
    pub retraction: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 500,
            steps: 3000,
            learning_rate: 0.1,
            mu: 1.0,
            eval_every: 50,
            test_size: 1000,
            seed: 0,
            keep_best: true,
            retraction: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.test_size == 0 || self.eval_every == 0 {
            return Err(Error::Config(
                "batch_size, test_size and eval_every must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::Config(format!("mu must be nonnegative, got {}", self.mu)));
        }
        Ok(())
    }
}

/// Per-parameter sums of squared gradients.
#[derive(Debug, Clone)]
pub struct AdagradState {
    pub accumulators: Vec<Vec<f64>>,
    pub epsilon: f64,
}

impl AdagradState {
    pub fn new(params: &NetParams) -> Self {
        Self {
            accumulators: params.tensors().iter().map(|(_, t)| vec![0.0; t.len()]).collect(),
            epsilon: ADAGRAD_EPS,
        }
    }
}

/// `acc += g²`, `p −= lr·g/√(acc + ε)`, then the parameter constraints are restored.
/// A non-finite gradient leaves everything untouched and names the tensor.
pub fn adagrad_update(state: &mut AdagradState, params: &mut NetParams, grads: &NetParams, lr: f64) -> Result<()> {
    let grad_tensors = grads.tensors();
    if grad_tensors.len() != state.accumulators.len() {
        return Err(Error::InvalidArgument(
            "gradient does not match the optimizer state".into(),
        ));
    }
    for (name, g) in &grad_tensors {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
    }
    for (((_, p), (_, g)), acc) in params
        .tensors_mut()
        .into_iter()
        .zip(&grad_tensors)
        .zip(state.accumulators.iter_mut())
    {
        if p.len() != g.len() || acc.len() != g.len() {
            return Err(Error::InvalidArgument(
                "gradient shape does not match parameters".into(),
            ));
        }
        for ((pv, gv), av) in p.iter_mut().zip(g.iter()).zip(acc.iter_mut()) {
            *av += gv * gv;
            *pv -= lr * gv / (*av + state.epsilon).sqrt();
        }
    }
    params.clamp_constraints();
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainRecord {
    pub step: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub penalty: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    pub records: Vec<TrainRecord>,
}

pub const TRAIN_CSV_HEADER: &str = "step,train_loss,test_loss,penalty";

impl TrainTrace {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{TRAIN_CSV_HEADER}\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                r.step,
                fmt_f64(r.train_loss),
                fmt_f64(r.test_loss),
                fmt_f64(r.penalty)
            );
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: NetParams,
    pub trace: TrainTrace,
    /// Step whose parameters were returned.
    pub best_step: usize,
    /// Test loss of the returned parameters.
    pub test_loss: f64,
    /// Test loss at initialization.
    pub init_test_loss: f64,
    /// Set when training stopped on a non-finite loss or gradient.
    pub diverged: Option<String>,
    /// Change of the test loss caused by the final projection (FacNet only).
    pub projection_delta: f64,
}

/// The held-out set: `size` signals drawn once from the test stream of `seed`.
pub fn held_out_batch(gram: &Arc<Gram>, gen: &GeneratorConfig, size: usize, seed: u64) -> Result<Batch> {
    let mut rng = rng::stream(seed, Stream::Test);
    let samples = sample_codes_with(gen, gram.d(), size, &mut rng)?;
    Batch::new(gram.clone(), gen.lambda, samples.signals)
}

/// What a set of raw parameters is deployed as: FacNet is projected first.
fn deployable(params: &NetParams) -> NetParams {
    match params {
        NetParams::Facnet(p) => NetParams::Facnet(finalize_facnet(p)),
        other => other.clone(),
    }
}

/// Test loss without the unitarity penalty.
fn test_loss(params: &NetParams, test: &Batch) -> Result<f64> {
    Ok(network_loss(params, test)? - params.penalty())
}

/// Trains a `depth`-layer network from its classical initialization.
///
/// Every step draws a fresh batch from the train stream of `cfg.seed`. The test set
/// comes from [`held_out_batch`]. Recorded test losses are those of the deployable
/// parameters, so for FacNet they already include the final projection.
pub fn train(
    kind: NetKind,
    depth: usize,
    gram: &Arc<Gram>,
    gen: &GeneratorConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    gen.validate()?;
    if gram.n() != gen.n || gram.m() != gen.m {
        return Err(Error::InvalidArgument(format!(
            "dictionary is {}x{} but the generator asks for {}x{}",
            gram.n(),
            gram.m(),
            gen.n,
            gen.m
        )));
    }
    let test = held_out_batch(gram, gen, cfg.test_size, cfg.seed)?;
    let mut params = NetParams::init(kind, gram, gen.lambda, depth, cfg.mu)?;
    let mut state = AdagradState::new(&params);
    let mut rng = rng::stream(cfg.seed, Stream::Train);

    let init_test_loss = test_loss(&params, &test)?;
    let mut best = (params.clone(), 0usize, init_test_loss);
    let mut trace = TrainTrace::default();
    let mut diverged = None;

    for step in 0..=cfg.steps {
        let evaluate = step % cfg.eval_every == 0 || step == cfg.steps;
        let samples = sample_codes_with(gen, gram.d(), cfg.batch_size, &mut rng)?;
        let batch = Batch::new(gram.clone(), gen.lambda, samples.signals)?;
        let (loss, grads) = network_backward(&params, &batch)?;
        if !loss.is_finite() {
            diverged = Some(format!("non-finite training loss at step {step}"));
            break;
        }
        if evaluate {
            let current = deployable(&params);
            let t = test_loss(&current, &test)?;
            if !t.is_finite() {
                diverged = Some(format!("non-finite test loss at step {step}"));
                break;
            }
            let penalty = params.penalty();
            trace.records.push(TrainRecord {
                step,
                train_loss: loss - penalty,
                test_loss: t,
                penalty,
            });
            log::debug!("{kind} K={depth} step {step}: train {loss:.6e} test {t:.6e}");
            if !cfg.keep_best || t < best.2 {
                best = (params.clone(), step, t);
            }
        }
        if step == cfg.steps {
            break;
        }
        if let Err(e) = adagrad_update(&mut state, &mut params, &grads, cfg.learning_rate) {
            diverged = Some(e.to_string());
            break;
        }
        if cfg.retraction {
            params = deployable(&params);
        }
    }
    if let Some(reason) = &diverged {
        log::warn!("{kind} K={depth} training diverged: {reason}; returning the best parameters so far");
    }

    let (raw, best_step, loss_at_best) = best;
    let params = deployable(&raw);
    let projection_delta = if kind == NetKind::Facnet {
        loss_at_best - test_loss(&raw, &test)?
    } else {
        0.0
    };
    Ok(TrainOutcome {
        params,
        trace,
        best_step,
        test_loss: loss_at_best,
        init_test_loss,
        diverged,
        projection_delta,
    })
}
