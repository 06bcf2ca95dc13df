use ndarray::{Array2, ArrayView2};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::forward::{default_normalizer, SupportMask};
use super::grad::{grad_unrolled, unroll, Example};
use super::params::{LearnedParams, ListaCpParams, ListaParams, ListaVmParams, ModelKind};
use crate::classical::spectral_norm_sq;
use crate::error::{Error, Result};
use crate::instance::{
    fixed_x_seed, sample_instance, sample_instance_with_x, sample_measurements, InstanceConfig,
    SparseInstance,
};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// Plain gradient step.
    Sgd,
    /// Heavy-ball momentum with coefficient `TrainConfig::momentum`.
    Momentum,
}

fn default_layers() -> usize {
    12
}
fn default_lr() -> f64 {
    3e-2
}
fn default_grad_clip() -> Option<f64> {
    Some(1.0)
}
fn default_momentum() -> f64 {
    0.9
}
fn default_alpha() -> f64 {
    crate::classical::DEFAULT_ALPHA
}
fn default_optimizer() -> Optimizer {
    Optimizer::Momentum
}
fn default_lr_decay() -> f64 {
    0.85
}
fn default_test_instances() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_layers")]
    pub layers: usize,
    pub epochs: usize,
    pub matrices_per_epoch: usize,
    pub instances_per_matrix: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_optimizer")]
    pub optimizer: Optimizer,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default)]
    pub seed: u64,
    /// Train on one shared measurement matrix.
    #[serde(default)]
    pub fixed_x: bool,
    /// 0-based candidate support; required by LISTA-VM-SS.
    #[serde(default)]
    pub support_set: Option<Vec<usize>>,
    /// Penalty used by the ISTA-shaped initialization.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Rescale mini-batch gradients whose norm exceeds this value.
    #[serde(default = "default_grad_clip")]
    pub grad_clip: Option<f64>,
    /// LISTA-VM only: train each instance on a random prefix of length in
    /// `[prefix_min, N]` instead of the full context.
    #[serde(default)]
    pub prefix_min: Option<usize>,
    /// Learning rate multiplier applied after every epoch.
    #[serde(default = "default_lr_decay")]
    pub lr_decay: f64,
    /// Size of each per-epoch evaluation set.
    #[serde(default = "default_test_instances")]
    pub test_instances: usize,
}

impl TrainConfig {
    pub fn new(epochs: usize, matrices_per_epoch: usize, instances_per_matrix: usize) -> Self {
        TrainConfig {
            layers: default_layers(),
            epochs,
            matrices_per_epoch,
            instances_per_matrix,
            learning_rate: default_lr(),
            optimizer: default_optimizer(),
            momentum: default_momentum(),
            seed: 0,
            fixed_x: false,
            support_set: None,
            alpha: default_alpha(),
            grad_clip: default_grad_clip(),
            prefix_min: None,
            lr_decay: default_lr_decay(),
            test_instances: default_test_instances(),
        }
    }

    pub fn validate(&self, kind: ModelKind) -> Result<()> {
        if self.layers == 0 || self.epochs == 0 || self.matrices_per_epoch == 0 || self.instances_per_matrix == 0 {
            return Err(Error::config("layers, epochs and batch counts must be positive"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config("learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum must lie in [0, 1)"));
        }
        if kind == ModelKind::ListaVmSs && self.support_set.is_none() {
            return Err(Error::config("lista_vm_ss requires a support_set"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::config("lr_decay must lie in (0, 1]"));
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return Err(Error::config("grad_clip must be positive"));
        }
        if self.prefix_min == Some(0) {
            return Err(Error::config("prefix_min must be at least 1"));
        }
        if self.test_instances == 0 {
            return Err(Error::config("test_instances must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-instance `‖β̂ − β*‖²` over the epoch's mini-batches.
    pub train_loss: f64,
    pub test_err_fixed_x: f64,
    pub test_err_varying_x: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub kind: ModelKind,
    pub params: LearnedParams,
    pub support: Option<SupportMask>,
    pub history: Vec<EpochRecord>,
}

impl TrainResult {
    /// CSV with columns `epoch,train_loss,test_err_fixed_x,test_err_varying_x`.
    pub fn history_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,test_err_fixed_x,test_err_varying_x\n");
        for r in &self.history {
            out.push_str(&format!(
                "{},{:e},{:e},{:e}\n",
                r.epoch, r.train_loss, r.test_err_fixed_x, r.test_err_varying_x
            ));
        }
        out
    }
}

/// Evaluation instances: one family sharing a single matrix, one with a
/// fresh matrix per instance.
#[derive(Debug, Clone)]
pub struct TestSet {
    pub fixed_x: Vec<SparseInstance>,
    pub varying_x: Vec<SparseInstance>,
}

impl TestSet {
    /// `shared_x` is the training matrix in the fixed-X regime; otherwise a
    /// held-out matrix is drawn.
    pub fn sample(config: &InstanceConfig, count: usize, seed: u64, shared_x: Option<&Array2<f64>>) -> Result<Self> {
        let held_out;
        let x = match shared_x {
            Some(x) => x,
            None => {
                let mut rng = seed::rng(seed::derive(seed, 0));
                held_out = sample_measurements(config, config.n_measurements, &mut rng);
                &held_out
            }
        };
        let fixed_x = (0..count)
            .into_par_iter()
            .map(|i| sample_instance_with_x(config, x, seed::derive_path(seed, &[1, i as u64])))
            .collect::<Result<_>>()?;
        let varying_x = (0..count)
            .into_par_iter()
            .map(|i| sample_instance(config, seed::derive_path(seed, &[2, i as u64])))
            .collect::<Result<_>>()?;
        Ok(TestSet { fixed_x, varying_x })
    }
}

/// Mean squared recovery error and mean squared query-label error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub recovery_err: f64,
    pub prediction_loss: f64,
}

pub fn evaluate(params: &LearnedParams, support: Option<&SupportMask>, instances: &[SparseInstance]) -> Result<EvalStats> {
    let per: Vec<(f64, f64)> = instances
        .par_iter()
        .map(|inst| {
            let run = unroll(params, support, &Example::from_instance(inst))?;
            let beta = run.output();
            let e = beta - &inst.beta_star;
            let p = inst.y_query - inst.x_query.dot(beta);
            Ok((e.dot(&e), p * p))
        })
        .collect::<Result<_>>()?;
    let n = per.len().max(1) as f64;
    Ok(EvalStats {
        recovery_err: per.iter().map(|p| p.0).sum::<f64>() / n,
        prediction_loss: per.iter().map(|p| p.1).sum::<f64>() / n,
    })
}

/// Mean `λ_max(XᵀX)` over a few pilot matrices, restricted to the support
/// columns when one is given.
fn pilot_lipschitz(config: &InstanceConfig, support: Option<&SupportMask>, seed: u64) -> Result<f64> {
    const PILOTS: u64 = 8;
    let mut total = 0.0;
    for i in 0..PILOTS {
        let mut rng = seed::rng(seed::derive(seed, i));
        let mut x = sample_measurements(config, config.n_measurements, &mut rng);
        if let Some(mask) = support {
            x = mask.restrict_columns(x.view());
        }
        total += spectral_norm_sq(x.view())?;
    }
    Ok(total / PILOTS as f64)
}

/// ISTA-shaped starting point: step `1/L̄` with `L̄` the pilot average,
/// thresholds `α/L̄`; LISTA-CP and LISTA couple to `x_ref`.
pub fn init_params(
    kind: ModelKind,
    config: &InstanceConfig,
    layers: usize,
    alpha: f64,
    x_ref: ArrayView2<f64>,
    support: Option<&SupportMask>,
    seed: u64,
) -> Result<LearnedParams> {
    let l = pilot_lipschitz(config, support, seed)?;
    let theta = vec![alpha / l; layers];
    let d = config.d;
    Ok(match kind {
        ModelKind::ListaVm | ModelKind::ListaVmSs => {
            let m = default_normalizer(config.n_measurements);
            LearnedParams::ListaVm(ListaVmParams::scaled_identity(d, m / l, theta))
        }
        ModelKind::ListaCp => LearnedParams::ListaCp(ListaCpParams::new(vec![x_ref.to_owned() / l; layers], theta)?),
        ModelKind::Lista => {
            let w1 = x_ref.t().to_owned() / l;
            let w2 = Array2::eye(d) - &(x_ref.t().dot(&x_ref) / l);
            LearnedParams::Lista(ListaParams::new(vec![w1; layers], vec![w2; layers], theta)?)
        }
    })
}

/// The shared matrix of fixed-X training with seed `seed`.
pub fn training_matrix(config: &InstanceConfig, seed: u64) -> Array2<f64> {
    let mut rng = seed::rng(fixed_x_seed(seed));
    sample_measurements(config, config.n_measurements, &mut rng)
}

const STREAM_TRAIN_X: u64 = 1;
const STREAM_TRAIN_INSTANCE: u64 = 2;
const STREAM_PILOT: u64 = 3;
const STREAM_TEST: u64 = 4;
const STREAM_PREFIX: u64 = 5;

/// Mini-batch meta-training: every matrix group of every epoch is one step
/// on the batch-mean loss. Deterministic given `train.seed`.
pub fn meta_train(kind: ModelKind, config: &InstanceConfig, train: &TrainConfig) -> Result<TrainResult> {
    config.validate()?;
    train.validate(kind)?;
    let seed = train.seed;
    let support = match &train.support_set {
        Some(s) if kind == ModelKind::ListaVmSs => Some(SupportMask::new(config.d, s)?),
        _ => None,
    };
    let shared_x = if train.fixed_x {
        Some(training_matrix(config, seed))
    } else {
        None
    };
    let pilot_seed = seed::derive(seed, STREAM_PILOT);
    let x_ref = match &shared_x {
        Some(x) => x.clone(),
        None => sample_measurements(config, config.n_measurements, &mut seed::rng(pilot_seed)),
    };
    let mut params = init_params(kind, config, train.layers, train.alpha, x_ref.view(), support.as_ref(), pilot_seed)?;
    let tests = TestSet::sample(config, train.test_instances, seed::derive(seed, STREAM_TEST), shared_x.as_ref())?;
    let mut velocity = params.zeros_like();
    let mut history = Vec::with_capacity(train.epochs);

    let mut lr = train.learning_rate;
    for epoch in 0..train.epochs {
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for group in 0..train.matrices_per_epoch {
            let path = [epoch as u64, group as u64];
            let x = match &shared_x {
                Some(x) => x.clone(),
                None => sample_measurements(
                    config,
                    config.n_measurements,
                    &mut seed::rng(seed::derive_path(seed, &[STREAM_TRAIN_X, path[0], path[1]])),
                ),
            };
            let batch: Vec<Example> = (0..train.instances_per_matrix)
                .into_par_iter()
                .map(|i| {
                    let s = seed::derive_path(seed, &[STREAM_TRAIN_INSTANCE, path[0], path[1], i as u64]);
                    let inst = sample_instance_with_x(config, &x, s)?;
                    Ok(match train.prefix_min {
                        Some(lo) if matches!(kind, ModelKind::ListaVm | ModelKind::ListaVmSs) => {
                            let hi = config.n_measurements.max(lo);
                            let mut rng = seed::rng(seed::derive(s, STREAM_PREFIX));
                            Example::prefix(&inst, rng.random_range(lo..=hi))
                        }
                        _ => Example::from_instance(&inst),
                    })
                })
                .collect::<Result<_>>()?;
            let g = grad_unrolled(&params, support.as_ref(), &batch)?;
            if !g.loss.is_finite() || !g.grads.is_finite() {
                return Err(Error::Training {
                    epoch,
                    message: format!("non-finite loss or gradient in matrix group {group}"),
                });
            }
            let mut step = g.grads;
            step.map_inplace(|v| v / batch.len() as f64);
            if let Some(clip) = train.grad_clip {
                let norm = step.norm();
                if norm > clip {
                    step.map_inplace(|v| v * clip / norm);
                }
            }
            match train.optimizer {
                Optimizer::Sgd => params.axpy(-lr, &step),
                Optimizer::Momentum => {
                    velocity.map_inplace(|v| v * train.momentum);
                    velocity.axpy(1.0, &step);
                    params.axpy(-lr, &velocity);
                }
            }
            params.clamp_thresholds();
            epoch_loss += g.loss;
            seen += batch.len();
        }
        lr *= train.lr_decay;
        let fixed = evaluate(&params, support.as_ref(), &tests.fixed_x);
        let varying = evaluate(&params, support.as_ref(), &tests.varying_x);
        let (fixed, varying) = (fixed?, varying?);
        let train_loss = epoch_loss / seen as f64;
        if !train_loss.is_finite() || !fixed.recovery_err.is_finite() || !params.is_finite() {
            return Err(Error::Training {
                epoch,
                message: "loss became non-finite".into(),
            });
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            test_err_fixed_x: fixed.recovery_err,
            test_err_varying_x: varying.recovery_err,
        });
    }
    Ok(TrainResult {
        kind,
        params,
        support,
        history,
    })
}
