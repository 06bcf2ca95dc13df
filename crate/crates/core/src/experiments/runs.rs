use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rayon::prelude::*;

use super::artifacts::{Chart, Curve};
use super::config::{ExperimentConfig, ExperimentKind, SolverKind, SolverSpec};
use crate::classical::{fista_solve, ista_solve, LassoProblem, DEFAULT_ALPHA};
use crate::error::{Error, Result};
use crate::instance::{sample_instance, sample_measurements, InstanceConfig, SparseInstance};
use crate::learned::{
    learned_trace, meta_train, training_matrix, LearnedParams, ListaVmParams, SupportMask, TestSet,
    TrainConfig, TrainResult,
};
use crate::seed;
use crate::transformer::{
    embed_instance, empirical_gate, extract_beta, final_average_layer, forward, lista_vm_weights,
    readout_linear, readout_query, Gate, TransformerWeights,
};
use crate::verification::{coherence_stats, contraction_check, log_log_slope, median};

const STREAM_TEST: u64 = 11;
const STREAM_GATE: u64 = 12;
const STREAM_ROWS: u64 = 13;

/// Curves, chart labels and scalar summaries of one run.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub curves: Vec<Curve>,
    pub chart: Chart,
    pub summary: BTreeMap<String, f64>,
    /// Name of the plotted quantity.
    pub metric: &'static str,
    /// How instances and seeds are reduced.
    pub aggregation: &'static str,
    pub x_name: &'static str,
}

/// Mean and standard error; the error is zero below two samples.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn mean_curve(series: String, xs: &[f64], per_seed: &[Vec<f64>]) -> Curve {
    let mut c = Curve::new(series);
    for (i, &x) in xs.iter().enumerate() {
        let col: Vec<f64> = per_seed.iter().map(|v| v[i]).collect();
        let (m, se) = mean_stderr(&col);
        c.push(x, m, se);
    }
    c
}

/// A solver ready to run on instances.
#[derive(Debug, Clone)]
pub enum Realized {
    Classical { fista: bool, alpha: f64, iterations: usize },
    Learned { params: LearnedParams, support: Option<SupportMask> },
    Transformer { weights: TransformerWeights },
}

impl Realized {
    /// Iterates `β^(1) … β^(K+1)` on the full context, one per row.
    pub fn iterates(&self, inst: &SparseInstance) -> Result<Array2<f64>> {
        match self {
            Realized::Classical { fista, alpha, iterations } => {
                let p = LassoProblem::from_instance(inst, *alpha)?;
                let t = if *fista { fista_solve(&p, *iterations, None)? } else { ista_solve(&p, *iterations, None)? };
                Ok(t.betas)
            }
            Realized::Learned { params, support } => {
                Ok(learned_trace(params, support.as_ref(), inst.x.view(), inst.y.view(), None)?.betas)
            }
            Realized::Transformer { weights } => {
                let states = forward(weights, &embed_instance(inst).h)?;
                let mut out = Array2::zeros((states.len(), inst.d()));
                for (mut row, h) in out.rows_mut().into_iter().zip(&states) {
                    row.assign(&extract_beta(h, inst.n())?);
                }
                Ok(out)
            }
        }
    }
}

/// Training configuration of a roster entry.
pub fn solver_training(spec: &SolverSpec, instance: &InstanceConfig, base: &TrainConfig, seed: u64) -> (InstanceConfig, TrainConfig) {
    let mut cfg = instance.clone();
    if spec.train_unrestricted {
        cfg.support_set = None;
    }
    let mut t = base.clone();
    t.seed = seed;
    t.fixed_x = spec.fixed_x();
    t.support_set = if spec.solver == SolverKind::ListaVmSs { instance.support_set.clone() } else { None };
    (cfg, t)
}

/// Gate from the configured norm bounds, or ten times the largest
/// calibration inner product when that bound overflows.
pub fn transformer_gate(params: &ListaVmParams, cfg: &InstanceConfig, seed: u64) -> Result<Gate> {
    let bound = Gate::ProofBound { b_beta: cfg.beta_l1_bound(), b_x: cfg.x_norm_bound() };
    match lista_vm_weights(params, bound) {
        Ok(_) => Ok(bound),
        Err(Error::Numeric { .. }) => {
            let cal: Vec<SparseInstance> = (0..50)
                .map(|i| sample_instance(cfg, seed::derive_path(seed, &[STREAM_GATE, i])))
                .collect::<Result<_>>()?;
            Ok(Gate::Fixed(empirical_gate(params, &cal, 10.0)?))
        }
        Err(e) => Err(e),
    }
}

/// Trains (when needed) and wraps one roster entry.
pub fn realize(spec: &SolverSpec, config: &ExperimentConfig, seed: u64) -> Result<(Realized, Option<TrainResult>)> {
    let layers = config.layers();
    match spec.solver {
        SolverKind::Ista | SolverKind::Fista => Ok((
            Realized::Classical {
                fista: spec.solver == SolverKind::Fista,
                alpha: spec.alpha.unwrap_or(DEFAULT_ALPHA),
                iterations: layers,
            },
            None,
        )),
        kind => {
            let mut base = config.effective_training();
            if config.experiment == ExperimentKind::Fig1c && base.prefix_min.is_none() {
                base.prefix_min = Some(1);
            }
            let (cfg, t) = solver_training(spec, &config.instance, &base, seed);
            let model = kind.model().expect("learned solver");
            let trained = meta_train(model, &cfg, &t)?;
            let realized = if kind == SolverKind::Transformer {
                let LearnedParams::ListaVm(p) = &trained.params else { unreachable!("transformer carries LISTA-VM") };
                let gate = transformer_gate(p, &cfg, seed)?;
                Realized::Transformer { weights: lista_vm_weights(p, gate)? }
            } else {
                Realized::Learned { params: trained.params.clone(), support: trained.support.clone() }
            };
            Ok((realized, Some(trained)))
        }
    }
}

/// Squared query error `(y_q − x_qᵀβ^(k))²` per iterate, averaged over
/// instances; also the final mean squared recovery error.
pub fn prediction_curve(solver: &Realized, instances: &[SparseInstance]) -> Result<(Vec<f64>, f64)> {
    let per: Vec<(Array1<f64>, f64)> = instances
        .par_iter()
        .map(|inst| {
            let betas = solver.iterates(inst)?;
            let pred = betas.dot(&inst.x_query);
            let loss = pred.mapv(|p| (inst.y_query - p).powi(2));
            let last = betas.row(betas.nrows() - 1);
            let e = &last - &inst.beta_star;
            Ok((loss, e.dot(&e)))
        })
        .collect::<Result<_>>()?;
    let n = per.len() as f64;
    let mut acc = Array1::<f64>::zeros(per[0].0.len());
    for (l, _) in &per {
        acc += l;
    }
    Ok(((acc / n).to_vec(), per.iter().map(|p| p.1).sum::<f64>() / n))
}

fn fig1ab(config: &ExperimentConfig) -> Result<Outcome> {
    let seeds = config.seeds.expand();
    let count = config.effective_test_instances();
    let layers = config.layers();
    let xs: Vec<f64> = (0..=layers).map(|k| k as f64).collect();
    let mut curves = Vec::new();
    let mut summary = BTreeMap::new();
    for spec in &config.roster {
        let label = spec.label();
        let mut fixed = Vec::new();
        let mut varying = Vec::new();
        let mut recovery = Vec::new();
        for &s in &seeds {
            let (solver, trained) = realize(spec, config, s)?;
            let test_seed = seed::derive(s, STREAM_TEST);
            let shared = match &trained {
                Some(_) if spec.fixed_x() => {
                    let (cfg, t) = solver_training(spec, &config.instance, &config.effective_training(), s);
                    Some(training_matrix(&cfg, t.seed))
                }
                _ => None,
            };
            let tests = TestSet::sample(&config.instance, count, test_seed, shared.as_ref())?;
            let (f, _) = prediction_curve(&solver, &tests.fixed_x)?;
            let (v, r) = prediction_curve(&solver, &tests.varying_x)?;
            fixed.push(f);
            varying.push(v);
            recovery.push(r);
        }
        let fc = mean_curve(format!("{label}/fixed_x"), &xs, &fixed);
        let vc = mean_curve(format!("{label}/varying_x"), &xs, &varying);
        summary.insert(format!("{label}/fixed_x/final"), fc.points[layers].value);
        summary.insert(format!("{label}/varying_x/final"), vc.points[layers].value);
        summary.insert(format!("{label}/varying_x/recovery_err"), mean_stderr(&recovery).0);
        curves.push(fc);
        curves.push(vc);
    }
    let title = if config.experiment == ExperimentKind::Fig1b { "Prediction loss, restricted support" } else { "Prediction loss" };
    Ok(Outcome {
        curves,
        chart: Chart { title: title.into(), x_label: "layer k".into(), y_label: "mean prediction loss".into(), log_x: false },
        summary,
        metric: "(y_query - x_query^T beta^(k))^2",
        aggregation: "mean over test instances, then mean over seeds; stderr over seeds",
        x_name: "k",
    })
}

/// Absolute read-out errors `(|y − ŷ_linear|, |y − ŷ_query|)` for predicting
/// `y_{n+1}` from prefix `n`, for each requested `n` (`n = N` targets the query).
pub fn readout_errors(weights: &TransformerWeights, inst: &SparseInstance, ns: &[usize]) -> Result<Vec<(f64, f64)>> {
    let states = forward(weights, &embed_instance(inst).h)?;
    let last = states.last().expect("input state");
    let averaged = final_average_layer(last)?;
    ns.iter()
        .map(|&n| {
            if n == 0 || n > inst.n() {
                return Err(Error::domain(format!("prefix {n} outside 1..={}", inst.n())));
            }
            let y = if n == inst.n() { inst.y_query } else { inst.y[n] };
            let lin = readout_linear(&averaged, n)?;
            let qry = readout_query(last, n + 1)?;
            Ok(((y - lin).abs(), (y - qry).abs()))
        })
        .collect()
}

fn default_fig1c_sweep(n: usize) -> Vec<usize> {
    let mut v: Vec<usize> = [n / 8, n / 4, n / 2, n].into_iter().map(|k| k.max(1)).collect();
    v.dedup();
    v
}

fn fig1c(config: &ExperimentConfig) -> Result<Outcome> {
    let seeds = config.seeds.expand();
    let spec = config.roster.iter().find(|s| s.solver == SolverKind::Transformer).expect("validated");
    let ns = config.sweep.clone().unwrap_or_else(|| default_fig1c_sweep(config.instance.n_measurements));
    let (solver, _) = realize(spec, config, seeds[0])?;
    let Realized::Transformer { weights } = solver else { unreachable!("transformer entry") };
    let per: Vec<Vec<(f64, f64)>> = seeds
        .par_iter()
        .map(|&s| readout_errors(&weights, &sample_instance(&config.instance, s)?, &ns))
        .collect::<Result<_>>()?;
    let xs: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    let lin: Vec<Vec<f64>> = per.iter().map(|r| r.iter().map(|p| p.0).collect()).collect();
    let qry: Vec<Vec<f64>> = per.iter().map(|r| r.iter().map(|p| p.1).collect()).collect();
    let lc = mean_curve("linear".into(), &xs, &lin);
    let qc = mean_curve("query".into(), &xs, &qry);
    let mut summary = BTreeMap::new();
    let gaps: Vec<f64> = lc.points.iter().zip(&qc.points).map(|(a, b)| a.value - b.value).collect();
    for (n, g) in ns.iter().zip(&gaps) {
        summary.insert(format!("gap/n={n}"), *g);
    }
    summary.insert("gap_ratio_last_first".into(), gaps[gaps.len() - 1] / gaps[0]);
    summary.insert("query_le_linear_everywhere".into(), if gaps.iter().all(|&g| g >= 0.0) { 1.0 } else { 0.0 });
    Ok(Outcome {
        curves: vec![lc, qc],
        chart: Chart { title: "Read-out error".into(), x_label: "prefix length n".into(), y_label: "mean |y - y_hat|".into(), log_x: false },
        summary,
        metric: "|y_{n+1} - y_hat| from prefix n",
        aggregation: "mean over seeds (one instance per seed); stderr over seeds",
        x_name: "n",
    })
}

fn convergence_k(config: &ExperimentConfig) -> Result<Outcome> {
    let seeds = config.seeds.expand();
    let gamma = config.gamma.unwrap_or(0.8);
    let layers = config.layers.unwrap_or(30);
    let sigma_d = config.instance.sigma_min_sq().sqrt();
    let reports = seeds
        .par_iter()
        .map(|&s| contraction_check(&sample_instance(&config.instance, s)?, gamma, sigma_d, layers))
        .collect::<Result<Vec<_>>>()?;
    let passing: Vec<_> = reports.iter().filter(|r| r.condition.passes).collect();
    let mut summary = BTreeMap::new();
    summary.insert("instances".into(), reports.len() as f64);
    summary.insert("condition_passes".into(), passing.len() as f64);
    summary.insert("violations".into(), passing.iter().map(|r| r.violations as f64).sum());
    let fits: Vec<_> = passing.iter().filter(|r| !r.fit.degenerate).collect();
    if !fits.is_empty() {
        summary.insert("max_slope_plus_rate".into(), fits.iter().map(|r| r.fit.slope + r.condition.implied_rate).fold(f64::NEG_INFINITY, f64::max));
        summary.insert("min_r2".into(), fits.iter().map(|r| r.fit.r2).fold(f64::INFINITY, f64::min));
    }
    if passing.is_empty() {
        return Err(Error::numeric("no instance satisfies the contraction condition"));
    }
    let xs: Vec<f64> = (1..=layers + 1).map(|k| k as f64).collect();
    let errs: Vec<Vec<f64>> = passing.iter().map(|r| r.errors_l1.clone()).collect();
    let bounds: Vec<Vec<f64>> = passing
        .iter()
        .map(|r| {
            let s = r.errors_l1.len();
            let mut b = vec![r.errors_l1[0]];
            for k in 1..s {
                b.push(r.condition.lhs * r.errors_l1[k - 1] + config.instance.sparsity as f64 * r.thetas[k - 1]);
            }
            b
        })
        .collect();
    Ok(Outcome {
        curves: vec![mean_curve("err_l1".into(), &xs, &errs), mean_curve("recursion_bound".into(), &xs, &bounds)],
        chart: Chart { title: "Contraction of the l1 error".into(), x_label: "iterate k".into(), y_label: "||beta^(k) - beta*||_1".into(), log_x: false },
        summary,
        metric: "||beta^(k) - beta*||_1",
        aggregation: "mean over condition-passing seeds; stderr over those seeds",
        x_name: "k",
    })
}

fn coherence_decay(config: &ExperimentConfig) -> Result<Outcome> {
    let seeds = config.seeds.expand();
    let ns = config.sweep.clone().unwrap_or_else(|| vec![50, 100, 200, 400, 800, 1600, 3200]);
    let d = config.instance.d;
    let m_v = Array2::<f64>::eye(d) * (2.0 / config.instance.sigma_min_sq());
    let mut curves = vec![Curve::new("mu_offdiag"), Curve::new("sigma_min"), Curve::new("sigma_max_diag")];
    let mut medians = Vec::new();
    for &n in &ns {
        let stats = seeds
            .par_iter()
            .map(|&s| {
                let mut rng = seed::rng(seed::derive_path(s, &[STREAM_ROWS, n as u64]));
                let x = sample_measurements(&config.instance, n, &mut rng);
                coherence_stats(x.view(), m_v.view(), (2 * n + 1) as f64, None)
            })
            .collect::<Result<Vec<_>>>()?;
        let columns: [Vec<f64>; 3] = [
            stats.iter().map(|s| s.mu_offdiag).collect(),
            stats.iter().map(|s| s.sigma_min).collect(),
            stats.iter().map(|s| s.sigma_max_diag).collect(),
        ];
        for (curve, mut col) in curves.iter_mut().zip(columns) {
            let (_, se) = mean_stderr(&col);
            let med = median(&mut col);
            curve.push(n as f64, med, se);
        }
        medians.push(curves[0].points.last().expect("pushed").value);
    }
    let xs: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    let mut summary = BTreeMap::new();
    if ns.len() >= 2 {
        let (slope, r2) = log_log_slope(&xs, &medians);
        summary.insert("mu_slope".into(), slope);
        summary.insert("mu_r2".into(), r2);
    }
    Ok(Outcome {
        curves,
        chart: Chart { title: "Coherence of D_n^T X".into(), x_label: "rows n".into(), y_label: "median over seeds".into(), log_x: true },
        summary,
        metric: "entries of D_n^T X with D_n = X (M^V)^T / (2n+1)",
        aggregation: "median over seeds; stderr of the mean over seeds",
        x_name: "n",
    })
}

fn meta_train_compare(config: &ExperimentConfig) -> Result<Outcome> {
    let seeds = config.seeds.expand();
    let mut curves = Vec::new();
    let mut summary = BTreeMap::new();
    for spec in config.roster.iter().filter(|s| s.solver.model().is_some()) {
        let label = spec.label();
        let mut fixed = Vec::new();
        let mut varying = Vec::new();
        for &s in &seeds {
            let mut base = config.effective_training();
            base.test_instances = config.effective_test_instances();
            let (cfg, t) = solver_training(spec, &config.instance, &base, s);
            let r = meta_train(spec.solver.model().expect("learned"), &cfg, &t)?;
            fixed.push(r.history.iter().map(|e| e.test_err_fixed_x).collect::<Vec<_>>());
            varying.push(r.history.iter().map(|e| e.test_err_varying_x).collect::<Vec<_>>());
        }
        let xs: Vec<f64> = (1..=fixed[0].len()).map(|e| e as f64).collect();
        let fc = mean_curve(format!("{label}/fixed_x"), &xs, &fixed);
        let vc = mean_curve(format!("{label}/varying_x"), &xs, &varying);
        summary.insert(format!("{label}/fixed_x/final"), fc.points.last().expect("epochs").value);
        summary.insert(format!("{label}/varying_x/final"), vc.points.last().expect("epochs").value);
        curves.push(fc);
        curves.push(vc);
    }
    Ok(Outcome {
        curves,
        chart: Chart { title: "Meta-training".into(), x_label: "epoch".into(), y_label: "mean ||beta_hat - beta*||^2".into(), log_x: false },
        summary,
        metric: "||beta_hat - beta*||^2 on held-out instances after each epoch",
        aggregation: "mean over test instances, then mean over seeds; stderr over seeds",
        x_name: "epoch",
    })
}

pub fn compute(config: &ExperimentConfig) -> Result<Outcome> {
    match config.experiment {
        ExperimentKind::Fig1a | ExperimentKind::Fig1b => fig1ab(config),
        ExperimentKind::Fig1c => fig1c(config),
        ExperimentKind::ConvergenceK => convergence_k(config),
        ExperimentKind::CoherenceDecay => coherence_decay(config),
        ExperimentKind::MetaTrainCompare => meta_train_compare(config),
    }
}
