use ndarray::{Array1, Array2, ArrayView2};
use rayon::prelude::*;

use super::forward::{default_normalizer, unroll_cp, unroll_lista, unroll_vm, SupportMask, Unrolled};
use super::params::LearnedParams;
use crate::error::{Error, Result};
use crate::instance::SparseInstance;

/// One training pair: a (prefix of a) measurement matrix, its observations
/// and the sparse truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub x: Array2<f64>,
    pub y: Array1<f64>,
    pub beta_star: Array1<f64>,
}

impl Example {
    pub fn from_instance(inst: &SparseInstance) -> Self {
        Example {
            x: inst.x.clone(),
            y: inst.y.clone(),
            beta_star: inst.beta_star.clone(),
        }
    }

    /// First `n` demonstrations only.
    pub fn prefix(inst: &SparseInstance, n: usize) -> Self {
        let n = n.min(inst.n());
        Example {
            x: inst.x.slice(ndarray::s![..n, ..]).to_owned(),
            y: inst.y.slice(ndarray::s![..n]).to_owned(),
            beta_star: inst.beta_star.clone(),
        }
    }
}

/// Loss `Σ_j ‖β̂_j − β*_j‖²` and its gradient with respect to every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub grads: LearnedParams,
    pub loss: f64,
}

pub(crate) fn unroll(params: &LearnedParams, support: Option<&SupportMask>, ex: &Example) -> Result<Unrolled> {
    match params {
        LearnedParams::Lista(p) => unroll_lista(p, ex.x.view(), ex.y.view()),
        LearnedParams::ListaCp(p) => unroll_cp(p, ex.x.view(), ex.y.view()),
        LearnedParams::ListaVm(p) => unroll_vm(p, ex.x.view(), ex.y.view(), default_normalizer(ex.x.nrows()), support),
    }
}

/// Reverse-mode gradient through the unrolled layers. The soft-threshold
/// derivative is 1 where `|pre| > θ` and 0 elsewhere, including the kink.
pub fn grad_unrolled(
    params: &LearnedParams,
    support: Option<&SupportMask>,
    batch: &[Example],
) -> Result<Gradient> {
    if batch.is_empty() {
        return Err(Error::domain("gradient of an empty batch"));
    }
    let parts: Vec<Gradient> = batch
        .par_iter()
        .map(|ex| grad_one(params, support, ex))
        .collect::<Result<_>>()?;
    let mut total = params.zeros_like();
    let mut loss = 0.0;
    for part in &parts {
        total.axpy(1.0, &part.grads);
        loss += part.loss;
    }
    Ok(Gradient { grads: total, loss })
}

/// Soft-threshold inputs of every layer, for kink-proximity checks.
pub fn unroll_for_checks(params: &LearnedParams, support: Option<&SupportMask>, ex: &Example) -> Result<Vec<Array1<f64>>> {
    Ok(unroll(params, support, ex)?.pres)
}

/// Loss only.
pub fn batch_loss(params: &LearnedParams, support: Option<&SupportMask>, batch: &[Example]) -> Result<f64> {
    let losses: Vec<f64> = batch
        .par_iter()
        .map(|ex| {
            let run = unroll(params, support, ex)?;
            let e = run.output() - &ex.beta_star;
            Ok(e.dot(&e))
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum())
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let a2 = a.view().insert_axis(ndarray::Axis(1));
    let b2 = b.view().insert_axis(ndarray::Axis(0));
    a2.dot(&b2)
}

fn grad_one(params: &LearnedParams, support: Option<&SupportMask>, ex: &Example) -> Result<Gradient> {
    let run = unroll(params, support, ex)?;
    let err = run.output() - &ex.beta_star;
    let loss = err.dot(&err);
    let mut g = err * 2.0;
    let mut grads = params.zeros_like();
    let thetas = params.thetas().to_vec();
    let restricted;
    let x: ArrayView2<f64> = match (params, support) {
        (LearnedParams::ListaVm(_), Some(mask)) => {
            restricted = mask.restrict_columns(ex.x.view());
            restricted.view()
        }
        _ => ex.x.view(),
    };
    let m = default_normalizer(x.nrows());

    for k in (0..thetas.len()).rev() {
        let pre = &run.pres[k];
        let theta = thetas[k];
        let mut g_pre = g.clone();
        let mut g_theta = 0.0;
        for (gp, &p) in g_pre.iter_mut().zip(pre.iter()) {
            if p.abs() > theta {
                g_theta -= p.signum() * *gp;
            } else {
                *gp = 0.0;
            }
        }
        let beta = &run.betas[k];
        g = match (params, &mut grads) {
            (LearnedParams::ListaVm(p), LearnedParams::ListaVm(gr)) => {
                let r = x.t().dot(&(x.dot(beta) - &ex.y));
                let mut gs = g_pre.clone();
                if let Some(mask) = support {
                    mask.apply(&mut gs);
                }
                gr.m[k].scaled_add(-1.0 / m, &outer(&gs, &r));
                gr.theta[k] = g_theta;
                let back = x.t().dot(&x.dot(&p.m[k].t().dot(&gs)));
                g_pre - back / m
            }
            (LearnedParams::ListaCp(p), LearnedParams::ListaCp(gr)) => {
                let r = x.dot(beta) - &ex.y;
                gr.d[k].scaled_add(-1.0, &outer(&r, &g_pre));
                gr.theta[k] = g_theta;
                let back = x.t().dot(&p.d[k].dot(&g_pre));
                g_pre - back
            }
            (LearnedParams::Lista(p), LearnedParams::Lista(gr)) => {
                gr.w1[k].scaled_add(1.0, &outer(&g_pre, &ex.y));
                gr.w2[k].scaled_add(1.0, &outer(&g_pre, beta));
                gr.theta[k] = g_theta;
                p.w2[k].t().dot(&g_pre)
            }
            _ => unreachable!("zeros_like keeps the variant"),
        };
    }
    Ok(Gradient { grads, loss })
}
