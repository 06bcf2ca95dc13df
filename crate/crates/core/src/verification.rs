//! Numerical checks of the constructions and the convergence theory.

use ndarray::{s, Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classical::l1;
use crate::error::{Error, Result};
use crate::instance::SparseInstance;
use crate::learned::{
    batch_loss, default_normalizer, grad_unrolled, lista_vm_forward, lista_vm_ss_forward, Example,
    LearnedParams, ListaVmParams, SupportMask,
};
use crate::transformer::{embed_instance, extract_beta, forward, lista_vm_weights, Gate};

/// Iterates below this are treated as numerically converged.
pub const NUMERIC_FLOOR: f64 = 1e-12;
/// Reported rate when the contraction factor is exactly zero.
pub const RATE_CAP: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    /// `max_{k,n} ‖β_TF − β_LISTA-VM‖∞`.
    pub max_abs: f64,
    /// Same deviation divided by `max(1, ‖β_LISTA-VM‖∞)`.
    pub max_scaled: f64,
}

/// Runs the Transformer carrying `params` and LISTA-VM on every prefix
/// `n = 1..=N` with normalizer `2n+1`, and compares all iterates.
pub fn check_equivalence(inst: &SparseInstance, params: &ListaVmParams, gate: Gate) -> Result<EquivalenceReport> {
    let weights = lista_vm_weights(params, gate)?;
    let states = forward(&weights, &embed_instance(inst).h)?;
    let mut report = EquivalenceReport { max_abs: 0.0, max_scaled: 0.0 };
    for n in 1..=inst.n() {
        let trace = lista_vm_forward(
            params,
            inst.x.slice(s![..n, ..]),
            inst.y.slice(s![..n]),
            default_normalizer(n),
            None,
        )?;
        for (k, h) in states.iter().enumerate() {
            let reference = trace.beta(k);
            let dev = (&extract_beta(h, n)? - &reference).fold(0.0_f64, |a, v| a.max(v.abs()));
            let scale = reference.fold(1.0_f64, |a, v| a.max(v.abs()));
            report.max_abs = report.max_abs.max(dev);
            report.max_scaled = report.max_scaled.max(dev / scale);
        }
    }
    Ok(report)
}

/// Diagonal and off-diagonal magnitudes of `G = D_nᵀX` with
/// `D_n = (1/m)·X·(M^V)ᵀ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoherenceStats {
    /// `min_{i∈𝕊} |G_ii|`.
    pub sigma_min: f64,
    /// `max_{i∈𝕊} |G_ii|`.
    pub sigma_max_diag: f64,
    /// `max_{i≠j} |G_ij|`.
    pub mu_offdiag: f64,
    /// Signed extremes of the diagonal over all coordinates.
    pub diag_min_all: f64,
    pub diag_max_all: f64,
    pub n: usize,
}

pub fn coherence_stats(
    x_prefix: ArrayView2<f64>,
    m_v: ArrayView2<f64>,
    m: f64,
    support: Option<&[usize]>,
) -> Result<CoherenceStats> {
    let (n, d) = x_prefix.dim();
    if n == 0 {
        return Err(Error::domain("coherence of an empty prefix"));
    }
    if m_v.dim() != (d, d) {
        return Err(Error::domain("M^V must be d × d"));
    }
    let dn = x_prefix.dot(&m_v.t()) / m;
    let g = dn.t().dot(&x_prefix);
    let all: Vec<usize> = (0..d).collect();
    let support = support.unwrap_or(&all);
    if support.is_empty() || support.iter().any(|&i| i >= d) {
        return Err(Error::domain("support must be a nonempty subset of 0..d"));
    }
    let diag = g.diag();
    let sigma_min = support.iter().map(|&i| diag[i].abs()).fold(f64::INFINITY, f64::min);
    let sigma_max_diag = support.iter().map(|&i| diag[i].abs()).fold(0.0, f64::max);
    let mut mu = 0.0_f64;
    for ((i, j), &v) in g.indexed_iter() {
        if i != j {
            mu = mu.max(v.abs());
        }
    }
    Ok(CoherenceStats {
        sigma_min,
        sigma_max_diag,
        mu_offdiag: mu,
        diag_min_all: diag.fold(f64::INFINITY, |a, &v| a.min(v)),
        diag_max_all: diag.fold(f64::NEG_INFINITY, |a, &v| a.max(v)),
        n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    /// `γ(2S−1)·μ + |1 − γ·σ_min|`.
    pub lhs: f64,
    /// `lhs ≤ 1` and `0 ≤ γ·G_ii ≤ 1` for every coordinate.
    pub passes: bool,
    /// `−ln(lhs)`, capped at [`RATE_CAP`].
    pub implied_rate: f64,
}

pub fn check_condition(stats: &CoherenceStats, gamma: f64, sparsity: usize) -> ConditionReport {
    let s = sparsity.max(1) as f64;
    let lhs = gamma * (2.0 * s - 1.0) * stats.mu_offdiag + (1.0 - gamma * stats.sigma_min).abs();
    let per_coordinate = gamma * stats.diag_min_all >= 0.0 && gamma * stats.diag_max_all <= 1.0;
    let implied_rate = if lhs > 0.0 { (-lhs.ln()).min(RATE_CAP) } else { RATE_CAP };
    ConditionReport {
        lhs,
        passes: lhs <= 1.0 && per_coordinate,
        implied_rate,
    }
}

/// Least-squares fit of `ln err_k` against `k` before the numeric floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub r2: f64,
    /// First index at or below the floor, if any.
    pub floor_k: Option<usize>,
    /// Fewer than four iterates above the floor.
    pub degenerate: bool,
}

pub fn convergence_rate(errors: &[f64]) -> RateFit {
    let floor_k = errors.iter().position(|&e| e <= NUMERIC_FLOOR);
    let usable = &errors[..floor_k.unwrap_or(errors.len())];
    if usable.len() < 4 {
        return RateFit { slope: f64::NAN, r2: f64::NAN, floor_k, degenerate: true };
    }
    let n = usable.len() as f64;
    let ks: Vec<f64> = (0..usable.len()).map(|k| k as f64).collect();
    let ls: Vec<f64> = usable.iter().map(|e| e.ln()).collect();
    let mk = ks.iter().sum::<f64>() / n;
    let ml = ls.iter().sum::<f64>() / n;
    let sxx: f64 = ks.iter().map(|k| (k - mk).powi(2)).sum();
    let sxy: f64 = ks.iter().zip(&ls).map(|(k, l)| (k - mk) * (l - ml)).sum();
    let syy: f64 = ls.iter().map(|l| (l - ml).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    RateFit { slope, r2, floor_k, degenerate: false }
}

/// Per-iterate record of the ℓ₁ contraction recursion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    pub condition: ConditionReport,
    pub stats: CoherenceStats,
    pub thetas: Vec<f64>,
    /// `‖β^(k) − β*‖₁`, `k = 1..=K+1`.
    pub errors_l1: Vec<f64>,
    /// Iterates where `‖e_{k+1}‖₁ ≤ lhs·‖e_k‖₁ + S·θ_k` failed.
    pub violations: usize,
    pub fit: RateFit,
}

/// Thresholds `θ_k = γ·μ·‖β*‖₁·lhs^(k−1)` for which the recursion provably
/// never activates a coordinate outside the support of `β*`.
pub fn contraction_schedule(stats: &CoherenceStats, report: &ConditionReport, gamma: f64, beta_l1: f64, layers: usize) -> Vec<f64> {
    (0..layers)
        .map(|k| gamma * stats.mu_offdiag * beta_l1 * report.lhs.powi(k as i32))
        .collect()
}

/// LISTA-VM with `M_k = γ·M^V`, `M^V = (2/σ_d²)·I`, on the whole context,
/// checked against the ℓ₁ contraction recursion.
pub fn contraction_check(inst: &SparseInstance, gamma: f64, sigma_d: f64, layers: usize) -> Result<ContractionReport> {
    let d = inst.d();
    let n = inst.n();
    let m = default_normalizer(n);
    let m_v = Array2::<f64>::eye(d) * (2.0 / (sigma_d * sigma_d));
    let stats = coherence_stats(inst.x.view(), m_v.view(), m, None)?;
    let s = inst.sparsity();
    let condition = check_condition(&stats, gamma, s);
    let c1 = l1(inst.beta_star.view());
    let thetas = contraction_schedule(&stats, &condition, gamma, c1, layers);
    let params = ListaVmParams::new(vec![m_v * gamma; layers], thetas.clone())?;
    let trace = lista_vm_forward(&params, inst.x.view(), inst.y.view(), m, None)?;
    let errors_l1: Vec<f64> = trace
        .betas
        .rows()
        .into_iter()
        .map(|b| l1((&b - &inst.beta_star).view()))
        .collect();
    let mut violations = 0;
    for k in 0..layers {
        let bound = condition.lhs * errors_l1[k] + s as f64 * thetas[k];
        if errors_l1[k + 1] > bound * (1.0 + 1e-12) + 1e-15 {
            violations += 1;
        }
    }
    let fit = convergence_rate(&errors_l1);
    Ok(ContractionReport { condition, stats, thetas, errors_l1, violations, fit })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FdReport {
    /// `max_i |g_i − fd_i| / max(|g_i|, |fd_i|, floor)`.
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Smallest `||pre| − θ|` over every soft-threshold input.
    pub kink_distance: f64,
    pub parameters: usize,
    /// No kink-free batch was found.
    pub inconclusive: bool,
}

/// Distance of the nearest soft-threshold input to its kink.
pub fn kink_distance(params: &LearnedParams, support: Option<&SupportMask>, batch: &[Example]) -> Result<f64> {
    let mut worst = f64::INFINITY;
    for ex in batch {
        let run = crate::learned::unroll_for_checks(params, support, ex)?;
        for (pre, &theta) in run.iter().zip(params.thetas()) {
            for &p in pre.iter() {
                worst = worst.min((p.abs() - theta).abs());
            }
        }
    }
    Ok(worst)
}

/// Central differences on every parameter against the reverse-mode gradient.
/// `floor` guards the relative error of near-zero components.
pub fn finite_diff_check(
    params: &LearnedParams,
    support: Option<&SupportMask>,
    batch: &[Example],
    h: f64,
    floor: f64,
) -> Result<FdReport> {
    let analytic = grad_unrolled(params, support, batch)?.grads.to_flat();
    let base = params.to_flat();
    let fd: Vec<f64> = (0..base.len())
        .into_par_iter()
        .map(|i| {
            let mut q = params.clone();
            let mut v = base.clone();
            v[i] = base[i] + h;
            q.set_flat(&v)?;
            let up = batch_loss(&q, support, batch)?;
            v[i] = base[i] - h;
            q.set_flat(&v)?;
            let down = batch_loss(&q, support, batch)?;
            Ok((up - down) / (2.0 * h))
        })
        .collect::<Result<_>>()?;
    let mut max_rel: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    for (a, f) in analytic.iter().zip(&fd) {
        let diff = (a - f).abs();
        max_abs = max_abs.max(diff);
        max_rel = max_rel.max(diff / a.abs().max(f.abs()).max(floor));
    }
    Ok(FdReport {
        max_rel_err: max_rel,
        max_abs_err: max_abs,
        kink_distance: kink_distance(params, support, batch)?,
        parameters: base.len(),
        inconclusive: false,
    })
}

/// Minimum kink distance for a conclusive finite-difference comparison.
pub const KINK_MARGIN: f64 = 1e-4;
const KINK_RESAMPLES: usize = 10;

/// Draws batches with `sample(attempt)` until one keeps every
/// soft-threshold input at least [`KINK_MARGIN`] from its kink, then runs
/// [`finite_diff_check`]. After ten failed draws the report is inconclusive.
pub fn finite_diff_check_resampled(
    params: &LearnedParams,
    support: Option<&SupportMask>,
    mut sample: impl FnMut(usize) -> Result<Vec<Example>>,
    h: f64,
    floor: f64,
) -> Result<FdReport> {
    for attempt in 0..KINK_RESAMPLES {
        let batch = sample(attempt)?;
        if kink_distance(params, support, &batch)? >= KINK_MARGIN {
            return finite_diff_check(params, support, &batch, h, floor);
        }
    }
    Ok(FdReport {
        max_rel_err: f64::NAN,
        max_abs_err: f64::NAN,
        kink_distance: 0.0,
        parameters: params.len(),
        inconclusive: true,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportReport {
    pub vm_err: f64,
    pub ss_err: f64,
    /// `ss_err / vm_err`.
    pub ratio: f64,
    /// Largest `|β^(k)_i|` outside the support over all iterates of LISTA-VM-SS.
    pub leak: f64,
}

/// LISTA-VM against LISTA-VM-SS with identical parameters on the full context.
pub fn support_variant_check(inst: &SparseInstance, params: &ListaVmParams, support: &[usize]) -> Result<SupportReport> {
    let m = default_normalizer(inst.n());
    let bs = Some(inst.beta_star.view());
    let vm = lista_vm_forward(params, inst.x.view(), inst.y.view(), m, bs)?;
    let ss = lista_vm_ss_forward(params, support, inst.x.view(), inst.y.view(), m, bs)?;
    let mask = SupportMask::new(inst.d(), support)?;
    let mut leak = 0.0_f64;
    for row in ss.betas.rows() {
        for (i, &v) in row.iter().enumerate() {
            if !mask.contains(i) {
                leak = leak.max(v.abs());
            }
        }
    }
    let last = |t: &crate::classical::SolverTrace| *t.errors_to_truth.as_ref().expect("truth supplied").last().expect("nonempty");
    let (vm_err, ss_err) = (last(&vm), last(&ss));
    Ok(SupportReport { vm_err, ss_err, ratio: ss_err / vm_err, leak })
}

/// Ordinary least squares of `ln y` on `ln x`; returns `(slope, r²)`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> (f64, f64) {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = ly.iter().map(|v| (v - my).powi(2)).sum();
    (sxy / sxx, sxy * sxy / (sxx * syy))
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}
