//! LASSO objective, soft-thresholding, ISTA and FISTA.

use std::time::{Duration, Instant};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::instance::SparseInstance;

pub const DEFAULT_ALPHA: f64 = 0.1;

/// `min_β ½‖y − Xβ‖² + α‖β‖₁`.
#[derive(Debug, Clone, PartialEq)]
pub struct LassoProblem {
    pub x: Array2<f64>,
    pub y: Array1<f64>,
    pub alpha: f64,
}

impl LassoProblem {
    pub fn new(x: Array2<f64>, y: Array1<f64>, alpha: f64) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::domain(format!(
                "X has {} rows but y has {} entries",
                x.nrows(),
                y.len()
            )));
        }
        if !(alpha >= 0.0) {
            return Err(Error::domain(format!("alpha must be >= 0, got {alpha}")));
        }
        Ok(LassoProblem { x, y, alpha })
    }

    pub fn from_instance(inst: &SparseInstance, alpha: f64) -> Result<Self> {
        Self::new(inst.x.clone(), inst.y.clone(), alpha)
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    /// `Xᵀ(Xβ − y)`.
    pub fn gradient(&self, beta: ArrayView1<f64>) -> Array1<f64> {
        let r = self.x.dot(&beta) - &self.y;
        self.x.t().dot(&r)
    }
}

/// Iterates of a solver from the zero initializer, with diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverTrace {
    /// `(K+1) × d`; row 0 is the initializer.
    pub betas: Array2<f64>,
    /// LASSO objective per iterate, when the solver has one.
    pub objectives: Option<Vec<f64>>,
    /// `‖β^(k) − β*‖₂` per iterate when the truth was supplied.
    pub errors_to_truth: Option<Vec<f64>>,
    pub wall_time: Duration,
}

impl SolverTrace {
    pub(crate) fn from_iterates(
        iterates: Vec<Array1<f64>>,
        problem: Option<&LassoProblem>,
        beta_star: Option<ArrayView1<f64>>,
        wall_time: Duration,
    ) -> Self {
        let d = iterates.first().map_or(0, |b| b.len());
        let mut betas = Array2::zeros((iterates.len(), d));
        for (mut row, b) in betas.rows_mut().into_iter().zip(&iterates) {
            row.assign(b);
        }
        let objectives =
            problem.map(|p| iterates.iter().map(|b| lasso_objective(b.view(), p)).collect());
        let errors_to_truth = beta_star.map(|bs| {
            iterates
                .iter()
                .map(|b| l2(&(b - &bs)))
                .collect::<Vec<f64>>()
        });
        SolverTrace {
            betas,
            objectives,
            errors_to_truth,
            wall_time,
        }
    }

    /// Number of updates `K`.
    pub fn iterations(&self) -> usize {
        self.betas.nrows() - 1
    }

    pub fn beta(&self, k: usize) -> ArrayView1<'_, f64> {
        self.betas.row(k)
    }

    pub fn last(&self) -> ArrayView1<'_, f64> {
        self.betas.row(self.betas.nrows() - 1)
    }

    /// CSV with columns `k,objective,err_l2`; `k` is 1-based like the iterate index.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,objective,err_l2\n");
        for k in 0..self.betas.nrows() {
            let obj = self
                .objectives
                .as_ref()
                .map_or(String::new(), |o| format!("{:e}", o[k]));
            let err = self
                .errors_to_truth
                .as_ref()
                .map_or(String::new(), |e| format!("{:e}", e[k]));
            out.push_str(&format!("{},{obj},{err}\n", k + 1));
        }
        out
    }
}

pub(crate) fn l2(v: &Array1<f64>) -> f64 {
    v.dot(v).sqrt()
}

pub(crate) fn l1(v: ArrayView1<f64>) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// Coordinate-wise `sign(x)·max(0, |x| − θ)`.
pub fn soft_threshold(x: ArrayView1<f64>, theta: f64) -> Result<Array1<f64>> {
    if !(theta >= 0.0) {
        return Err(Error::domain(format!("threshold must be >= 0, got {theta}")));
    }
    Ok(x.mapv(|v| shrink(v, theta)))
}

#[inline]
pub(crate) fn shrink(v: f64, theta: f64) -> f64 {
    if v > theta {
        v - theta
    } else if v < -theta {
        v + theta
    } else {
        0.0
    }
}

pub fn lasso_objective(beta: ArrayView1<f64>, problem: &LassoProblem) -> f64 {
    let r = &problem.y - &problem.x.dot(&beta);
    0.5 * r.dot(&r) + problem.alpha * l1(beta)
}

const POWER_MAX_ITERS: usize = 10_000;
const POWER_TOL: f64 = 1e-10;

/// `λ_max(XᵀX)` by power iteration on the Gram matrix.
///
/// Starts from the all-ones vector and from a fixed non-symmetric vector and
/// keeps the larger Rayleigh quotient, so a start orthogonal to the leading
/// eigenvector cannot silently return a smaller eigenvalue.
pub fn spectral_norm_sq(x: ArrayView2<f64>) -> Result<f64> {
    let gram = x.t().dot(&x);
    let scale = gram.diag().sum();
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::domain("spectral norm of a zero or non-finite matrix"));
    }
    let d = gram.nrows();
    let ones = Array1::ones(d);
    let tilted = Array1::from_shape_fn(d, |i| 1.0 + (i as f64 + 1.0).sin() / 2.0);
    let a = power_iteration(&gram, ones)?;
    let b = power_iteration(&gram, tilted)?;
    Ok(a.max(b))
}

fn power_iteration(gram: &Array2<f64>, start: Array1<f64>) -> Result<f64> {
    let mut v = start;
    let mut lambda = 0.0;
    let mut stalled = 0;
    let mut residual = f64::INFINITY;
    for _ in 0..POWER_MAX_ITERS {
        let norm = l2(&v);
        if norm == 0.0 {
            // start orthogonal to the range; the other start covers it
            return Ok(0.0);
        }
        v /= norm;
        let w = gram.dot(&v);
        let next = v.dot(&w);
        residual = l2(&(&w - &(next * &v)));
        if residual <= POWER_TOL * next.abs() {
            return Ok(next);
        }
        if (next - lambda).abs() <= 1e-13 * next.abs() {
            stalled += 1;
            // near-degenerate top pair: the quotient is converged even if
            // the vector keeps rotating inside the eigenspace
            if stalled >= 50 {
                return Ok(next);
            }
        } else {
            stalled = 0;
        }
        lambda = next;
        v = w;
    }
    Err(Error::numeric(format!(
        "power iteration did not converge in {POWER_MAX_ITERS} iterations (residual {residual:e})"
    )))
}

/// ISTA from `β^(1) = 0` with step `1/L`, `L = λ_max(XᵀX)`.
pub fn ista_solve(
    problem: &LassoProblem,
    k: usize,
    beta_star: Option<ArrayView1<f64>>,
) -> Result<SolverTrace> {
    let l = spectral_norm_sq(problem.x.view())?;
    ista_solve_with_l(problem, k, l, beta_star)
}

/// ISTA with a caller-supplied Lipschitz constant.
pub fn ista_solve_with_l(
    problem: &LassoProblem,
    k: usize,
    l: f64,
    beta_star: Option<ArrayView1<f64>>,
) -> Result<SolverTrace> {
    check_iterations(k, l)?;
    let start = Instant::now();
    let theta = problem.alpha / l;
    let mut iterates = Vec::with_capacity(k + 1);
    let mut beta = Array1::zeros(problem.d());
    iterates.push(beta.clone());
    for _ in 0..k {
        let g = problem.gradient(beta.view());
        beta = (&beta - &(g / l)).mapv(|v| shrink(v, theta));
        iterates.push(beta.clone());
    }
    Ok(SolverTrace::from_iterates(
        iterates,
        Some(problem),
        beta_star,
        start.elapsed(),
    ))
}

/// FISTA with `t₁ = 1`, `t_{k+1} = (1 + √(1 + 4t_k²))/2`.
pub fn fista_solve(
    problem: &LassoProblem,
    k: usize,
    beta_star: Option<ArrayView1<f64>>,
) -> Result<SolverTrace> {
    let l = spectral_norm_sq(problem.x.view())?;
    fista_solve_with_l(problem, k, l, beta_star)
}

pub fn fista_solve_with_l(
    problem: &LassoProblem,
    k: usize,
    l: f64,
    beta_star: Option<ArrayView1<f64>>,
) -> Result<SolverTrace> {
    check_iterations(k, l)?;
    let start = Instant::now();
    let theta = problem.alpha / l;
    let mut iterates = Vec::with_capacity(k + 1);
    let mut beta = Array1::zeros(problem.d());
    let mut z = beta.clone();
    let mut t = 1.0_f64;
    iterates.push(beta.clone());
    for _ in 0..k {
        let g = problem.gradient(z.view());
        let next = (&z - &(g / l)).mapv(|v| shrink(v, theta));
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        z = &next + &((&next - &beta) * ((t - 1.0) / t_next));
        beta = next;
        t = t_next;
        iterates.push(beta.clone());
    }
    Ok(SolverTrace::from_iterates(
        iterates,
        Some(problem),
        beta_star,
        start.elapsed(),
    ))
}

fn check_iterations(k: usize, l: f64) -> Result<()> {
    if k == 0 {
        return Err(Error::domain("iteration count K must be at least 1"));
    }
    if !(l > 0.0) || !l.is_finite() {
        return Err(Error::domain(format!("Lipschitz constant must be positive, got {l}")));
    }
    Ok(())
}

/// Largest violation of the LASSO optimality conditions at `beta`.
pub fn optimality_violation(beta: ArrayView1<f64>, problem: &LassoProblem) -> f64 {
    let g = problem.gradient(beta);
    beta.iter()
        .zip(g.iter())
        .map(|(&b, &gi)| {
            if b != 0.0 {
                (gi + problem.alpha * b.signum()).abs()
            } else {
                (gi.abs() - problem.alpha).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

/// Column norms of `X`, handy for building orthonormal test designs.
pub fn column_norms(x: ArrayView2<f64>) -> Array1<f64> {
    x.map_axis(Axis(0), |c| c.dot(&c).sqrt())
}
