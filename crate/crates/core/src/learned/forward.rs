use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use super::params::{LearnedParams, ListaCpParams, ListaParams, ListaVmParams};
use crate::classical::{shrink, SolverTrace};
use crate::error::{Error, Result};

/// Embedding length for a prefix of `n` demonstrations, `2n + 1`.
pub fn default_normalizer(n: usize) -> f64 {
    (2 * n + 1) as f64
}

/// Iterates and pre-activations of one unrolled pass, kept for backprop.
#[derive(Debug, Clone)]
pub(crate) struct Unrolled {
    /// `β^(1) … β^(K+1)`.
    pub betas: Vec<Array1<f64>>,
    /// Argument of the soft-threshold in each layer.
    pub pres: Vec<Array1<f64>>,
}

impl Unrolled {
    fn run(k: usize, d: usize, mut pre: impl FnMut(usize, &Array1<f64>) -> Array1<f64>, theta: &[f64]) -> Self {
        let mut betas = Vec::with_capacity(k + 1);
        let mut pres = Vec::with_capacity(k);
        betas.push(Array1::zeros(d));
        for layer in 0..k {
            let p = pre(layer, &betas[layer]);
            let t = theta[layer];
            betas.push(p.mapv(|v| shrink(v, t)));
            pres.push(p);
        }
        Unrolled { betas, pres }
    }

    pub fn output(&self) -> &Array1<f64> {
        self.betas.last().expect("at least the initializer")
    }
}

/// Boolean membership of a 0-based candidate support.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SupportMask(Vec<bool>);

impl SupportMask {
    pub fn new(d: usize, support: &[usize]) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::domain("support set is empty"));
        }
        let mut mask = vec![false; d];
        for &i in support {
            if i >= d {
                return Err(Error::domain(format!("support index {i} out of range for d = {d}")));
            }
            mask[i] = true;
        }
        Ok(SupportMask(mask))
    }

    pub fn full(d: usize) -> Self {
        SupportMask(vec![true; d])
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Zero entries outside the support.
    pub fn apply(&self, v: &mut Array1<f64>) {
        for (x, &keep) in v.iter_mut().zip(&self.0) {
            if !keep {
                *x = 0.0;
            }
        }
    }

    /// Zero the columns of `x` outside the support.
    pub fn restrict_columns(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            if !self.0[j] {
                col.fill(0.0);
            }
        }
        out
    }
}

fn check_xy(x: ArrayView2<f64>, y: ArrayView1<f64>, d: usize) -> Result<()> {
    if x.nrows() == 0 {
        return Err(Error::domain("prefix length n must be at least 1"));
    }
    if x.ncols() != d {
        return Err(Error::domain(format!(
            "measurement matrix has {} columns, parameters expect d = {d}",
            x.ncols()
        )));
    }
    if y.len() != x.nrows() {
        return Err(Error::domain(format!(
            "{} observations for {} measurement rows",
            y.len(),
            x.nrows()
        )));
    }
    Ok(())
}

pub(crate) fn unroll_vm(
    params: &ListaVmParams,
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    m: f64,
    support: Option<&SupportMask>,
) -> Result<Unrolled> {
    let d = if params.layers() == 0 { x.ncols() } else { params.d() };
    check_xy(x, y, d)?;
    if !(m > 0.0) {
        return Err(Error::domain(format!("normalizer must be positive, got {m}")));
    }
    let restricted;
    let x = match support {
        Some(mask) => {
            if mask.len() != d {
                return Err(Error::domain("support mask dimension differs from d"));
            }
            restricted = mask.restrict_columns(x);
            restricted.view()
        }
        None => x,
    };
    Ok(Unrolled::run(
        params.layers(),
        d,
        |k, beta| {
            let r = x.t().dot(&(x.dot(beta) - y));
            let mut step = params.m[k].dot(&r) / m;
            if let Some(mask) = support {
                mask.apply(&mut step);
            }
            beta - &step
        },
        &params.theta,
    ))
}

pub(crate) fn unroll_cp(params: &ListaCpParams, x: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<Unrolled> {
    if params.layers() > 0 && x.dim() != params.shape() {
        return Err(Error::domain(format!(
            "LISTA-CP parameters are tied to a {:?} matrix, got {:?}",
            params.shape(),
            x.dim()
        )));
    }
    check_xy(x, y, x.ncols())?;
    Ok(Unrolled::run(
        params.layers(),
        x.ncols(),
        |k, beta| beta - &params.d[k].t().dot(&(x.dot(beta) - y)),
        &params.theta,
    ))
}

pub(crate) fn unroll_lista(params: &ListaParams, x: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<Unrolled> {
    let (d, n) = if params.layers() == 0 { (x.ncols(), x.nrows()) } else { params.shape() };
    if x.dim() != (n, d) {
        return Err(Error::domain(format!(
            "LISTA parameters are tied to a {:?} matrix, got {:?}",
            (n, d),
            x.dim()
        )));
    }
    check_xy(x, y, d)?;
    Ok(Unrolled::run(
        params.layers(),
        d,
        |k, beta| params.w1[k].dot(&y) + params.w2[k].dot(beta),
        &params.theta,
    ))
}

fn trace(
    run: Result<Unrolled>,
    beta_star: Option<ArrayView1<f64>>,
    start: Instant,
) -> Result<SolverTrace> {
    let run = run?;
    if let Some(bs) = beta_star {
        if bs.len() != run.betas[0].len() {
            return Err(Error::domain("β* length differs from d"));
        }
    }
    Ok(SolverTrace::from_iterates(run.betas, None, beta_star, start.elapsed()))
}

/// LISTA-VM on the first `n` demonstrations with normalizer `m`.
pub fn lista_vm_forward(
    params: &ListaVmParams,
    x_prefix: ArrayView2<f64>,
    y_prefix: ArrayView1<f64>,
    m: f64,
    beta_star: Option<ArrayView1<f64>>,
) -> Result<SolverTrace> {
    let start = Instant::now();
    trace(unroll_vm(params, x_prefix, y_prefix, m, None), beta_star, start)
}

/// LISTA-VM with columns of `X` and rows of each `M_k` outside `support`
/// (0-based) zeroed, so iterates never leave the support.
pub fn lista_vm_ss_forward(
    params: &ListaVmParams,
    support: &[usize],
    x_prefix: ArrayView2<f64>,
    y_prefix: ArrayView1<f64>,
    m: f64,
    beta_star: Option<ArrayView1<f64>>,
) -> Result<SolverTrace> {
    let start = Instant::now();
    let mask = SupportMask::new(x_prefix.ncols(), support)?;
    trace(unroll_vm(params, x_prefix, y_prefix, m, Some(&mask)), beta_star, start)
}

pub fn lista_cp_forward(
    params: &ListaCpParams,
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    beta_star: Option<ArrayView1<f64>>,
) -> Result<SolverTrace> {
    let start = Instant::now();
    trace(unroll_cp(params, x, y), beta_star, start)
}

pub fn lista_forward(
    params: &ListaParams,
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    beta_star: Option<ArrayView1<f64>>,
) -> Result<SolverTrace> {
    let start = Instant::now();
    trace(unroll_lista(params, x, y), beta_star, start)
}

/// Final estimate of any learned solver on a full instance; LISTA-VM uses
/// the default normalizer.
pub fn estimate(
    params: &LearnedParams,
    support: Option<&SupportMask>,
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
) -> Result<Array1<f64>> {
    let run = match params {
        LearnedParams::Lista(p) => unroll_lista(p, x, y)?,
        LearnedParams::ListaCp(p) => unroll_cp(p, x, y)?,
        LearnedParams::ListaVm(p) => unroll_vm(p, x, y, default_normalizer(x.nrows()), support)?,
    };
    Ok(run.output().clone())
}

/// Every iterate of any learned solver on a full instance.
pub fn learned_trace(
    params: &LearnedParams,
    support: Option<&SupportMask>,
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    beta_star: Option<ArrayView1<f64>>,
) -> Result<SolverTrace> {
    let start = Instant::now();
    let run = match params {
        LearnedParams::Lista(p) => unroll_lista(p, x, y),
        LearnedParams::ListaCp(p) => unroll_cp(p, x, y),
        LearnedParams::ListaVm(p) => unroll_vm(p, x, y, default_normalizer(x.nrows()), support),
    };
    trace(run, beta_star, start)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classical::{ista_solve_with_l, spectral_norm_sq, LassoProblem};
    use crate::instance::{sample_instance, InstanceConfig};
    use ndarray::s;

    fn desk() -> crate::instance::SparseInstance {
        sample_instance(&InstanceConfig::desk_default(), 17).unwrap()
    }

    #[test]
    fn zero_matrices_keep_zero_iterates() {
        let inst = desk();
        let p = ListaVmParams::scaled_identity(20, 0.0, vec![0.0; 5]);
        let t = lista_vm_forward(&p, inst.x.view(), inst.y.view(), 21.0, None).unwrap();
        assert!(t.betas.iter().all(|&v| v == 0.0));
        let cp = ListaCpParams::new(vec![Array2::zeros((10, 20)); 3], vec![0.1; 3]).unwrap();
        let t = lista_cp_forward(&cp, inst.x.view(), inst.y.view(), None).unwrap();
        assert!(t.betas.iter().all(|&v| v == 0.0));
        let l = ListaParams::new(vec![Array2::zeros((20, 10)); 2], vec![Array2::zeros((20, 20)); 2], vec![0.0; 2]).unwrap();
        let t = lista_forward(&l, inst.x.view(), inst.y.view(), None).unwrap();
        assert!(t.betas.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_step_recovery_with_orthogonal_design() {
        // n = d = 4, XᵀX = c·I
        let c: f64 = 3.0;
        let q = ndarray::array![
            [0.5, 0.5, 0.5, 0.5],
            [0.5, -0.5, 0.5, -0.5],
            [0.5, 0.5, -0.5, -0.5],
            [0.5, -0.5, -0.5, 0.5]
        ];
        let x = q * c.sqrt();
        let beta = ndarray::array![1.0, 0.0, -2.0, 0.5];
        let y = x.dot(&beta);
        let m = default_normalizer(4);
        let p = ListaVmParams::scaled_identity(4, m / c, vec![0.0]);
        let t = lista_vm_forward(&p, x.view(), y.view(), m, None).unwrap();
        for (a, b) in t.beta(1).iter().zip(beta.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn specializations_reproduce_ista() {
        let inst = desk();
        let alpha = 0.1;
        let l = spectral_norm_sq(inst.x.view()).unwrap();
        let k = 12;
        let problem = LassoProblem::from_instance(&inst, alpha).unwrap();
        let ista = ista_solve_with_l(&problem, k, l, None).unwrap();

        let cp = ListaCpParams::new(vec![&inst.x / l; k], vec![alpha / l; k]).unwrap();
        let t = lista_cp_forward(&cp, inst.x.view(), inst.y.view(), None).unwrap();
        let diff = (&t.betas - &ista.betas).mapv(f64::abs).fold(0.0_f64, |a, &b| a.max(b));
        assert!(diff <= 1e-12, "cp diff {diff}");

        let gram = inst.x.t().dot(&inst.x);
        let w1 = inst.x.t().to_owned() / l;
        let w2 = Array2::eye(20) - &gram / l;
        let lista = ListaParams::new(vec![w1; k], vec![w2; k], vec![alpha / l; k]).unwrap();
        let t = lista_forward(&lista, inst.x.view(), inst.y.view(), None).unwrap();
        let diff = (&t.betas - &ista.betas).mapv(f64::abs).fold(0.0_f64, |a, &b| a.max(b));
        assert!(diff <= 1e-12, "lista diff {diff}");
    }

    #[test]
    fn full_support_matches_unrestricted() {
        let inst = desk();
        let p = ListaVmParams::scaled_identity(20, 21.0 / 30.0, vec![0.05; 6]);
        let all: Vec<usize> = (0..20).collect();
        let a = lista_vm_forward(&p, inst.x.view(), inst.y.view(), 21.0, None).unwrap();
        let b = lista_vm_ss_forward(&p, &all, inst.x.view(), inst.y.view(), 21.0, None).unwrap();
        assert_eq!(a.betas, b.betas);
        assert!(lista_vm_ss_forward(&p, &[], inst.x.view(), inst.y.view(), 21.0, None).is_err());
    }

    #[test]
    fn disjoint_support_cannot_reach_truth() {
        let cfg = InstanceConfig::desk_default().with_support((0..10).collect());
        let inst = sample_instance(&cfg, 4).unwrap();
        let p = ListaVmParams::scaled_identity(20, 0.8, vec![0.01; 12]);
        let other: Vec<usize> = (10..20).collect();
        let t = lista_vm_ss_forward(&p, &other, inst.x.view(), inst.y.view(), 21.0, Some(inst.beta_star.view())).unwrap();
        let norm = inst.beta_star.dot(&inst.beta_star).sqrt();
        for e in t.errors_to_truth.unwrap() {
            assert!(e >= norm - 1e-12);
        }
    }

    #[test]
    fn prefix_rows_beyond_n_are_ignored() {
        let inst = desk();
        let p = ListaVmParams::scaled_identity(20, 0.7, vec![0.02; 8]);
        let n = 6;
        let a = lista_vm_forward(&p, inst.x.slice(s![..n, ..]), inst.y.slice(s![..n]), 13.0, None).unwrap();
        let mut x2 = inst.x.clone();
        x2.slice_mut(s![n.., ..]).fill(9.0);
        let b = lista_vm_forward(&p, x2.slice(s![..n, ..]), inst.y.slice(s![..n]), 13.0, None).unwrap();
        assert_eq!(a.betas, b.betas);
    }

    #[test]
    fn shape_mismatch_is_domain_error() {
        let inst = desk();
        let cp = ListaCpParams::new(vec![Array2::zeros((8, 20))], vec![0.0]).unwrap();
        assert!(matches!(
            lista_cp_forward(&cp, inst.x.view(), inst.y.view(), None),
            Err(Error::Domain(_))
        ));
        let p = ListaVmParams::scaled_identity(19, 1.0, vec![0.0]);
        assert!(lista_vm_forward(&p, inst.x.view(), inst.y.view(), 21.0, None).is_err());
    }
}
