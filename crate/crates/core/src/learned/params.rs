use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::container::{self, Kind, Reader, Writer};
use crate::error::{Error, Result};

/// Learned solver families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Lista,
    ListaCp,
    ListaVm,
    /// LISTA-VM with measurement columns and update rows outside a candidate
    /// support set masked out.
    ListaVmSs,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Lista => "lista",
            ModelKind::ListaCp => "lista_cp",
            ModelKind::ListaVm => "lista_vm",
            ModelKind::ListaVmSs => "lista_vm_ss",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lista" => Ok(ModelKind::Lista),
            "lista_cp" => Ok(ModelKind::ListaCp),
            "lista_vm" => Ok(ModelKind::ListaVm),
            "lista_vm_ss" => Ok(ModelKind::ListaVmSs),
            other => Err(Error::config(format!("unknown model kind `{other}`"))),
        }
    }
}

/// `β ← S_θk(β − (1/m)·M_k·Xᵀ(Xβ − y))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ListaVmParams {
    pub m: Vec<Array2<f64>>,
    pub theta: Vec<f64>,
}

/// `β ← S_θk(β − D_kᵀ(Xβ − y))`, `D_k` is `N × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct ListaCpParams {
    pub d: Vec<Array2<f64>>,
    pub theta: Vec<f64>,
}

/// `β ← S_θk(W1_k·y + W2_k·β)`, `W1_k` is `d × N`, `W2_k` is `d × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct ListaParams {
    pub w1: Vec<Array2<f64>>,
    pub w2: Vec<Array2<f64>>,
    pub theta: Vec<f64>,
}

fn check_thetas(theta: &[f64]) -> Result<()> {
    match theta.iter().position(|t| !(*t >= 0.0) || !t.is_finite()) {
        Some(k) => Err(Error::domain(format!(
            "threshold of layer {} is {}, must be finite and >= 0",
            k + 1,
            theta[k]
        ))),
        None => Ok(()),
    }
}

fn check_shapes(name: &str, mats: &[Array2<f64>], shape: (usize, usize)) -> Result<()> {
    match mats.iter().position(|m| m.dim() != shape) {
        Some(k) => Err(Error::domain(format!(
            "{name} of layer {} has shape {:?}, expected {shape:?}",
            k + 1,
            mats[k].dim()
        ))),
        None => Ok(()),
    }
}

impl ListaVmParams {
    pub fn new(m: Vec<Array2<f64>>, theta: Vec<f64>) -> Result<Self> {
        if m.len() != theta.len() {
            return Err(Error::domain("one threshold per layer required"));
        }
        let d = m.first().map_or(0, |m| m.nrows());
        check_shapes("M", &m, (d, d))?;
        check_thetas(&theta)?;
        Ok(ListaVmParams { m, theta })
    }

    /// `K` copies of `scale·I` with the given thresholds.
    pub fn scaled_identity(d: usize, scale: f64, theta: Vec<f64>) -> Self {
        let m = vec![Array2::eye(d) * scale; theta.len()];
        ListaVmParams { m, theta }
    }

    pub fn layers(&self) -> usize {
        self.theta.len()
    }

    pub fn d(&self) -> usize {
        self.m.first().map_or(0, |m| m.nrows())
    }
}

impl ListaCpParams {
    pub fn new(d: Vec<Array2<f64>>, theta: Vec<f64>) -> Result<Self> {
        if d.len() != theta.len() {
            return Err(Error::domain("one threshold per layer required"));
        }
        let shape = d.first().map_or((0, 0), |m| m.dim());
        check_shapes("D", &d, shape)?;
        check_thetas(&theta)?;
        Ok(ListaCpParams { d, theta })
    }

    pub fn layers(&self) -> usize {
        self.theta.len()
    }

    /// `(N, d)` of the coupled matrices.
    pub fn shape(&self) -> (usize, usize) {
        self.d.first().map_or((0, 0), |m| m.dim())
    }
}

impl ListaParams {
    pub fn new(w1: Vec<Array2<f64>>, w2: Vec<Array2<f64>>, theta: Vec<f64>) -> Result<Self> {
        if w1.len() != theta.len() || w2.len() != theta.len() {
            return Err(Error::domain("one threshold per layer required"));
        }
        let (d, n) = w1.first().map_or((0, 0), |m| m.dim());
        check_shapes("W1", &w1, (d, n))?;
        check_shapes("W2", &w2, (d, d))?;
        check_thetas(&theta)?;
        Ok(ListaParams { w1, w2, theta })
    }

    pub fn layers(&self) -> usize {
        self.theta.len()
    }

    /// `(d, N)` of `W1`.
    pub fn shape(&self) -> (usize, usize) {
        self.w1.first().map_or((0, 0), |m| m.dim())
    }
}

/// Parameters of any learned solver. LISTA-VM-SS shares the LISTA-VM layout.
#[derive(Debug, Clone, PartialEq)]
pub enum LearnedParams {
    Lista(ListaParams),
    ListaCp(ListaCpParams),
    ListaVm(ListaVmParams),
}

impl LearnedParams {
    pub fn layers(&self) -> usize {
        match self {
            LearnedParams::Lista(p) => p.layers(),
            LearnedParams::ListaCp(p) => p.layers(),
            LearnedParams::ListaVm(p) => p.layers(),
        }
    }

    pub fn thetas(&self) -> &[f64] {
        match self {
            LearnedParams::Lista(p) => &p.theta,
            LearnedParams::ListaCp(p) => &p.theta,
            LearnedParams::ListaVm(p) => &p.theta,
        }
    }

    fn matrices(&self) -> Vec<&Array2<f64>> {
        match self {
            LearnedParams::Lista(p) => p.w1.iter().chain(p.w2.iter()).collect(),
            LearnedParams::ListaCp(p) => p.d.iter().collect(),
            LearnedParams::ListaVm(p) => p.m.iter().collect(),
        }
    }

    fn matrices_mut(&mut self) -> Vec<&mut Array2<f64>> {
        match self {
            LearnedParams::Lista(p) => p.w1.iter_mut().chain(p.w2.iter_mut()).collect(),
            LearnedParams::ListaCp(p) => p.d.iter_mut().collect(),
            LearnedParams::ListaVm(p) => p.m.iter_mut().collect(),
        }
    }

    fn thetas_mut(&mut self) -> &mut Vec<f64> {
        match self {
            LearnedParams::Lista(p) => &mut p.theta,
            LearnedParams::ListaCp(p) => &mut p.theta,
            LearnedParams::ListaVm(p) => &mut p.theta,
        }
    }

    /// Same layout, all entries zero.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        out.map_inplace(|_| 0.0);
        out
    }

    pub fn len(&self) -> usize {
        self.matrices().iter().map(|m| m.len()).sum::<usize>() + self.layers()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Matrices in layer order (`W1`s before `W2`s for LISTA), then thresholds.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for m in self.matrices() {
            out.extend(m.iter().copied());
        }
        out.extend_from_slice(self.thetas());
        out
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.len() {
            return Err(Error::domain(format!(
                "flat parameter vector has {} entries, expected {}",
                values.len(),
                self.len()
            )));
        }
        let mut it = values.iter().copied();
        for m in self.matrices_mut() {
            for v in m.iter_mut() {
                *v = it.next().expect("length checked");
            }
        }
        for t in self.thetas_mut().iter_mut() {
            *t = it.next().expect("length checked");
        }
        Ok(())
    }

    pub fn map_inplace(&mut self, f: impl Fn(f64) -> f64) {
        for m in self.matrices_mut() {
            m.mapv_inplace(&f);
        }
        for t in self.thetas_mut().iter_mut() {
            *t = f(*t);
        }
    }

    /// `self += scale · other`; layouts must agree.
    pub fn axpy(&mut self, scale: f64, other: &LearnedParams) {
        for (a, b) in self.matrices_mut().into_iter().zip(other.matrices()) {
            a.scaled_add(scale, b);
        }
        for (a, b) in self.thetas_mut().iter_mut().zip(other.thetas()) {
            *a += scale * b;
        }
    }

    pub fn norm(&self) -> f64 {
        self.to_flat().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }

    /// Thresholds are projected back to `[0, ∞)` after an optimizer step.
    pub fn clamp_thresholds(&mut self) {
        for t in self.thetas_mut().iter_mut() {
            *t = t.max(0.0);
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (kind, dims) = match self {
            LearnedParams::Lista(p) => (Kind::Lista, p.shape()),
            LearnedParams::ListaCp(p) => (Kind::ListaCp, p.shape()),
            LearnedParams::ListaVm(p) => (Kind::ListaVm, (p.d(), p.d())),
        };
        let mut w = Writer::new(kind);
        w.u64(self.layers() as u64)
            .u64(dims.0 as u64)
            .u64(dims.1 as u64);
        for m in self.matrices() {
            w.matrix(m.view());
        }
        w.vector(Array1::from_vec(self.thetas().to_vec()).view());
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let kind = match bytes.get(6).copied() {
            Some(2) => Kind::Lista,
            Some(3) => Kind::ListaCp,
            Some(4) => Kind::ListaVm,
            _ => return Err(container::parse(6, "not a learned-parameter container")),
        };
        let mut r = Reader::open(bytes, kind)?;
        let k = r.count("K")?;
        let a = r.count("rows")?;
        let b = r.count("cols")?;
        let per_layer = match kind {
            Kind::Lista => a * b + a * a,
            _ => a * b,
        };
        r.expect_f64s(k * per_layer + k, "parameters")?;
        let read = |r: &mut Reader, rows, cols| -> Result<Vec<Array2<f64>>> {
            (0..k).map(|_| r.matrix(rows, cols)).collect()
        };
        let at = r.offset();
        let params = match kind {
            Kind::Lista => {
                let w1 = read(&mut r, a, b)?;
                let w2 = read(&mut r, a, a)?;
                let theta = r.vector(k)?.to_vec();
                LearnedParams::Lista(ListaParams::new(w1, w2, theta).map_err(|e| container::parse(at, e.to_string()))?)
            }
            Kind::ListaCp => {
                let d = read(&mut r, a, b)?;
                let theta = r.vector(k)?.to_vec();
                LearnedParams::ListaCp(ListaCpParams::new(d, theta).map_err(|e| container::parse(at, e.to_string()))?)
            }
            _ => {
                if a != b {
                    return Err(container::parse(at, "LISTA-VM matrices must be square"));
                }
                let m = read(&mut r, a, a)?;
                let theta = r.vector(k)?.to_vec();
                LearnedParams::ListaVm(ListaVmParams::new(m, theta).map_err(|e| container::parse(at, e.to_string()))?)
            }
        };
        r.finish()?;
        Ok(params)
    }
}
