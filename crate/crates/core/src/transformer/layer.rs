use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// One attention head; `Q`, `K`, `V` are `D × D`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionHead {
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
}

impl AttentionHead {
    pub fn zeros(dim: usize) -> Self {
        AttentionHead {
            q: Array2::zeros((dim, dim)),
            k: Array2::zeros((dim, dim)),
            v: Array2::zeros((dim, dim)),
        }
    }

    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    fn check(&self, dim: usize) -> Result<()> {
        for (name, m) in [("Q", &self.q), ("K", &self.k), ("V", &self.v)] {
            if m.dim() != (dim, dim) {
                return Err(Error::domain(format!(
                    "{name} has shape {:?}, expected ({dim}, {dim})",
                    m.dim()
                )));
            }
        }
        Ok(())
    }
}

/// Token-wise `h ↦ h + W2·ReLU(W1·h + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpWeights {
    /// `D′ × D`.
    pub w1: Array2<f64>,
    /// `D × D′`.
    pub w2: Array2<f64>,
    pub b: Array1<f64>,
}

impl MlpWeights {
    pub fn zeros(dim: usize, hidden: usize) -> Self {
        MlpWeights {
            w1: Array2::zeros((hidden, dim)),
            w2: Array2::zeros((dim, hidden)),
            b: Array1::zeros(hidden),
        }
    }

    fn check(&self, dim: usize) -> Result<()> {
        let hidden = self.w1.nrows();
        if self.w1.ncols() != dim || self.w2.dim() != (dim, hidden) || self.b.len() != hidden {
            return Err(Error::domain(format!(
                "MLP shapes W1 {:?}, W2 {:?}, b {} do not fit D = {dim}",
                self.w1.dim(),
                self.w2.dim(),
                self.b.len()
            )));
        }
        Ok(())
    }
}

/// Masked ReLU attention with residual connection.
///
/// Column `j` (0-based) of the update is
/// `(1/(j+1))·Σ_{i≤j} ReLU(⟨K h_i, Q h_j⟩)·V h_i`, summed over heads.
pub fn masked_attention(h: ArrayView2<f64>, heads: &[AttentionHead]) -> Result<Array2<f64>> {
    let (dim, t) = h.dim();
    if t == 0 {
        return Err(Error::domain("empty token sequence"));
    }
    let mut out = h.to_owned();
    for head in heads {
        head.check(dim)?;
        let kh = head.k.dot(&h);
        let qh = head.q.dot(&h);
        let vh = head.v.dot(&h);
        // scores[i, j] = ⟨K h_i, Q h_j⟩, key i, query j
        let scores = kh.t().dot(&qh);
        for j in 0..t {
            let scale = 1.0 / (j + 1) as f64;
            let mut col = out.column_mut(j);
            for i in 0..=j {
                let s = scores[[i, j]];
                if s > 0.0 {
                    col.scaled_add(s * scale, &vh.column(i));
                }
            }
        }
    }
    Ok(out)
}

pub fn mlp_apply(h: ArrayView2<f64>, mlp: &MlpWeights) -> Result<Array2<f64>> {
    mlp.check(h.nrows())?;
    let mut hidden = mlp.w1.dot(&h);
    hidden += &mlp.b.view().insert_axis(Axis(1));
    hidden.mapv_inplace(|v| v.max(0.0));
    Ok(&h + &mlp.w2.dot(&hidden))
}

/// Attention followed by the MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub heads: Vec<AttentionHead>,
    pub mlp: MlpWeights,
}

impl Layer {
    pub fn apply(&self, h: ArrayView2<f64>) -> Result<Array2<f64>> {
        let a = masked_attention(h, &self.heads)?;
        mlp_apply(a.view(), &self.mlp)
    }
}
