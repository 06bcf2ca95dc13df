use std::fmt::Write as _;

use ndarray::{s, Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::instance::SparseInstance;

/// Row layout of a token for dimension `d`: `x` in `0..d`, the label slot at
/// `d`, the iterate `β` in `d+1..=2d` and the indicator at `2d+1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub d: usize,
}

impl Layout {
    pub fn dim(self) -> usize {
        2 * self.d + 2
    }

    pub fn y_row(self) -> usize {
        self.d
    }

    pub fn beta_start(self) -> usize {
        self.d + 1
    }

    pub fn indicator_row(self) -> usize {
        2 * self.d + 1
    }

    pub fn from_dim(dim: usize) -> Result<Self> {
        if dim < 4 || !dim.is_multiple_of(2) {
            return Err(Error::domain(format!("token dimension {dim} is not of the form 2d + 2")));
        }
        Ok(Layout { d: (dim - 2) / 2 })
    }
}

/// The `(2d+2) × (2N+1)` token matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence {
    pub h: Array2<f64>,
    pub d: usize,
    pub n: usize,
}

/// Interleave `(x_i, 0, 0, 1)` and `(x_i, y_i, 0, 0)` tokens and close with
/// the query token `(x_{N+1}, 0, 0, 1)`.
pub fn embed_instance(inst: &SparseInstance) -> EmbeddingSequence {
    let (n, d) = inst.x.dim();
    let layout = Layout { d };
    let mut h = Array2::zeros((layout.dim(), 2 * n + 1));
    for i in 0..n {
        let x = inst.x.row(i);
        h.slice_mut(s![..d, 2 * i]).assign(&x);
        h[[layout.indicator_row(), 2 * i]] = 1.0;
        h.slice_mut(s![..d, 2 * i + 1]).assign(&x);
        h[[layout.y_row(), 2 * i + 1]] = inst.y[i];
    }
    h.slice_mut(s![..d, 2 * n]).assign(&inst.x_query);
    h[[layout.indicator_row(), 2 * n]] = 1.0;
    EmbeddingSequence { h, d, n }
}

/// `β` carried by the token that closes a prefix of `n` demonstrations
/// (0-based column `2n`).
pub fn extract_beta(h: &Array2<f64>, n: usize) -> Result<Array1<f64>> {
    extract_beta_column(h, 2 * n)
}

/// `β` block of a 0-based column; only indicator tokens (even columns) carry
/// an iterate.
pub fn extract_beta_column(h: &Array2<f64>, column: usize) -> Result<Array1<f64>> {
    let layout = Layout::from_dim(h.nrows())?;
    if column >= h.ncols() {
        return Err(Error::domain(format!(
            "column {column} out of range for a sequence of length {}",
            h.ncols()
        )));
    }
    if !column.is_multiple_of(2) {
        return Err(Error::domain(format!("column {column} is a label token and carries no iterate")));
    }
    Ok(h.slice(s![layout.beta_start()..layout.indicator_row(), column]).to_owned())
}

/// Measurement row stored in a token.
pub(crate) fn token_x(h: &Array2<f64>, column: usize, d: usize) -> ArrayView1<'_, f64> {
    h.slice(s![..d, column])
}

/// CSV `layer,column,coordinate,value` of every hidden state, 0-based.
pub fn hidden_state_csv(states: &[Array2<f64>]) -> String {
    let mut out = String::from("layer,column,coordinate,value\n");
    for (layer, h) in states.iter().enumerate() {
        for c in 0..h.ncols() {
            for r in 0..h.nrows() {
                let _ = writeln!(out, "{layer},{c},{r},{:e}", h[[r, c]]);
            }
        }
    }
    out
}
