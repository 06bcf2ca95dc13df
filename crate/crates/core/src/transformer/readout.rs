use ndarray::{s, Array1, Array2};

use super::construct::final_average_heads;
use super::embed::{extract_beta_column, token_x, Layout};
use super::layer::masked_attention;
use crate::error::{Error, Result};

/// Read-out function applied to one output token.
#[derive(Debug, Clone, PartialEq)]
pub enum ReadOutSpec {
    /// `F(h) = vᵀh`.
    Linear(Array1<f64>),
    /// `F(h) = h_xᵀ·V·h` with `V` of shape `d × D`.
    Query(Array2<f64>),
}

impl ReadOutSpec {
    /// Picks the label slot.
    pub fn linear_default(d: usize) -> Self {
        let l = Layout { d };
        let mut v = Array1::zeros(l.dim());
        v[l.y_row()] = 1.0;
        ReadOutSpec::Linear(v)
    }

    /// `V = [0 | I_d | 0]`, so `F(h) = xᵀβ`.
    pub fn query_default(d: usize) -> Self {
        let l = Layout { d };
        let mut v = Array2::zeros((d, l.dim()));
        v.slice_mut(s![.., l.beta_start()..l.indicator_row()])
            .assign(&Array2::eye(d));
        ReadOutSpec::Query(v)
    }

    pub fn apply(&self, h: &Array2<f64>, column: usize) -> Result<f64> {
        if column >= h.ncols() {
            return Err(Error::domain(format!("column {column} out of range")));
        }
        let tok = h.column(column);
        match self {
            ReadOutSpec::Linear(v) => {
                if v.len() != h.nrows() {
                    return Err(Error::domain("linear read-out vector has the wrong length"));
                }
                Ok(v.dot(&tok))
            }
            ReadOutSpec::Query(v) => {
                let d = v.nrows();
                if v.ncols() != h.nrows() || d > h.nrows() {
                    return Err(Error::domain("query read-out matrix has the wrong shape"));
                }
                Ok(tok.slice(s![..d]).dot(&v.dot(&tok)))
            }
        }
    }
}

/// `ŷ_n = x_nᵀ β` from the token holding `x_n` (0-based column `2(n−1)`),
/// i.e. the estimate built from the first `n − 1` demonstrations; `n = N+1`
/// is the query.
pub fn readout_query(h_last: &Array2<f64>, n: usize) -> Result<f64> {
    let layout = Layout::from_dim(h_last.nrows())?;
    if n == 0 || 2 * (n - 1) >= h_last.ncols() {
        return Err(Error::domain(format!("read-out index {n} out of range")));
    }
    let column = 2 * (n - 1);
    let beta = extract_beta_column(h_last, column)?;
    Ok(token_x(h_last, column, layout.d).dot(&beta))
}

/// Adds the two-head averaging layer on top of the last hidden state.
pub fn final_average_layer(h_last: &Array2<f64>) -> Result<Array2<f64>> {
    let layout = Layout::from_dim(h_last.nrows())?;
    masked_attention(h_last.view(), &final_average_heads(layout.d))
}

/// Label slot of column `2n` of the averaged sequence: the prediction of
/// `y_{n+1}` from prefix `n`.
pub fn readout_linear(h_aug: &Array2<f64>, n: usize) -> Result<f64> {
    let layout = Layout::from_dim(h_aug.nrows())?;
    ReadOutSpec::linear_default(layout.d).apply(h_aug, 2 * n)
}
