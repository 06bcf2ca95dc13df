use ndarray::{s, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::embed::Layout;
use super::layer::{AttentionHead, Layer, MlpWeights};
use crate::classical::spectral_norm_sq;
use crate::container::{Kind, Reader, Writer};
use crate::error::{Error, Result};
use crate::instance::SparseInstance;
use crate::learned::{default_normalizer, lista_vm_forward, theory_params_with_schedule, ListaVmParams};

/// Metadata of a constructed network.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstructionMeta {
    pub gammas: Vec<f64>,
    pub m_v: Array2<f64>,
    /// Gating constant `B` that silences indicator-to-indicator scores.
    pub gate: f64,
    pub thetas: Vec<f64>,
}

/// `K` layers of four heads (ordered `+1, −1, +2, −2`) plus an MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerWeights {
    pub layers: Vec<Layer>,
    pub meta: Option<ConstructionMeta>,
}

/// Choice of the gating constant `B`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gate {
    /// Worst-case bound from the norms `b_β` (of `β*` in ℓ₁) and `b_x`.
    ProofBound { b_beta: f64, b_x: f64 },
    Fixed(f64),
}

/// `B = b_β·b_x + b_x·√d·(b_β + C^K)` with
/// `C = 1 + b_x²·d·‖M‖ + b_β·b_x·‖M‖` and `‖M‖ = max_k ‖M_k‖₂`.
pub fn proof_bound_gate(d: usize, layers: usize, m_norm: f64, b_beta: f64, b_x: f64) -> Result<f64> {
    let c = 1.0 + b_x * b_x * d as f64 * m_norm + b_beta * b_x * m_norm;
    let b = b_beta * b_x + b_x * (d as f64).sqrt() * (b_beta + c.powi(layers as i32));
    if b.is_finite() {
        Ok(b)
    } else {
        Err(Error::numeric(format!(
            "gating bound overflows at K = {layers} (C = {c:e}); pass a fixed or empirical gate instead"
        )))
    }
}

/// `factor × max |β^(k)ᵀ x_j|` over LISTA-VM runs on every prefix of the
/// calibration instances, against every measurement row of the instance.
pub fn empirical_gate(params: &ListaVmParams, instances: &[SparseInstance], factor: f64) -> Result<f64> {
    if instances.is_empty() {
        return Err(Error::domain("empirical gate needs at least one calibration instance"));
    }
    let per: Vec<f64> = instances
        .par_iter()
        .map(|inst| {
            let mut rows = inst.x.clone();
            rows.push_row(inst.x_query.view()).expect("same width");
            let mut worst = 0.0_f64;
            for n in 1..=inst.n() {
                let trace = lista_vm_forward(
                    params,
                    inst.x.slice(s![..n, ..]),
                    inst.y.slice(s![..n]),
                    default_normalizer(n),
                    None,
                )?;
                let dots = rows.dot(&trace.betas.t());
                worst = dots.iter().fold(worst, |a, &v| a.max(v.abs()));
            }
            Ok(worst)
        })
        .collect::<Result<_>>()?;
    let worst = per.into_iter().fold(0.0, f64::max);
    let gate = factor * worst.max(1.0);
    if !gate.is_finite() {
        return Err(Error::numeric("calibration run produced non-finite iterates"));
    }
    Ok(gate)
}

fn max_operator_norm(params: &ListaVmParams) -> Result<f64> {
    let mut worst = 0.0_f64;
    for m in &params.m {
        if m.iter().any(|&v| v != 0.0) {
            worst = worst.max(spectral_norm_sq(m.view())?.sqrt());
        }
    }
    Ok(worst)
}

/// Weights under which every layer performs one LISTA-VM step on each prefix.
pub fn build_constructed_weights(
    d: usize,
    layers: usize,
    gamma: f64,
    sigma_d: f64,
    thetas: &[f64],
    gate: Gate,
) -> Result<TransformerWeights> {
    if thetas.len() != layers {
        return Err(Error::domain(format!(
            "threshold schedule has {} entries for K = {layers}",
            thetas.len()
        )));
    }
    let params = theory_params_with_schedule(d, sigma_d, gamma, thetas.to_vec())?;
    let mut w = lista_vm_weights(&params, gate)?;
    if let Some(meta) = w.meta.as_mut() {
        meta.gammas = vec![gamma; layers];
        meta.m_v = Array2::eye(d) * (2.0 / (sigma_d * sigma_d));
    }
    Ok(w)
}

/// Weights that carry arbitrary LISTA-VM matrices `M_k`.
pub fn lista_vm_weights(params: &ListaVmParams, gate: Gate) -> Result<TransformerWeights> {
    let d = params.d();
    let k = params.layers();
    if k == 0 {
        return Err(Error::domain("K must be at least 1"));
    }
    let b = match gate {
        Gate::ProofBound { b_beta, b_x } => proof_bound_gate(d, k, max_operator_norm(params)?, b_beta, b_x)?,
        Gate::Fixed(b) => b,
    };
    if !(b >= 0.0) || !b.is_finite() {
        return Err(Error::domain(format!("gate must be finite and >= 0, got {b}")));
    }
    let layers = (0..k)
        .map(|i| Layer {
            heads: lista_vm_heads(d, &params.m[i], b),
            mlp: soft_threshold_mlp(d, params.theta[i]),
        })
        .collect();
    Ok(TransformerWeights {
        layers,
        meta: Some(ConstructionMeta {
            gammas: vec![1.0; k],
            m_v: params.m[0].clone(),
            gate: b,
            thetas: params.theta.clone(),
        }),
    })
}

fn lista_vm_heads(d: usize, m: &Array2<f64>, gate: f64) -> Vec<AttentionHead> {
    let l = Layout { d };
    let (beta, ind, y) = (l.beta_start(), l.indicator_row(), l.y_row());
    let beta_rows = s![beta..beta + d, ..d];
    let mut heads = Vec::with_capacity(4);
    for sign in [1.0, -1.0] {
        let mut h = AttentionHead::zeros(l.dim());
        for i in 0..d {
            h.q[[beta + i, beta + i]] = -sign;
            h.k[[beta + i, i]] = 1.0;
        }
        h.q[[ind, ind]] = -gate;
        h.k[[ind, ind]] = 1.0;
        h.v.slice_mut(beta_rows).assign(&(m * sign));
        heads.push(h);
    }
    for sign in [1.0, -1.0] {
        let mut h = AttentionHead::zeros(l.dim());
        h.q[[y, ind]] = sign;
        h.k[[y, y]] = 1.0;
        h.v.slice_mut(beta_rows).assign(&(m * sign));
        heads.push(h);
    }
    heads
}

/// `h + W2·ReLU(W1 h + b)` equal to `S_θ` on the `β` block and the identity
/// elsewhere.
pub fn soft_threshold_mlp(d: usize, theta: f64) -> MlpWeights {
    let l = Layout { d };
    let dim = l.dim();
    let mut mlp = MlpWeights::zeros(dim, 4 * dim);
    let signs_in = [1.0, -1.0, 1.0, -1.0];
    let signs_out = [-1.0, 1.0, 1.0, -1.0];
    for block in 0..4 {
        let off = block * dim;
        for r in 0..dim {
            mlp.w2[[r, off + r]] = signs_out[block];
        }
        for i in l.beta_start()..l.indicator_row() {
            mlp.w1[[off + i, i]] = signs_in[block];
            if block >= 2 {
                mlp.b[off + i] = -theta;
            }
        }
    }
    mlp
}

/// Two heads writing `(2/(j+1))·Σ_{even i≤j} β_iᵀ x_j` into the label slot
/// of column `j`.
pub fn final_average_heads(d: usize) -> Vec<AttentionHead> {
    let l = Layout { d };
    [1.0, -1.0]
        .into_iter()
        .map(|sign| {
            let mut h = AttentionHead::zeros(l.dim());
            for i in 0..d {
                h.q[[l.beta_start() + i, i]] = sign;
                h.k[[l.beta_start() + i, l.beta_start() + i]] = 1.0;
            }
            h.v[[l.y_row(), l.indicator_row()]] = 2.0 * sign;
            h
        })
        .collect()
}

impl TransformerWeights {
    pub fn dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.mlp.w1.ncols())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let heads = self.layers.first().map_or(0, |l| l.heads.len());
        let hidden = self.layers.first().map_or(0, |l| l.mlp.w1.nrows());
        let mut w = Writer::new(Kind::Transformer);
        w.u64(self.layers.len() as u64)
            .u64(self.dim() as u64)
            .u64(heads as u64)
            .u64(hidden as u64);
        for layer in &self.layers {
            for h in &layer.heads {
                w.matrix(h.q.view()).matrix(h.k.view()).matrix(h.v.view());
            }
            w.matrix(layer.mlp.w1.view())
                .matrix(layer.mlp.w2.view())
                .vector(layer.mlp.b.view());
        }
        w.finish()
    }

    /// Layers only; construction metadata is not stored.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::open(bytes, Kind::Transformer)?;
        let k = r.count("K")?;
        let dim = r.count("D")?;
        let heads = r.count("heads")?;
        let hidden = r.count("hidden")?;
        let per_layer = heads * 3 * dim * dim + 2 * hidden * dim + hidden;
        r.expect_f64s(k * per_layer, "transformer weights")?;
        let mut layers = Vec::with_capacity(k);
        for _ in 0..k {
            let hs = (0..heads)
                .map(|_| {
                    Ok(AttentionHead {
                        q: r.matrix(dim, dim)?,
                        k: r.matrix(dim, dim)?,
                        v: r.matrix(dim, dim)?,
                    })
                })
                .collect::<Result<_>>()?;
            let mlp = MlpWeights {
                w1: r.matrix(hidden, dim)?,
                w2: r.matrix(dim, hidden)?,
                b: r.vector(hidden)?,
            };
            layers.push(Layer { heads: hs, mlp });
        }
        r.finish()?;
        Ok(TransformerWeights { layers, meta: None })
    }
}

/// `H^(1), …, H^(K+1)` with `H^(k+1) = MLP_k(Attn_k(H^(k)))`.
pub fn forward(weights: &TransformerWeights, h1: &Array2<f64>) -> Result<Vec<Array2<f64>>> {
    let mut states = Vec::with_capacity(weights.layers.len() + 1);
    states.push(h1.clone());
    for (k, layer) in weights.layers.iter().enumerate() {
        let next = layer.apply(states[k].view())?;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("non-finite hidden state after layer {}", k + 1)));
        }
        states.push(next);
    }
    Ok(states)
}

