//! Sampling and serialization of in-context sparse-recovery instances.
//!
//! An instance carries `N` demonstrations `(x_i, y_i)` with `y = X β*`, an
//! `S`-sparse ground truth `β*` and a query pair `(x_{N+1}, y_{N+1})`.

use ndarray::{Array1, Array2};
use rand::seq::index;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::container::{self, Kind, Reader, Writer};
use crate::error::{Error, Result};
use crate::seed::{self, Rng};

/// Sampling configuration. Indices in `support_set` are 0-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceConfig {
    pub d: usize,
    pub n_measurements: usize,
    pub sparsity: usize,
    #[serde(default)]
    pub support_set: Option<Vec<usize>>,
    #[serde(default)]
    pub noise_std: f64,
    /// Per-coordinate variances of the measurement rows; `None` means all ones.
    #[serde(default)]
    pub x_variances: Option<Vec<f64>>,
    /// Recorded bound on `‖β*‖₁`; not enforced by sampling.
    #[serde(default)]
    pub beta_l1_bound: Option<f64>,
    /// Recorded bound on `‖x‖₂`; not enforced by sampling.
    #[serde(default)]
    pub x_norm_bound: Option<f64>,
}

impl InstanceConfig {
    pub fn new(d: usize, n_measurements: usize, sparsity: usize) -> Self {
        InstanceConfig {
            d,
            n_measurements,
            sparsity,
            support_set: None,
            noise_std: 0.0,
            x_variances: None,
            beta_l1_bound: None,
            x_norm_bound: None,
        }
    }

    /// The experimental setting used throughout: `d = 20`, `N = 10`, `S = 3`.
    pub fn desk_default() -> Self {
        Self::new(20, 10, 3)
    }

    pub fn with_support(mut self, support: Vec<usize>) -> Self {
        self.support_set = Some(support);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::config("d must be at least 1"));
        }
        if self.sparsity > self.d {
            return Err(Error::config(format!(
                "sparsity {} exceeds dimension {}",
                self.sparsity, self.d
            )));
        }
        if let Some(support) = &self.support_set {
            let mut sorted = support.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != support.len() {
                return Err(Error::config("support set has duplicate indices"));
            }
            if let Some(&bad) = sorted.iter().find(|&&i| i >= self.d) {
                return Err(Error::config(format!(
                    "support index {bad} out of range for d = {}",
                    self.d
                )));
            }
            if self.sparsity > support.len() {
                return Err(Error::config(format!(
                    "sparsity {} exceeds support set size {}",
                    self.sparsity,
                    support.len()
                )));
            }
        }
        if let Some(var) = &self.x_variances {
            if var.len() != self.d {
                return Err(Error::config(format!(
                    "x_variances has {} entries, expected {}",
                    var.len(),
                    self.d
                )));
            }
            if var.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                return Err(Error::config("x_variances must be finite and positive"));
            }
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(Error::config("noise_std must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn variance(&self, i: usize) -> f64 {
        self.x_variances.as_ref().map_or(1.0, |v| v[i])
    }

    /// Smallest coordinate variance, `σ_d²`.
    pub fn sigma_min_sq(&self) -> f64 {
        self.x_variances
            .as_ref()
            .map_or(1.0, |v| v.iter().copied().fold(f64::INFINITY, f64::min))
    }

    pub fn beta_l1_bound(&self) -> f64 {
        self.beta_l1_bound
            .unwrap_or_else(|| (3.0 * self.sparsity as f64).max(1.0))
    }

    pub fn x_norm_bound(&self) -> f64 {
        self.x_norm_bound.unwrap_or_else(|| {
            let total: f64 = (0..self.d).map(|i| self.variance(i)).sum();
            2.0 * total.sqrt()
        })
    }

    fn candidates(&self) -> Vec<usize> {
        match &self.support_set {
            Some(s) => {
                let mut s = s.clone();
                s.sort_unstable();
                s
            }
            None => (0..self.d).collect(),
        }
    }
}

/// One in-context task.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseInstance {
    /// `N × d`, rows are the measurement vectors.
    pub x: Array2<f64>,
    pub beta_star: Array1<f64>,
    pub y: Array1<f64>,
    pub x_query: Array1<f64>,
    pub y_query: f64,
}

impl SparseInstance {
    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn sparsity(&self) -> usize {
        self.beta_star.iter().filter(|&&b| b != 0.0).count()
    }

    pub fn support(&self) -> Vec<usize> {
        self.beta_star
            .iter()
            .enumerate()
            .filter(|(_, &b)| b != 0.0)
            .map(|(i, _)| i)
            .collect()
    }

    /// Row `i` (1-based, `1..=N+1`) of the augmented matrix `[X; x_query]`.
    pub fn augmented_row(&self, i: usize) -> Option<ndarray::ArrayView1<'_, f64>> {
        match i {
            0 => None,
            i if i <= self.n() => Some(self.x.row(i - 1)),
            i if i == self.n() + 1 => Some(self.x_query.view()),
            _ => None,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(Kind::Instance);
        w.u64(self.d() as u64)
            .u64(self.n() as u64)
            .u64(self.sparsity() as u64)
            .matrix(self.x.view())
            .vector(self.beta_star.view())
            .vector(self.y.view())
            .vector(self.x_query.view())
            .f64(self.y_query);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::open(bytes, Kind::Instance)?;
        let d = r.count("d")?;
        let n = r.count("N")?;
        let s_at = r.offset();
        let s = r.count("S")?;
        if s > d {
            return Err(container::parse(s_at, format!("S = {s} exceeds d = {d}")));
        }
        r.expect_f64s(n * d + d + n + d + 1, "instance")?;
        let x = r.matrix(n, d)?;
        let beta_at = r.offset();
        let beta_star = r.vector(d)?;
        let y = r.vector(n)?;
        let x_query = r.vector(d)?;
        let y_query = r.f64()?;
        r.finish()?;
        let nnz = beta_star.iter().filter(|&&b| b != 0.0).count();
        if nnz != s {
            return Err(container::parse(
                beta_at,
                format!("header sparsity {s} but β* has {nnz} nonzeros"),
            ));
        }
        Ok(SparseInstance {
            x,
            beta_star,
            y,
            x_query,
            y_query,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&InstanceJson::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let j: InstanceJson = serde_json::from_str(text)?;
        j.try_into()
    }
}

/// Human-readable form of an instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceJson {
    pub d: usize,
    pub n: usize,
    pub s: usize,
    pub x: Vec<Vec<f64>>,
    pub beta_star: Vec<f64>,
    pub y: Vec<f64>,
    pub x_query: Vec<f64>,
    pub y_query: f64,
}

impl From<&SparseInstance> for InstanceJson {
    fn from(inst: &SparseInstance) -> Self {
        InstanceJson {
            d: inst.d(),
            n: inst.n(),
            s: inst.sparsity(),
            x: inst.x.rows().into_iter().map(|r| r.to_vec()).collect(),
            beta_star: inst.beta_star.to_vec(),
            y: inst.y.to_vec(),
            x_query: inst.x_query.to_vec(),
            y_query: inst.y_query,
        }
    }
}

impl TryFrom<InstanceJson> for SparseInstance {
    type Error = Error;

    fn try_from(j: InstanceJson) -> Result<Self> {
        let bad = |m: String| Error::Parse {
            offset: 0,
            message: m,
        };
        if j.x.len() != j.n || j.x.iter().any(|r| r.len() != j.d) {
            return Err(bad(format!("x is not {} × {}", j.n, j.d)));
        }
        if j.beta_star.len() != j.d || j.x_query.len() != j.d || j.y.len() != j.n {
            return Err(bad("vector lengths disagree with d / n".into()));
        }
        let flat: Vec<f64> = j.x.into_iter().flatten().collect();
        let inst = SparseInstance {
            x: Array2::from_shape_vec((j.n, j.d), flat).expect("checked shape"),
            beta_star: Array1::from_vec(j.beta_star),
            y: Array1::from_vec(j.y),
            x_query: Array1::from_vec(j.x_query),
            y_query: j.y_query,
        };
        if inst.sparsity() != j.s {
            return Err(bad(format!(
                "s = {} but β* has {} nonzeros",
                j.s,
                inst.sparsity()
            )));
        }
        Ok(inst)
    }
}

fn gaussian(rng: &mut Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Draw an `N × d` measurement matrix with independent rows
/// `x ~ N(0, diag(σ₁², …, σ_d²))`.
pub fn sample_measurements(config: &InstanceConfig, rows: usize, rng: &mut Rng) -> Array2<f64> {
    let scales: Vec<f64> = (0..config.d).map(|i| config.variance(i).sqrt()).collect();
    Array2::from_shape_fn((rows, config.d), |(_, j)| scales[j] * gaussian(rng))
}

fn sample_beta(config: &InstanceConfig, rng: &mut Rng) -> Array1<f64> {
    let candidates = config.candidates();
    let mut chosen: Vec<usize> = index::sample(rng, candidates.len(), config.sparsity)
        .into_iter()
        .map(|k| candidates[k])
        .collect();
    chosen.sort_unstable();
    let mut beta = Array1::zeros(config.d);
    for i in chosen {
        let mut v = gaussian(rng);
        // an exact zero would silently change the sparsity
        while v == 0.0 {
            v = gaussian(rng);
        }
        beta[i] = v;
    }
    beta
}

fn complete(config: &InstanceConfig, x: Array2<f64>, beta_star: Array1<f64>, rng: &mut Rng) -> SparseInstance {
    let scales: Vec<f64> = (0..config.d).map(|i| config.variance(i).sqrt()).collect();
    let x_query = Array1::from_shape_fn(config.d, |j| scales[j] * gaussian(rng));
    let mut y = x.dot(&beta_star);
    if config.noise_std > 0.0 {
        for v in y.iter_mut() {
            *v += config.noise_std * gaussian(rng);
        }
    }
    let y_query = x_query.dot(&beta_star);
    SparseInstance {
        x,
        beta_star,
        y,
        x_query,
        y_query,
    }
}

/// Sample one instance; identical `(config, seed)` gives a bit-identical result.
pub fn sample_instance(config: &InstanceConfig, seed: u64) -> Result<SparseInstance> {
    config.validate()?;
    let mut rng = seed::rng(seed);
    let beta = sample_beta(config, &mut rng);
    let x = sample_measurements(config, config.n_measurements, &mut rng);
    Ok(complete(config, x, beta, &mut rng))
}

/// Sample an instance that reuses a given measurement matrix.
pub fn sample_instance_with_x(
    config: &InstanceConfig,
    x: &Array2<f64>,
    seed: u64,
) -> Result<SparseInstance> {
    config.validate()?;
    if x.ncols() != config.d {
        return Err(Error::domain(format!(
            "measurement matrix has {} columns, config d = {}",
            x.ncols(),
            config.d
        )));
    }
    let mut rng = seed::rng(seed);
    let beta = sample_beta(config, &mut rng);
    Ok(complete(config, x.clone(), beta, &mut rng))
}

/// `count` independent instances; element `i` uses sub-seed `derive(seed, i)`.
pub fn sample_batch(config: &InstanceConfig, count: usize, seed: u64) -> Result<Vec<SparseInstance>> {
    if count == 0 {
        return Err(Error::config("batch count must be at least 1"));
    }
    (0..count)
        .map(|i| sample_instance(config, seed::derive(seed, i as u64)))
        .collect()
}

/// Seed of the shared matrix in [`sample_batch_fixed_x`].
pub fn fixed_x_seed(seed: u64) -> u64 {
    seed::derive(seed, u64::MAX)
}

/// `count` instances sharing one measurement matrix while `β*` varies.
pub fn sample_batch_fixed_x(
    config: &InstanceConfig,
    count: usize,
    seed: u64,
) -> Result<Vec<SparseInstance>> {
    if count == 0 {
        return Err(Error::config("batch count must be at least 1"));
    }
    config.validate()?;
    let mut rng = seed::rng(fixed_x_seed(seed));
    let x = sample_measurements(config, config.n_measurements, &mut rng);
    (0..count)
        .map(|i| sample_instance_with_x(config, &x, seed::derive(seed, i as u64)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_instance_shape_and_consistency() {
        let cfg = InstanceConfig::desk_default();
        let inst = sample_instance(&cfg, 11).unwrap();
        assert_eq!(inst.x.dim(), (10, 20));
        assert_eq!(inst.sparsity(), 3);
        let resid = &inst.y - &inst.x.dot(&inst.beta_star);
        assert!(resid.iter().all(|&r| r == 0.0));
        assert_eq!(inst.y_query, inst.x_query.dot(&inst.beta_star));
    }

    #[test]
    fn zero_sparsity_gives_zero_observations() {
        let cfg = InstanceConfig::new(5, 4, 0);
        let inst = sample_instance(&cfg, 3).unwrap();
        assert!(inst.beta_star.iter().all(|&b| b == 0.0));
        assert!(inst.y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn same_seed_same_instance() {
        let cfg = InstanceConfig::desk_default();
        let a = sample_instance(&cfg, 99).unwrap();
        let b = sample_instance(&cfg, 99).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        let c = sample_instance(&cfg, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn support_restriction_respected() {
        let cfg = InstanceConfig::desk_default().with_support((0..10).collect());
        for s in 0..50 {
            let inst = sample_instance(&cfg, s).unwrap();
            assert!(inst.support().iter().all(|&i| i < 10));
            assert_eq!(inst.sparsity(), 3);
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let cfg = InstanceConfig::new(10, 5, 4).with_support(vec![0, 1, 2]);
        assert!(matches!(sample_instance(&cfg, 0), Err(Error::Config(_))));
        let cfg = InstanceConfig::new(3, 5, 4);
        assert!(sample_instance(&cfg, 0).is_err());
        let cfg = InstanceConfig::new(3, 5, 1).with_support(vec![0, 3]);
        assert!(sample_instance(&cfg, 0).is_err());
        let mut cfg = InstanceConfig::new(3, 5, 1);
        cfg.x_variances = Some(vec![1.0, 0.0, 1.0]);
        assert!(sample_instance(&cfg, 0).is_err());
    }

    #[test]
    fn batch_matches_sub_seeds() {
        let cfg = InstanceConfig::desk_default();
        let batch = sample_batch(&cfg, 3, 5).unwrap();
        assert_eq!(batch.len(), 3);
        assert_ne!(batch[0].x, batch[1].x);
        assert_ne!(batch[1].x, batch[2].x);
        let one = sample_batch(&cfg, 1, 5).unwrap();
        assert_eq!(one[0], sample_instance(&cfg, seed::derive(5, 0)).unwrap());
        assert_eq!(one[0], batch[0]);
        assert!(sample_batch(&cfg, 0, 5).is_err());
    }

    #[test]
    fn fixed_x_batch_shares_matrix() {
        let cfg = InstanceConfig::desk_default();
        let batch = sample_batch_fixed_x(&cfg, 4, 8).unwrap();
        for inst in &batch[1..] {
            assert_eq!(inst.x, batch[0].x);
        }
        assert_ne!(batch[0].beta_star, batch[1].beta_star);
    }

    #[test]
    fn noise_hook_perturbs_observations() {
        let mut cfg = InstanceConfig::desk_default();
        cfg.noise_std = 0.5;
        let inst = sample_instance(&cfg, 1).unwrap();
        let resid = &inst.y - &inst.x.dot(&inst.beta_star);
        assert!(resid.iter().any(|&r| r != 0.0));
    }

    #[test]
    fn column_second_moments_match_variances() {
        let mut cfg = InstanceConfig::new(4, 20_000, 1);
        cfg.x_variances = Some(vec![4.0, 2.0, 1.0, 0.25]);
        let inst = sample_instance(&cfg, 2024).unwrap();
        for (j, col) in inst.x.columns().into_iter().enumerate() {
            let m2 = col.iter().map(|v| v * v).sum::<f64>() / col.len() as f64;
            let want = cfg.variance(j);
            assert!((m2 - want).abs() / want < 0.05, "col {j}: {m2} vs {want}");
        }
    }

    #[test]
    fn binary_errors() {
        let inst = sample_instance(&InstanceConfig::new(4, 3, 2), 0).unwrap();
        let bytes = inst.to_bytes();
        assert_eq!(SparseInstance::from_bytes(&bytes).unwrap(), inst);
        // truncated
        let err = SparseInstance::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
        // d in header disagrees with the body
        let mut tampered = bytes.clone();
        tampered[8..16].copy_from_slice(&5u64.to_le_bytes());
        let err = SparseInstance::from_bytes(&tampered).unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 32, .. }), "{err}");
        // header sparsity disagrees with β*
        let mut tampered = bytes.clone();
        tampered[24..32].copy_from_slice(&1u64.to_le_bytes());
        assert!(SparseInstance::from_bytes(&tampered).is_err());
    }

    #[test]
    fn json_form_has_expected_fields() {
        let inst = sample_instance(&InstanceConfig::new(3, 2, 1), 4).unwrap();
        let text = inst.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        for key in ["d", "n", "s", "x", "beta_star", "y", "x_query", "y_query"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(SparseInstance::from_json(&text).unwrap(), inst);
    }
}
