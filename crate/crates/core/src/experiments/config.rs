use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::InstanceConfig;
use crate::learned::{ModelKind, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Per-layer prediction loss, fixed and varying measurement matrices.
    Fig1a,
    /// As `fig1a` on a restricted support.
    Fig1b,
    /// Linear against query read-out error over the prefix length.
    Fig1c,
    /// ℓ₁ error of the contraction regime per layer.
    ConvergenceK,
    /// Off-diagonal coherence against the number of rows.
    CoherenceDecay,
    /// Per-epoch test error of meta-training.
    MetaTrainCompare,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Fig1a => "fig1a",
            ExperimentKind::Fig1b => "fig1b",
            ExperimentKind::Fig1c => "fig1c",
            ExperimentKind::ConvergenceK => "convergence_k",
            ExperimentKind::CoherenceDecay => "coherence_decay",
            ExperimentKind::MetaTrainCompare => "meta_train_compare",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Ista,
    Fista,
    Lista,
    ListaCp,
    ListaVm,
    ListaVmSs,
    /// The constructed Transformer carrying a trained LISTA-VM.
    Transformer,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Ista => "ista",
            SolverKind::Fista => "fista",
            SolverKind::Lista => "lista",
            SolverKind::ListaCp => "lista_cp",
            SolverKind::ListaVm => "lista_vm",
            SolverKind::ListaVmSs => "lista_vm_ss",
            SolverKind::Transformer => "transformer",
        }
    }

    /// The model trained for this solver, if any.
    pub fn model(self) -> Option<ModelKind> {
        match self {
            SolverKind::Ista | SolverKind::Fista => None,
            SolverKind::Lista => Some(ModelKind::Lista),
            SolverKind::ListaCp => Some(ModelKind::ListaCp),
            SolverKind::ListaVm | SolverKind::Transformer => Some(ModelKind::ListaVm),
            SolverKind::ListaVmSs => Some(ModelKind::ListaVmSs),
        }
    }
}

/// One roster entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    pub solver: SolverKind,
    /// Series name; defaults to the solver name, with `_meta` appended for
    /// LISTA and LISTA-CP trained on varying matrices.
    #[serde(default)]
    pub label: Option<String>,
    /// LASSO penalty of ISTA and FISTA.
    #[serde(default)]
    pub alpha: Option<f64>,
    /// Train on a single matrix. Defaults to true for LISTA and LISTA-CP.
    #[serde(default)]
    pub fixed_x: Option<bool>,
    /// Train on the unrestricted distribution even when the instance config
    /// carries a support set.
    #[serde(default)]
    pub train_unrestricted: bool,
}

impl SolverSpec {
    pub fn new(solver: SolverKind) -> Self {
        SolverSpec { solver, label: None, alpha: None, fixed_x: None, train_unrestricted: false }
    }

    pub fn fixed_x(&self) -> bool {
        self.fixed_x.unwrap_or(matches!(self.solver, SolverKind::Lista | SolverKind::ListaCp))
    }

    pub fn label(&self) -> String {
        match &self.label {
            Some(l) => l.clone(),
            None if matches!(self.solver, SolverKind::Lista | SolverKind::ListaCp) && !self.fixed_x() => {
                format!("{}_meta", self.solver.name())
            }
            None => self.solver.name().to_string(),
        }
    }
}

/// Either an explicit list or `count` consecutive seeds from `start`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedSpec {
    List(Vec<u64>),
    Range { start: u64, count: u64 },
}

impl SeedSpec {
    pub fn expand(&self) -> Vec<u64> {
        match self {
            SeedSpec::List(v) => v.clone(),
            SeedSpec::Range { start, count } => (0..*count).map(|i| start.wrapping_add(i)).collect(),
        }
    }

    /// Same count, starting at `start`.
    pub fn rebased(&self, start: u64) -> SeedSpec {
        SeedSpec::Range { start, count: self.expand().len() as u64 }
    }
}

fn default_scale() -> f64 {
    1.0
}
fn default_test_instances() -> usize {
    500
}

/// Training budget at desk scale: 20 epochs of 20 matrices × 100 instances.
pub fn desk_training() -> TrainConfig {
    TrainConfig::new(20, 20, 100)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub instance: InstanceConfig,
    pub roster: Vec<SolverSpec>,
    pub seeds: SeedSpec,
    pub output_dir: PathBuf,
    /// Multiplies training epochs and test-set sizes.
    #[serde(default = "default_scale")]
    pub desk_scale: f64,
    #[serde(default)]
    pub training: Option<TrainConfig>,
    #[serde(default = "default_test_instances")]
    pub test_instances: usize,
    /// Prefix lengths (`fig1c`) or row counts (`coherence_decay`).
    #[serde(default)]
    pub sweep: Option<Vec<usize>>,
    /// Step factor of `convergence_k`.
    #[serde(default)]
    pub gamma: Option<f64>,
    /// Unrolled layers; overrides `training.layers`.
    #[serde(default)]
    pub layers: Option<usize>,
}

impl ExperimentConfig {
    /// Parses JSON; any malformed or unknown field is a configuration error.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.instance.validate()?;
        if self.roster.is_empty() {
            return Err(Error::config("roster must not be empty"));
        }
        if self.seeds.expand().is_empty() {
            return Err(Error::config("at least one seed is required"));
        }
        if !(self.desk_scale > 0.0) || !self.desk_scale.is_finite() {
            return Err(Error::config("desk_scale must be positive"));
        }
        if self.test_instances == 0 {
            return Err(Error::config("test_instances must be positive"));
        }
        if self.layers == Some(0) {
            return Err(Error::config("layers must be positive"));
        }
        let mut labels: Vec<String> = self.roster.iter().map(SolverSpec::label).collect();
        labels.sort();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("roster labels must be distinct"));
        }
        for spec in &self.roster {
            if spec.label.as_deref().is_some_and(|l| l.is_empty() || l.contains([',', '\n', '"'])) {
                return Err(Error::config("labels must be nonempty and free of commas and quotes"));
            }
            if matches!(spec.alpha, Some(a) if !(a >= 0.0)) {
                return Err(Error::config("alpha must be nonnegative"));
            }
            if spec.solver == SolverKind::ListaVmSs && self.instance.support_set.is_none() {
                return Err(Error::config("lista_vm_ss needs instance.support_set"));
            }
        }
        if let Some(t) = &self.training {
            for spec in &self.roster {
                if let Some(kind) = spec.solver.model() {
                    if kind != ModelKind::ListaVmSs {
                        t.validate(kind)?;
                    }
                }
            }
        }
        let has = |k: SolverKind| self.roster.iter().any(|s| s.solver == k);
        match self.experiment {
            ExperimentKind::Fig1b if self.instance.support_set.is_none() => {
                return Err(Error::config("fig1b needs instance.support_set"));
            }
            ExperimentKind::Fig1c if !has(SolverKind::Transformer) => {
                return Err(Error::config("fig1c needs a transformer entry in the roster"));
            }
            ExperimentKind::ConvergenceK | ExperimentKind::CoherenceDecay if !has(SolverKind::ListaVm) => {
                return Err(Error::config(format!("{} needs a lista_vm entry in the roster", self.experiment.name())));
            }
            ExperimentKind::MetaTrainCompare if !self.roster.iter().any(|s| s.solver.model().is_some()) => {
                return Err(Error::config("meta_train_compare needs a learned solver"));
            }
            _ => {}
        }
        if let Some(sweep) = &self.sweep {
            if sweep.is_empty() || sweep.contains(&0) {
                return Err(Error::config("sweep values must be positive"));
            }
            if self.experiment == ExperimentKind::Fig1c && sweep.iter().any(|&n| n > self.instance.n_measurements) {
                return Err(Error::config("fig1c sweep exceeds the context length"));
            }
        }
        if matches!(self.gamma, Some(g) if !(g > 0.0)) {
            return Err(Error::config("gamma must be positive"));
        }
        Ok(())
    }

    fn scaled(&self, v: usize) -> usize {
        ((v as f64 * self.desk_scale).round() as usize).max(1)
    }

    /// Training budget after `desk_scale` and `layers` are applied.
    pub fn effective_training(&self) -> TrainConfig {
        let mut t = self.training.clone().unwrap_or_else(desk_training);
        t.epochs = self.scaled(t.epochs);
        if let Some(k) = self.layers {
            t.layers = k;
        }
        t
    }

    pub fn effective_test_instances(&self) -> usize {
        self.scaled(self.test_instances)
    }

    pub fn layers(&self) -> usize {
        self.layers.or(self.training.as_ref().map(|t| t.layers)).unwrap_or(12)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal(experiment: &str, solver: &str) -> String {
        format!(
            r#"{{"experiment":"{experiment}","instance":{{"d":20,"n_measurements":10,"sparsity":3}},
               "roster":[{{"solver":"{solver}"}}],"seeds":[1,2],"output_dir":"out"}}"#
        )
    }

    #[test]
    fn parses_minimal_config() {
        let c = ExperimentConfig::from_json(&minimal("fig1a", "ista")).unwrap();
        assert_eq!(c.experiment, ExperimentKind::Fig1a);
        assert_eq!(c.desk_scale, 1.0);
        assert_eq!(c.seeds.expand(), vec![1, 2]);
        assert_eq!(c.effective_test_instances(), 500);
        assert_eq!(c.effective_training().epochs, 20);
    }

    #[test]
    fn unknown_names_are_config_errors() {
        assert!(matches!(ExperimentConfig::from_json(&minimal("fig9", "ista")), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::from_json(&minimal("fig1a", "adam")), Err(Error::Config(_))));
    }

    #[test]
    fn empty_roster_rejected() {
        let text = minimal("fig1a", "ista").replace(r#"[{"solver":"ista"}]"#, "[]");
        assert!(matches!(ExperimentConfig::from_json(&text), Err(Error::Config(_))));
    }

    #[test]
    fn experiment_prerequisites() {
        assert!(ExperimentConfig::from_json(&minimal("fig1b", "ista")).is_err());
        assert!(ExperimentConfig::from_json(&minimal("fig1c", "lista_vm")).is_err());
        assert!(ExperimentConfig::from_json(&minimal("coherence_decay", "ista")).is_err());
        assert!(ExperimentConfig::from_json(&minimal("fig1a", "lista_vm_ss")).is_err());
    }

    #[test]
    fn seed_range_and_scale() {
        let text = minimal("fig1a", "ista")
            .replace("[1,2]", r#"{"start":7,"count":3}"#)
            .replace(r#""output_dir":"out""#, r#""output_dir":"out","desk_scale":0.5"#);
        let c = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(c.seeds.expand(), vec![7, 8, 9]);
        assert_eq!(c.effective_test_instances(), 250);
        assert_eq!(c.effective_training().epochs, 10);
        assert_eq!(c.seeds.rebased(100).expand(), vec![100, 101, 102]);
    }

    #[test]
    fn default_labels() {
        let mut s = SolverSpec::new(SolverKind::ListaCp);
        assert_eq!(s.label(), "lista_cp");
        s.fixed_x = Some(false);
        assert_eq!(s.label(), "lista_cp_meta");
        assert_eq!(SolverSpec::new(SolverKind::ListaVm).label(), "lista_vm");
        assert!(!SolverSpec::new(SolverKind::ListaVm).fixed_x());
    }

    #[test]
    fn round_trips_through_json() {
        let c = ExperimentConfig::from_json(&minimal("fig1a", "fista")).unwrap();
        assert_eq!(ExperimentConfig::from_json(&c.to_json()).unwrap(), c);
    }
}
