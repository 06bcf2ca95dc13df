//! Config-driven experiment runner writing CSV curves, an SVG chart and a
//! hashed manifest.

mod artifacts;
mod config;
mod runs;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use artifacts::{emit_csv, emit_svg, parse_csv, render_csv, render_svg, sha256_hex, Chart, Curve, CurvePoint, CSV_HEADER};
pub use config::{desk_training, ExperimentConfig, ExperimentKind, SeedSpec, SolverKind, SolverSpec};
pub use runs::{
    compute, mean_stderr, prediction_curve, readout_errors, realize, solver_training, transformer_gate, Outcome,
    Realized,
};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    /// File name relative to the output directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactManifest {
    pub experiment: ExperimentKind,
    pub files: Vec<ArtifactEntry>,
    pub summary: BTreeMap<String, f64>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Serialize)]
struct Meta<'a> {
    experiment: ExperimentKind,
    metric: &'a str,
    aggregation: &'a str,
    x: &'a str,
    series: Vec<&'a str>,
    summary: &'a BTreeMap<String, f64>,
    config: &'a ExperimentConfig,
}

fn slug(series: &str) -> String {
    series.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' }).collect()
}

fn write(dir: &Path, name: &str, bytes: &[u8], files: &mut Vec<ArtifactEntry>) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    files.push(ArtifactEntry { path: name.to_string(), sha256: sha256_hex(bytes), bytes: bytes.len() as u64 });
    Ok(())
}

/// Runs the configured experiment and writes one CSV per curve, a
/// `.meta.json` echo, one SVG and `manifest.json` into `output_dir`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ArtifactManifest> {
    config.validate()?;
    let outcome = compute(config)?;
    let dir = &config.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = config.experiment.name();
    let mut files = Vec::new();
    let mut used = Vec::new();
    for curve in &outcome.curves {
        let file = format!("{name}_{}.csv", slug(&curve.series));
        if used.contains(&file) {
            return Err(Error::config(format!("series names collide in file {file}")));
        }
        write(dir, &file, render_csv(std::slice::from_ref(curve))?.as_bytes(), &mut files)?;
        used.push(file);
    }
    let meta = Meta {
        experiment: config.experiment,
        metric: outcome.metric,
        aggregation: outcome.aggregation,
        x: outcome.x_name,
        series: outcome.curves.iter().map(|c| c.series.as_str()).collect(),
        summary: &outcome.summary,
        config,
    };
    let meta_json = serde_json::to_string_pretty(&meta)? + "\n";
    write(dir, &format!("{name}.meta.json"), meta_json.as_bytes(), &mut files)?;
    write(dir, &format!("{name}.svg"), render_svg(&outcome.curves, &outcome.chart)?.as_bytes(), &mut files)?;
    let manifest = ArtifactManifest { experiment: config.experiment, files, summary: outcome.summary };
    let path = dir.join(MANIFEST_NAME);
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Names of manifest entries whose file is missing or whose hash differs.
pub fn verify_manifest(dir: &Path) -> Result<Vec<String>> {
    let path = dir.join(MANIFEST_NAME);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: ArtifactManifest = serde_json::from_str(&text)?;
    Ok(manifest
        .files
        .iter()
        .filter(|f| std::fs::read(dir.join(&f.path)).map_or(true, |b| sha256_hex(&b) != f.sha256))
        .map(|f| f.path.clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::InstanceConfig;

    fn coherence_config(dir: &Path) -> ExperimentConfig {
        ExperimentConfig {
            experiment: ExperimentKind::CoherenceDecay,
            instance: InstanceConfig::new(6, 10, 1),
            roster: vec![SolverSpec::new(SolverKind::ListaVm)],
            seeds: SeedSpec::Range { start: 0, count: 8 },
            output_dir: dir.to_path_buf(),
            desk_scale: 1.0,
            training: None,
            test_instances: 10,
            sweep: Some(vec![20, 80]),
            gamma: None,
            layers: None,
        }
    }

    #[test]
    fn manifest_hashes_match_files() {
        let tmp = tempfile::tempdir().unwrap();
        let m = run_experiment(&coherence_config(tmp.path())).unwrap();
        assert_eq!(m.files.len(), 5);
        assert!(verify_manifest(tmp.path()).unwrap().is_empty());
        std::fs::write(tmp.path().join(&m.files[0].path), "tampered").unwrap();
        assert_eq!(verify_manifest(tmp.path()).unwrap(), vec![m.files[0].path.clone()]);
    }

    #[test]
    fn rerun_is_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = run_experiment(&coherence_config(a.path())).unwrap();
        let mb = run_experiment(&coherence_config(b.path())).unwrap();
        let hashes = |m: &ArtifactManifest| m.files.iter().filter(|f| f.path.ends_with(".csv")).map(|f| f.sha256.clone()).collect::<Vec<_>>();
        assert_eq!(hashes(&ma), hashes(&mb));
    }

    #[test]
    fn slugs_are_file_safe() {
        assert_eq!(slug("lista_cp/fixed_x"), "lista_cp_fixed_x");
    }
}
