use icsr::experiments::{compute, parse_csv, run_experiment, verify_manifest, ExperimentConfig, ExperimentKind};

fn config(json: &str, dir: &std::path::Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::from_json(json).unwrap();
    c.output_dir = dir.to_path_buf();
    c.validate().unwrap();
    c
}

const TINY_TRAINING: &str = r#""training": {"epochs": 2, "matrices_per_epoch": 2, "instances_per_matrix": 10, "test_instances": 10}"#;

#[test]
fn fig1a_writes_fixed_and_varying_series() {
    let tmp = tempfile::tempdir().unwrap();
    let json = format!(
        r#"{{"experiment": "fig1a", "instance": {{"d": 6, "n_measurements": 5, "sparsity": 1}},
            "roster": [{{"solver": "ista"}}, {{"solver": "fista"}}, {{"solver": "lista_cp"}}, {{"solver": "lista_vm"}}],
            "seeds": [1, 2], "output_dir": "unused", "test_instances": 20, "layers": 4, {TINY_TRAINING}}}"#
    );
    let m = run_experiment(&config(&json, tmp.path())).unwrap();
    assert_eq!(m.experiment, ExperimentKind::Fig1a);
    assert!(verify_manifest(tmp.path()).unwrap().is_empty());
    let csv = std::fs::read_to_string(tmp.path().join("fig1a_lista_cp_fixed_x.csv")).unwrap();
    let curves = parse_csv(&csv).unwrap();
    assert_eq!(curves[0].series, "lista_cp/fixed_x");
    assert_eq!(curves[0].points.len(), 5);
    assert!(tmp.path().join("fig1a_lista_vm_varying_x.csv").exists());
    assert!(tmp.path().join("fig1a.svg").exists());
}

#[test]
fn fig1b_masks_the_support_variant() {
    let tmp = tempfile::tempdir().unwrap();
    let json = format!(
        r#"{{"experiment": "fig1b", "instance": {{"d": 6, "n_measurements": 5, "sparsity": 1, "support_set": [0, 1, 2]}},
            "roster": [{{"solver": "lista_vm", "train_unrestricted": true}}, {{"solver": "lista_vm_ss"}}],
            "seeds": [3], "output_dir": "unused", "test_instances": 20, "layers": 3, {TINY_TRAINING}}}"#
    );
    let out = compute(&config(&json, tmp.path())).unwrap();
    assert!(out.curves.iter().any(|c| c.series == "lista_vm_ss/varying_x"));
    assert!(out.curves.iter().all(|c| c.points.iter().all(|p| p.value.is_finite())));
}

#[test]
fn fig1c_reports_both_readouts() {
    let tmp = tempfile::tempdir().unwrap();
    let json = format!(
        r#"{{"experiment": "fig1c", "instance": {{"d": 4, "n_measurements": 8, "sparsity": 1}},
            "roster": [{{"solver": "transformer"}}], "seeds": {{"start": 0, "count": 6}},
            "output_dir": "unused", "sweep": [2, 8], "layers": 3, {TINY_TRAINING}}}"#
    );
    let out = compute(&config(&json, tmp.path())).unwrap();
    let names: Vec<&str> = out.curves.iter().map(|c| c.series.as_str()).collect();
    assert_eq!(names, ["linear", "query"]);
    assert!(out.summary.contains_key("gap_ratio_last_first"));
}

#[test]
fn convergence_respects_the_recursion() {
    let tmp = tempfile::tempdir().unwrap();
    let json = r#"{"experiment": "convergence_k", "instance": {"d": 8, "n_measurements": 400, "sparsity": 1},
        "roster": [{"solver": "lista_vm"}], "seeds": {"start": 0, "count": 10}, "output_dir": "unused", "layers": 15}"#;
    let out = compute(&config(json, tmp.path())).unwrap();
    assert!(out.summary["condition_passes"] >= 1.0);
    assert_eq!(out.summary["violations"], 0.0);
}

#[test]
fn coherence_falls_with_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let json = r#"{"experiment": "coherence_decay", "instance": {"d": 10, "n_measurements": 10, "sparsity": 1},
        "roster": [{"solver": "lista_vm"}], "seeds": {"start": 0, "count": 40}, "output_dir": "unused", "sweep": [50, 200, 800]}"#;
    let out = compute(&config(json, tmp.path())).unwrap();
    let mu = &out.curves[0].points;
    assert!(mu[2].value < mu[0].value);
    assert!(out.summary["mu_slope"] < -0.3);
}

#[test]
fn meta_train_compare_tracks_epochs() {
    let tmp = tempfile::tempdir().unwrap();
    let json = format!(
        r#"{{"experiment": "meta_train_compare", "instance": {{"d": 6, "n_measurements": 5, "sparsity": 1}},
            "roster": [{{"solver": "lista_cp", "fixed_x": false}}, {{"solver": "lista_vm"}}],
            "seeds": [0], "output_dir": "unused", "test_instances": 10, "layers": 3, {TINY_TRAINING}}}"#
    );
    let out = compute(&config(&json, tmp.path())).unwrap();
    assert!(out.curves.iter().any(|c| c.series.starts_with("lista_cp_meta")));
    assert!(out.curves.iter().all(|c| c.points.len() == 2));
}

#[test]
fn desk_scale_shrinks_the_test_set() {
    let json = r#"{"experiment": "fig1a", "instance": {"d": 6, "n_measurements": 5, "sparsity": 1},
        "roster": [{"solver": "ista"}], "seeds": [0], "output_dir": "o", "test_instances": 100, "desk_scale": 0.1}"#;
    assert_eq!(ExperimentConfig::from_json(json).unwrap().effective_test_instances(), 10);
}

#[test]
fn invalid_configs_are_rejected() {
    let unknown = r#"{"experiment": "fig1a", "instance": {"d": 6, "n_measurements": 5, "sparsity": 1},
        "roster": [{"solver": "ridge"}], "seeds": [0], "output_dir": "o"}"#;
    assert!(matches!(ExperimentConfig::from_json(unknown), Err(icsr::Error::Config(_))));
    let no_support = r#"{"experiment": "fig1b", "instance": {"d": 6, "n_measurements": 5, "sparsity": 1},
        "roster": [{"solver": "lista_vm_ss"}], "seeds": [0], "output_dir": "o"}"#;
    assert!(ExperimentConfig::from_json(no_support).is_err());
    let duplicate = r#"{"experiment": "fig1a", "instance": {"d": 6, "n_measurements": 5, "sparsity": 1},
        "roster": [{"solver": "ista"}, {"solver": "ista"}], "seeds": [0], "output_dir": "o"}"#;
    assert!(ExperimentConfig::from_json(duplicate).is_err());
}
