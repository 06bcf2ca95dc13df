use std::path::Path;
use std::process::{Command, Output};

fn icsr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_icsr")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const COHERENCE: &str = r#"{"experiment": "coherence_decay", "instance": {"d": 6, "n_measurements": 10, "sparsity": 1},
    "roster": [{"solver": "lista_vm"}], "seeds": {"start": 0, "count": 5}, "output_dir": "OUT", "sweep": [20, 80]}"#;

#[test]
fn run_writes_manifest_and_files() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), &COHERENCE.replace("OUT", out.to_str().unwrap()));
    let o = icsr(&["run", &cfg]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(manifest["experiment"], "coherence_decay");
    for f in manifest["files"].as_array().unwrap() {
        assert!(out.join(f["path"].as_str().unwrap()).exists());
    }
    assert!(out.join("manifest.json").exists());
    assert!(out.join("coherence_decay_mu_offdiag.csv").exists());
}

#[test]
fn flags_override_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &COHERENCE.replace("OUT", "/nonexistent/ignored"));
    let out = tmp.path().join("flagged");
    let o = icsr(&["run", &cfg, "--out", out.to_str().unwrap(), "--seed", "40", "--desk-scale", "0.5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("coherence_decay.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["config"]["seeds"]["start"], 40);
    assert_eq!(meta["config"]["desk_scale"], 0.5);
}

#[test]
fn reruns_produce_identical_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), COHERENCE);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(icsr(&["run", &cfg, "--out", a.to_str().unwrap()]).status.success());
    assert!(icsr(&["run", &cfg, "--out", b.to_str().unwrap()]).status.success());
    for name in ["coherence_decay_mu_offdiag.csv", "coherence_decay_sigma_min.csv"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap());
    }
}

#[test]
fn unknown_solver_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &COHERENCE.replace("lista_vm", "ridge"));
    let o = icsr(&["run", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("ridge"));
}

#[test]
fn missing_config_is_a_config_error() {
    assert_eq!(icsr(&["run", "/no/such/config.json"]).status.code(), Some(2));
}

#[test]
fn divergent_training_is_a_numeric_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let body = format!(
        r#"{{"experiment": "fig1a", "instance": {{"d": 6, "n_measurements": 5, "sparsity": 1}},
            "roster": [{{"solver": "lista_vm"}}], "seeds": [0], "output_dir": "{}", "test_instances": 10,
            "training": {{"epochs": 3, "matrices_per_epoch": 2, "instances_per_matrix": 10,
                          "learning_rate": 1e6, "optimizer": "sgd", "grad_clip": null}}}}"#,
        tmp.path().join("out").display()
    );
    let cfg = write_config(tmp.path(), &body);
    let o = icsr(&["run", &cfg]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}
