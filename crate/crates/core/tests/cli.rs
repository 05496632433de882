use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use msrisk::msmodel::{ModelDocument, MsTModel};
use msrisk::tdist::MvtParams;
use nalgebra::DMatrix;

fn msrisk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_msrisk")).args(args).output().unwrap()
}

fn ok(args: &[&str]) {
    let out = msrisk(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn write_model(dir: &Path) -> String {
    let sig = |s: f64, r: f64| [s, r * s, 0.0, r * s, s, r * s, 0.0, r * s, s];
    let a = MvtParams::from_slices(&[0.3, 0.2, 0.25], &sig(1.0, 0.3), 8.0).unwrap();
    let b = MvtParams::from_slices(&[-1.0, -0.8, -0.9], &sig(4.0, 0.6), 5.0).unwrap();
    let q = DMatrix::from_row_slice(2, 2, &[0.95, 0.05, 0.1, 0.9]);
    let model = MsTModel::new(vec![a, b], q, vec![0.6, 0.4]).unwrap();
    let labels: Vec<String> = ["banks", "energy", "tech"].iter().map(|s| s.to_string()).collect();
    let path = dir.join("truth_model.json");
    ModelDocument::from_model(&model, &labels).write(&path).unwrap();
    path.to_str().unwrap().to_owned()
}

fn data_lines(path: &Path) -> Vec<String> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# schema-version: 1"), "{}", path.display());
    lines.map(str::to_owned).collect()
}

#[test]
fn pipeline_from_simulation_to_attribution() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let model = write_model(dir.path());

    ok(&["simulate", "--model", &model, "--T", "250", "--seed", "3", "--out", out]);
    let panel = dir.path().join("panel.csv");
    let rows = data_lines(&panel);
    assert_eq!(rows[0], "date,banks,energy,tech");
    assert_eq!(rows.len(), 251);
    assert_eq!(data_lines(&dir.path().join("states.csv")).len(), 251);
    let input = panel.to_str().unwrap();

    ok(&["stats", "--input", input, "--out", out]);
    assert_eq!(data_lines(&dir.path().join("stats.csv")).len(), 4);

    ok(&["select", "--input", input, "--L-range", "1..3", "--restarts", "2", "--out", out]);
    let sel = data_lines(&dir.path().join("selection.csv"));
    assert_eq!(sel.len(), 4);
    assert_eq!(sel.iter().filter(|r| r.contains("true")).count(), 1);

    ok(&["fit", "--input", input, "--L", "2", "--restarts", "2", "--out", out]);
    let doc = ModelDocument::read(dir.path().join("model.json")).unwrap();
    assert_eq!((doc.n_states, doc.p, doc.k), (2, 3, 2 * 10 + 3));
    assert_eq!(data_lines(&dir.path().join("smoothed.csv"))[0], "date,state_1,state_2");

    ok(&["risk", "--model", dir.path().join("model.json").to_str().unwrap(), "--input", input, "--out", out]);
    let covar = data_lines(&dir.path().join("risk_covar.csv"));
    assert_eq!(covar[0], "date,target,distress_set,measure,tau1,tau2,value");
    assert!(covar.len() > 250 * 3);

    ok(&[
        "shapley",
        "--model",
        dir.path().join("model.json").to_str().unwrap(),
        "--input",
        input,
        "--measure",
        "covar",
        "--compare-standard",
        "--out",
        out,
    ]);
    let shares = data_lines(&dir.path().join("shapley_covar.csv"));
    assert_eq!(shares[0], "date,target,contributor,measure,share,grand_value");
    // three targets, two contributors each
    assert_eq!(shares.len(), 1 + 250 * 6);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("shapley_covar.json")).unwrap()).unwrap();
    assert_eq!(json["schema_version"], 1);
}

#[test]
fn config_file_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let model = write_model(dir.path());
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, format!(r#"{{"model": "{model}", "T": 40, "seed": 1}}"#)).unwrap();
    ok(&["simulate", "--config", cfg.to_str().unwrap(), "--T", "30", "--out", out]);
    assert_eq!(data_lines(&dir.path().join("panel.csv")).len(), 31);

    fs::write(&cfg, r#"{"no_such_key": 1}"#).unwrap();
    let bad = msrisk(&["stats", "--config", cfg.to_str().unwrap()]);
    assert!(!bad.status.success());
}

#[test]
fn errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let missing = msrisk(&["stats", "--input", "/nonexistent/returns.csv"]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error:"));

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "date,a,b\n2020-01-02,0.1,0.2\n2020-01-01,0.1,0.3\n").unwrap();
    let out = msrisk(&["stats", "--input", bad.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());

    let level = msrisk(&["risk", "--input", bad.to_str().unwrap(), "--tau1", "1.5"]);
    assert!(!level.status.success());
}
