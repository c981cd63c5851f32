use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn liesindy(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_liesindy"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn count_split(m: &serde_json::Value, split: &str) -> usize {
    m["trajectories"].as_array().unwrap().iter().filter(|t| t["split"] == split).count()
}

#[test]
fn generate_oscillator_split_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("data");
    let o = liesindy(&["generate", "--system", "oscillator", "--noise", "0.2", "--seed", "7", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = manifest(&out);
    assert_eq!(
        (count_split(&m, "train"), count_split(&m, "val"), count_split(&m, "test")),
        (50, 10, 10)
    );
    assert_eq!(m["artifact"]["seed"], 7);
    assert_eq!(m["artifact"]["config_hash"].as_str().unwrap().len(), 64);
    assert!(m["artifact"]["tool_version"].is_string());
}

#[test]
fn zero_noise_gives_clean_states() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"data": {"n_train": 2, "n_val": 1, "n_test": 1}}"#);
    let out = dir.path().join("data");
    let o = liesindy(&["generate", "--config", &cfg, "--system", "oscillator", "--noise", "0", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = manifest(&out);
    let file = m["trajectories"][0]["file"].as_str().unwrap();
    let mut rdr = csv::Reader::from_path(out.join(file)).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let (x1, xc1) = (col("x1"), col("xc1"));
    for rec in rdr.records() {
        let rec = rec.unwrap();
        assert_eq!(rec[x1], rec[xc1]);
    }
}

#[test]
fn lotka_volterra_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"data": {"n_train": 1, "n_val": 0, "n_test": 0, "smooth": false}}"#,
    );
    let out = dir.path().join("data");
    let o = liesindy(&["generate", "--config", &cfg, "--system", "lv", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = manifest(&out);
    assert_eq!(m["settings"]["steps"], 10000);
    assert_eq!(m["settings"]["dt"], 0.002);
}

#[test]
fn nullspace_dimensions() {
    for (sys, r) in [("oscillator", 2), ("growth", 3), ("seir", 34)] {
        let o = liesindy(&["nullspace", "--system", sys]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert_eq!(stdout(&o).lines().next().unwrap(), format!("r = {r}"));
    }
    let dir = tempfile::tempdir().unwrap();
    let o = liesindy(&["nullspace", "--system", "oscillator", "--out", dir.path().to_str().unwrap()]);
    assert!(stdout(&o).contains("dx1/dt"), "{}", stdout(&o));
    let j: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("nullspace.json")).unwrap()).unwrap();
    assert_eq!(j["r"], 2);
    assert_eq!(j["basis"].as_array().unwrap().len(), 2);
}

#[test]
fn check_symmetry_exit_codes() {
    for sys in ["oscillator", "growth", "seir"] {
        let o = liesindy(&["check-symmetry", "--system", sys]);
        assert_eq!(o.status.code(), Some(0), "{sys}: {}", stdout(&o));
        assert!(stdout(&o).contains("consistent"));
    }
    let o = liesindy(&["check-symmetry", "--system", "oscillator", "--field", "x1^2; 0", "--point", "1,1"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stdout(&o).contains("VIOLATED"));
    let o = liesindy(&["check-symmetry", "--system", "lv"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn discover_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"system": "oscillator", "method": "equiv-c", "data": {"n_train": 10, "n_val": 2, "n_test": 2}}"#,
    );
    let model = dir.path().join("model.json");
    let o = liesindy(&["discover", "--config", &cfg, "--out", model.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("dx1/dt = ") && text.contains("dx2/dt = "), "{text}");
    let j: serde_json::Value = serde_json::from_str(&fs::read_to_string(&model).unwrap()).unwrap();
    assert_eq!(j["method"], "equiv-c");
    assert_eq!(j["diagnostics"]["nullspace_dim"], 2);

    let o = liesindy(&["check-symmetry", "--system", "oscillator", "--model", model.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
}

#[test]
fn discover_from_saved_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"data": {"n_train": 5, "n_val": 1, "n_test": 1}}"#);
    let data = dir.path().join("data");
    let o = liesindy(&["generate", "--config", &cfg, "--system", "growth", "--noise", "0", "--out", data.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("res");
    let o = liesindy(&["discover", "--dataset", data.to_str().unwrap(), "--method", "sindy", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("model.json").exists());
}

#[test]
fn invalid_configs_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.json", r#"{"system": "oscillator", "discovery": {"gp": {"popsize": 10}}}"#);
    let o = liesindy(&["benchmark", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("discovery.gp.popsize"), "{}", stderr(&o));

    let o = liesindy(&["generate", "--system", "oscillator"]);
    assert_eq!(o.status.code(), Some(1), "missing --out");
    let o = liesindy(&["generate", "--system", "pendulum", "--out", "x"]);
    assert_eq!(o.status.code(), Some(1));
    let o = liesindy(&["discover", "--method", "lasso"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn runtime_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nothing-here");
    let o = liesindy(&["discover", "--dataset", missing.to_str().unwrap(), "--method", "sindy"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn benchmark_emits_tables_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "bench.json",
        r#"{"system": "oscillator", "seed": 11,
            "data": {"n_train": 8, "n_val": 2, "n_test": 2},
            "benchmark": {"methods": ["sindy", "equiv-c"], "runs": 3, "checkpoints": 5}}"#,
    );
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let o = liesindy(&["benchmark", "--config", &cfg, "--out", a.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = liesindy(&["--jobs", "3", "benchmark", "--config", &cfg, "--out", b.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let tables = fs::read_to_string(a.join("tables.csv")).unwrap();
    for metric in ["success", "rmse_successful", "rmse_all"] {
        assert_eq!(tables.lines().filter(|l| l.split(',').nth(1) == Some(metric)).count(), 2, "{tables}");
    }
    for f in ["report.json", "tables.csv", "ltp.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    assert!(a.join("timings.csv").exists());
}
