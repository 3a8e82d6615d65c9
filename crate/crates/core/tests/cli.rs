use std::path::Path;
use std::process::{Command, Output};

fn varwave(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_varwave")).args(args).output().expect("spawn varwave")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path, extra: &str) -> String {
    let text = format!(
        "model.name = \"constant\"\nmodel.params = [1.0]\ndata.u0.kind = \"gaussian\"\n\
         solver.h = 0.03125\nsolver.t_max = 1.0\noutput.dir = \"out\"\noutput.snapshots = [0.5, 1.0]\n\
         chars.backward = [0.0]\nchars.forward = [0.5]\n{extra}"
    );
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn run_writes_the_run_directory_and_passes_the_oracle() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "check.oracle = \"dalembert\"\n");
    let o = varwave(&["run", &cfg]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("pass true"));
    let out = tmp.path().join("out");
    for f in [
        "config.toml",
        "manifest.json",
        "energy.json",
        "bound.json",
        "residuals.json",
        "q_series.csv",
        "snapshot_t0.5.csv",
        "atoms_t1.csv",
        "char_backward_x0.csv",
        "char_forward_x0.5.csv",
        "grid.csv",
        "grid.json",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["partial"], false);
    assert_eq!(manifest["oracle"]["pass"], true);
}

#[test]
fn follow_up_commands_read_the_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    assert!(varwave(&["run", &cfg]).status.success());
    let out = tmp.path().join("out");
    let dir = out.to_str().unwrap();

    let o = varwave(&["snapshot", dir, "--tau", "0.75"]);
    assert!(o.status.success());
    assert!(out.join("snapshot_t0.75.csv").is_file());

    let o = varwave(&["chars", dir, "--from", "-0.5", "--sign", "-"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("char_backward_x-0.5.csv").is_file());

    let o = varwave(&["energy", dir]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("E0 = 2.5066"));

    let o = varwave(&["qbound", dir]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("pass true"));
}

#[test]
fn converge_reports_orders() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let o = varwave(&["converge", &cfg, "--levels", "3", "--oracle", "dalembert"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rep: serde_json::Value =
        serde_json::from_slice(&std::fs::read(tmp.path().join("out/converge.json")).unwrap()).unwrap();
    let orders = rep["oracle"]["orders"].as_array().unwrap();
    assert_eq!(orders.len(), 2);
    assert!(orders[1].as_f64().unwrap() > 1.5);
}

#[test]
fn invalid_input_exits_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "solver.bogus = 1\n");
    assert_eq!(varwave(&["run", &cfg]).status.code(), Some(2));

    let cfg = write_config(tmp.path(), "");
    assert!(varwave(&["run", &cfg]).status.success());
    let dir = tmp.path().join("out");
    let dir = dir.to_str().unwrap();
    assert_eq!(varwave(&["snapshot", dir, "--tau", "5"]).status.code(), Some(2));
    assert_eq!(varwave(&["chars", dir, "--from", "50", "--sign", "+"]).status.code(), Some(2));
    assert_eq!(varwave(&["chars", dir, "--from", "0", "--sign", "sideways"]).status.code(), Some(2));
    assert_eq!(varwave(&["energy", tmp.path().join("missing").to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn dalembert_oracle_rejects_variable_speed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "").replace("run.toml", "cos.toml");
    let text = std::fs::read_to_string(tmp.path().join("run.toml")).unwrap().replace(
        "model.name = \"constant\"\nmodel.params = [1.0]",
        "model.name = \"cosine\"\nmodel.params = [2.0, 1.0]",
    );
    std::fs::write(&cfg, text).unwrap();
    assert_eq!(varwave(&["run", &cfg, "--oracle", "dalembert"]).status.code(), Some(2));
}
