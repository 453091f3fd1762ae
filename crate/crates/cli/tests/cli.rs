use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_kkt-hardnet");

fn constraints(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/constraints").join(name)
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).current_dir(dir).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Data lines of a CSV, skipping `#` comments and the header.
fn data_rows(path: &Path) -> Vec<String> {
    let text = fs::read_to_string(path).unwrap();
    text.lines().filter(|l| !l.starts_with('#')).skip(1).map(String::from).collect()
}

#[test]
fn compile_example1_reports_the_system_shape() {
    let dir = tempfile::tempdir().unwrap();
    let ex1 = constraints("example1.txt");
    let o = run(dir.path(), &["compile", ex1.to_str().unwrap(), "--out", "sys"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = stdout(&o);
    assert!(s.contains("12 rows"), "{s}");
    assert!(s.contains("(2 y, 6 z, 1 λ)"), "{s}");
    assert!(dir.path().join("sys/system.txt").exists());
    assert!(dir.path().join("sys/manifest.txt").exists());
}

#[test]
fn inequality_only_file_gets_one_fb_chain() {
    let dir = tempfile::tempdir().unwrap();
    let ex3 = constraints("example3.txt");
    let sys = dir.path().join("ex3.txt");
    let o = run(dir.path(), &["compile", ex3.to_str().unwrap(), "--emit-system", sys.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("14 rows"));
    let text = fs::read_to_string(&sys).unwrap();
    assert!(text.lines().any(|l| l == "fb: 1"), "{text}");
}

#[test]
fn empty_constraint_file_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("empty.txt"), "inputs: x[1,2]\noutputs: y\n").unwrap();
    let o = run(dir.path(), &["compile", "empty.txt"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no constraints"));
    fs::write(dir.path().join("blank.txt"), "").unwrap();
    let o = run(dir.path(), &["compile", "blank.txt"]);
    assert!(stderr(&o).contains("no constraints"));
}

#[test]
fn project_clips_example3_points() {
    let dir = tempfile::tempdir().unwrap();
    let ex3 = constraints("example3.txt");
    assert!(run(dir.path(), &["compile", ex3.to_str().unwrap(), "--out", "."]).status.success());
    fs::write(dir.path().join("x.csv"), "x\n1.5\n1.2\n1.9\n").unwrap();
    fs::write(dir.path().join("y0.csv"), "y\n2.25\n1.0\n3.0\n").unwrap();
    let o = run(
        dir.path(),
        &["project", "--system", "system.txt", "--x", "x.csv", "--y0", "y0.csv", "--out", "proj.csv"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = data_rows(&dir.path().join("proj.csv"));
    let want = [1.5, 1.0, 1.9];
    assert_eq!(rows.len(), 3);
    for (row, w) in rows.iter().zip(want) {
        let cols: Vec<&str> = row.split(',').collect();
        let y: f64 = cols[0].parse().unwrap();
        assert!((y - w).abs() <= 1e-8, "{row}");
        assert_eq!(cols[3], "true");
    }
    // column count must match the system
    fs::write(dir.path().join("bad.csv"), "a,b\n1,2\n").unwrap();
    let o = run(dir.path(), &["project", "--system", "system.txt", "--x", "bad.csv", "--y0", "y0.csv"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn bench_list_and_unknown_names() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["bench-list"]);
    assert!(o.status.success());
    for n in ["example1", "example2", "example3", "distill-full", "distill-affine"] {
        assert!(stdout(&o).contains(n));
    }
    let o = run(dir.path(), &["train", "example9", "mlp"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("registered: example1, example2, example3, distill-full, distill-affine"));
    let o = run(dir.path(), &["reproduce", "t9"]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(dir.path(), &["train", "example1", "lasso"]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(dir.path(), &["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_writes_a_full_learning_curve() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["train", "example1", "mlp", "--out", "run"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let curve = dir.path().join("run/example1_mlp_curve.csv");
    assert_eq!(data_rows(&curve).len(), 1200);
    let text = fs::read_to_string(&curve).unwrap();
    assert!(text.starts_with("# nrmse"));
    assert!(dir.path().join("run/example1_data.csv").exists());
    assert!(dir.path().join("run/example1_mlp_metrics.csv").exists());
    let manifest = fs::read_to_string(dir.path().join("run/manifest.txt")).unwrap();
    assert!(manifest.contains("example1_mlp_curve.csv"));
    assert!(manifest.contains("[run.timing_s]"));
}

#[test]
fn hardnet_and_pinn_runs_from_a_config() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("short.toml"), "[net]\nepochs = 3\nlr = 1e-3\n").unwrap();
    let o = run(dir.path(), &["train", "example1", "hardnet", "--config", "short.toml", "--out", "h"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(data_rows(&dir.path().join("h/example1_kkt-hardnet_curve.csv")).len(), 3);
    let rows = data_rows(&dir.path().join("h/example1_kkt-hardnet_metrics.csv"));
    let val: Vec<&str> = rows[1].split(',').collect();
    assert!(val[5].parse::<f64>().unwrap() <= 1e-6, "{}", rows[1]);
    let o = run(
        dir.path(),
        &["train", "example1", "pinn", "--omega", "100", "--config", "short.toml", "--out", "p"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("p/example1_pinn_curve.csv").exists());
}

#[test]
fn rerunning_from_a_manifest_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), "[net]\nepochs = 5\nlr = 1e-3\nbatch_size = 100\n").unwrap();
    let args = |out: &'static str, cfg: &'static str| {
        vec!["--threads", "1", "--seed", "7", "train", "example2", "hardnet", "--config", cfg, "--out", out]
    };
    assert!(run(dir.path(), &args("a", "c.toml")).status.success());
    let o = run(dir.path(), &args("b", "a/manifest.txt"));
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["example2_kkt-hardnet_curve.csv", "example2_kkt-hardnet_metrics.csv", "example2_data.csv"] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        let b = fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
    let manifest = fs::read_to_string(dir.path().join("b/manifest.txt")).unwrap();
    assert!(manifest.contains("seed = 7"));
}

#[test]
fn config_errors_and_empty_config() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("empty.toml"), "").unwrap();
    fs::write(dir.path().join("bad.toml"), "[net]\nepoch = 3\n").unwrap();
    fs::write(dir.path().join("bad_step.toml"), "[solver]\nstep = \"newton\"\n").unwrap();
    let o = run(dir.path(), &["compile", constraints("example2.txt").to_str().unwrap(), "--config", "empty.toml"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for cfg in ["bad.toml", "bad_step.toml"] {
        let o = run(dir.path(), &["bench-list", "--config", cfg]);
        assert_eq!(o.status.code(), Some(1), "{cfg}");
    }
}

#[test]
fn divergence_exits_with_partial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("wild.toml"), "[net]\nepochs = 5\nlr = 1.7976931348623157e308\n").unwrap();
    let o = run(dir.path(), &["train", "example1", "mlp", "--config", "wild.toml", "--out", "d"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("diverged"));
    assert!(dir.path().join("d/example1_mlp_curve.csv").exists());
    assert!(dir.path().join("d/manifest.txt").exists());
}

#[test]
fn reproduce_writes_the_comparison() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), "[net]\nepochs = 2\nlr = 1e-3\n").unwrap();
    let o = run(dir.path(), &["reproduce", "t2", "--config", "c.toml", "--out", "t2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = data_rows(&dir.path().join("t2/t2_comparison.csv"));
    assert_eq!(rows.len(), 6);
    let hard: Vec<&str> = rows.iter().find(|r| r.starts_with("KKT-Hardnet,val")).unwrap().split(',').collect();
    assert!(hard[4].parse::<f64>().unwrap() <= 1e-6);
    for m in ["mlp", "pinn", "kkt-hardnet"] {
        assert!(dir.path().join(format!("t2/example2_{m}_curve.csv")).exists());
    }
    let o = run(dir.path(), &["reproduce", "t4", "--config", "c.toml", "--out", "t4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("t4/t4_comparison.csv")).unwrap();
    assert!(text.lines().skip(1).all(|l| l.contains("paper (Aspen data)")));
}
