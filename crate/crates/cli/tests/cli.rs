use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn ntk(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ntk"))
        .args(args)
        .current_dir(dir)
        .env("NTK_THREADS", "1")
        .output()
        .expect("spawn ntk")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = ntk(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

/// Header row and data rows with the `#` provenance lines removed.
fn table(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, rows)
}

fn body(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n")
}

#[test]
fn rates_writes_nine_depths_and_a_fit() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["rates"]);
    let (header, rows) = table(&dir.path().join("ntk-rates.csv"));
    assert_eq!(header, ["L", "residual", "theory_residual"]);
    assert_eq!(rows.len(), 9);
    let fit: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("ntk-rates.fit.json")).unwrap()).unwrap();
    assert_eq!(fit["model"], "power");
    let p = fit["exponent"].as_f64().unwrap();
    assert!((-1.15..=-0.85).contains(&p), "exponent {p}");
}

#[test]
fn ordered_rates_use_the_exponential_law() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["rates", "--phase", "ordered", "--out", "o.csv"]);
    let fit: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("o.fit.json")).unwrap()).unwrap();
    assert_eq!(fit["model"], "exp");
    assert_eq!(fit["unnormalized"], true);
    assert!(fit["r_squared_exp"].as_f64().unwrap() > fit["r_squared_power"].as_f64().unwrap());
}

#[test]
fn ordered_spectrum_concentrates_on_constants_with_depth() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["spectrum", "--phase", "ordered", "--k-max", "16", "--nodes", "64"]);
    let (header, rows) = table(&dir.path().join("ntk-spectrum.csv"));
    assert_eq!(header, ["L", "k", "mu_k", "mu_k_normalized"]);
    assert_eq!(rows.len(), 3 * 17);
    let share = |l: &str| -> f64 {
        rows.iter().find(|r| r[0] == l && r[1] == "0").map(|r| r[3].parse().unwrap()).unwrap()
    };
    assert!(share("300") > share("3"));
    assert!(share("300") > 0.99);
}

#[test]
fn reruns_give_identical_bodies() {
    let dir = TempDir::new().unwrap();
    for out in ["a.csv", "b.csv"] {
        ok(dir.path(), &["empirical", "--widths", "16,32", "--seeds", "3", "--seed", "5", "--out", out]);
    }
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    assert_eq!(body(&a), body(&b));
    let head = fs::read_to_string(&a).unwrap();
    assert!(head.starts_with("# ntk "));
    assert!(head.contains("# seed: 5"));
}

#[test]
fn schema_sidecar_lists_the_columns() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["phase", "--sb-steps", "2", "--sw-steps", "3"]);
    let (header, rows) = table(&dir.path().join("ntk-phase.csv"));
    assert_eq!(rows.len(), 6);
    let schema: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("ntk-phase.schema.json")).unwrap()).unwrap();
    let names: Vec<&str> = schema["columns"].as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
    assert_eq!(names, header);
    assert_eq!(schema["command"], "phase");
}

#[test]
fn flags_override_the_config_file() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("c.toml"), "activation = \"tanh\"\ndepth = 4\n").unwrap();
    ok(dir.path(), &["kernel", "--config", "c.toml"]);
    assert_eq!(table(&dir.path().join("ntk-kernel.csv")).1.len(), 4);
    ok(dir.path(), &["kernel", "--config", "c.toml", "--depth", "2"]);
    assert_eq!(table(&dir.path().join("ntk-kernel.csv")).1.len(), 2);
    assert!(fs::read_to_string(dir.path().join("ntk-kernel.csv")).unwrap().contains("\"activation\":\"tanh\""));
}

#[test]
fn conv_kernel_of_constant_channels_matches_dense() {
    let dir = TempDir::new().unwrap();
    // two channels, M = 5, each constant over space
    let conv_row = |a: f64, b: f64| [[a; 5], [b; 5]].concat().iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
    let names: Vec<String> = (0..10).map(|i| format!("v{i}")).collect();
    fs::write(
        dir.path().join("x.csv"),
        format!("{},label\n{},0\n{},1\n", names.join(","), conv_row(1.0, 0.2), conv_row(-0.5, 0.8)),
    )
    .unwrap();
    fs::write(dir.path().join("y.csv"), "a,b,label\n1,0.2,0\n-0.5,0.8,1\n").unwrap();
    ok(dir.path(), &["kernel", "--arch", "cnn", "--input", "x.csv", "--depth", "5", "--out", "c.csv"]);
    ok(dir.path(), &["kernel", "--input", "y.csv", "--depth", "5", "--out", "d.csv"]);
    let (_, c) = table(&dir.path().join("c.csv"));
    let (_, d) = table(&dir.path().join("d.csv"));
    for (rc, rd) in c.iter().zip(&d) {
        let (kc, kd): (f64, f64) = (rc[5].parse().unwrap(), rd[5].parse().unwrap());
        assert!((kc - kd).abs() < 1e-12 * kd.abs().max(1.0), "{kc} vs {kd}");
    }
}

#[test]
fn train_on_a_csv_dataset() {
    let dir = TempDir::new().unwrap();
    let mut csv = String::from("x0,x1,x2,label\n");
    for i in 0..40 {
        let t = i as f64 * 0.37;
        let (a, b) = (t.cos(), t.sin());
        csv.push_str(&format!("{a},{b},{},{}\n", 0.3 + 0.01 * i as f64, usize::from(a > 0.0)));
    }
    fs::write(dir.path().join("d.csv"), csv).unwrap();
    let out = ok(
        dir.path(),
        &["train", "--input", "d.csv", "--normalize", "unit_sphere", "--time", "infinity", "--predictions", "p.csv"],
    );
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["train_acc"], 1.0);
    assert!(summary["test_acc"].as_f64().is_some());
    let (header, rows) = table(&dir.path().join("p.csv"));
    assert_eq!(header, ["split", "label", "predicted", "f_0", "f_1"]);
    assert_eq!(rows.len(), 40);
    ok(dir.path(), &["train", "--input", "d.csv", "--time", "0.5", "--test-fraction", "0"]);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("ntk-train.json")).unwrap()).unwrap();
    assert!(json["test_acc"].is_null());
}

#[test]
fn exit_codes_by_error_class() {
    let dir = TempDir::new().unwrap();
    assert_eq!(ntk(dir.path(), &["kernel", "--phase", "warm"]).status.code(), Some(2));
    assert_eq!(ntk(dir.path(), &["train", "--time", "-1"]).status.code(), Some(2));
    fs::write(dir.path().join("bad.toml"), "depht = 3\n").unwrap();
    assert_eq!(ntk(dir.path(), &["kernel", "--config", "bad.toml"]).status.code(), Some(2));
    fs::write(dir.path().join("col.csv"), "x0,x1,label\n1,0,0\n2,0,1\n").unwrap();
    let out = ntk(dir.path(), &["train", "--input", "col.csv"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("colinear") && err.contains("config:"), "{err}");
    assert_eq!(ntk(dir.path(), &["kernel", "--input", "missing.csv"]).status.code(), Some(4));
    assert_eq!(ntk(dir.path(), &["kernel", "--out", "no/such/dir/k.csv"]).status.code(), Some(4));
    let out = Command::new(env!("CARGO_BIN_EXE_ntk")).args(["phase"]).env("NTK_THREADS", "zero").current_dir(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
