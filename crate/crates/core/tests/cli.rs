use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use penbar::bench::{Manifest, MANIFEST_FILE};
use serde_json::Value;

fn penbar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_penbar")).args(args).env_remove("PB_SEED").env_remove("PB_WORKERS").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// `key=value` fields of a solve summary line.
fn fields(line: &str) -> BTreeMap<String, String> {
    line.split_whitespace().filter_map(|w| w.split_once('=')).map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

#[test]
fn solve_degenerate_raises_penalty() {
    let o = penbar(&["solve", "--family", "degenerate", "--seed", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let f = fields(&stdout(&o));
    assert_eq!(f["status"], "converged");
    assert!(f["alpha"].parse::<f64>().unwrap() > 1.0);
}

#[test]
fn solve_pca_writes_record() {
    let dir = tempfile::tempdir().unwrap();
    let rec = dir.path().join("run.json");
    let o = penbar(&["solve", "--family", "nonneg_pca", "--n", "10", "--seed", "4", "--out", rec.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&fs::read_to_string(&rec).unwrap()).unwrap();
    assert_eq!(v["exit"]["status"], "converged");
    assert!(!v["iterations"].as_array().unwrap().is_empty());
}

#[test]
fn unknown_barrier_lists_choices() {
    let o = penbar(&["solve", "--family", "nonneg_pca", "--barrier", "bogus"]);
    assert_eq!(o.status.code(), Some(1));
    let msg = stderr(&o);
    for id in ["inverse", "inverse_p:<p>", "loglike", "exp"] {
        assert!(msg.contains(id), "{msg}");
    }
}

#[test]
fn budget_exhaustion_exits_with_two() {
    let o = penbar(&["solve", "--family", "degenerate", "--max-outer", "2", "--eps-p", "1e-9", "--eps-d", "1e-9"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(fields(&stdout(&o))["status"], "max_outer");
}

fn without_wall_clock(v: &mut Value) {
    match v {
        Value::Object(map) => {
            map.remove("wall_ms");
            map.values_mut().for_each(without_wall_clock);
        }
        Value::Array(items) => items.iter_mut().for_each(without_wall_clock),
        _ => {}
    }
}

fn load(dir: &Path, file: &str) -> Value {
    let mut v: Value = serde_json::from_str(&fs::read_to_string(dir.join(file)).unwrap()).unwrap();
    without_wall_clock(&mut v);
    v
}

#[test]
fn bench_manifest_and_rerun() {
    let root = tempfile::tempdir().unwrap();
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    for dir in [&a, &b] {
        let o = penbar(&["bench", "--suite", "eq_qp", "--sizes", "1..2", "--seeds", "2", "--out", dir.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(a.join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(manifest.runs.len(), 8);
    let mut seen = BTreeMap::new();
    for e in &manifest.runs {
        assert!(seen.insert((e.instance.clone(), e.variant.clone()), ()).is_none(), "duplicate {e:?}");
    }
    let instances: Vec<&String> = manifest.runs.iter().map(|e| &e.instance).collect();
    for inst in &instances {
        let forms: Vec<&str> = manifest
            .runs
            .iter()
            .filter(|e| &&e.instance == inst)
            .map(|e| if e.variant.contains("-native-") { "native" } else { "split" })
            .collect();
        assert_eq!(forms.len(), 2);
        assert!(forms.contains(&"native") && forms.contains(&"split"));
    }
    assert_eq!(fs::read(a.join(MANIFEST_FILE)).unwrap(), fs::read(b.join(MANIFEST_FILE)).unwrap());
    for e in &manifest.runs {
        let file = e.file.as_deref().expect("record written");
        assert_eq!(load(&a, file), load(&b, file), "{file}");
    }

    let o = penbar(&["profile", "--dir", a.to_str().unwrap(), "--mode", "pairwise"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = stdout(&o);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("tau,fraction,solver"));
    assert_eq!(lines.count(), 2 * 4);

    let o = penbar(&["profile", "--dir", a.to_str().unwrap(), "--mode", "data"]);
    assert_eq!(o.status.code(), Some(1), "two variants need --variant");
    let o = penbar(&["profile", "--dir", a.to_str().unwrap(), "--variant", "loglike-accel-split-e1e-5", "--metric", "outer_iters"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("t,fraction\n"));
    let o = penbar(&["profile", "--dir", a.to_str().unwrap(), "--variant", "nope"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("loglike-accel-native-e1e-5"));
}

#[test]
fn seed_environment_variable_is_honored() {
    let run = |env: Option<&str>, args: &[&str]| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_penbar"));
        c.args(args).env_remove("PB_SEED");
        if let Some(s) = env {
            c.env("PB_SEED", s);
        }
        stdout(&c.output().unwrap())
    };
    let base = ["solve", "--family", "rosenbrock"];
    let from_env = run(Some("5"), &base);
    assert_eq!(from_env, run(None, &["solve", "--family", "rosenbrock", "--seed", "5"]));
    assert!(from_env.starts_with("rosenbrock_ineq_s5 "));
    // An explicit flag wins over the environment.
    assert!(run(Some("5"), &["solve", "--family", "rosenbrock", "--seed", "6"]).starts_with("rosenbrock_ineq_s6 "));
}

#[test]
fn check_passes_on_clean_build() {
    let o = penbar(&["check"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let out = stdout(&o);
    assert!(out.lines().any(|l| l.starts_with("PASS conjugate identity")));
    assert!(!out.lines().any(|l| l.starts_with("FAIL")));
}

#[test]
fn help_lists_subcommands() {
    let o = penbar(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    for cmd in ["solve", "bench", "profile", "check"] {
        assert!(out.contains(cmd));
    }
}
