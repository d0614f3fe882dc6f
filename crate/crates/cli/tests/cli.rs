use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn rankflow(args: &[&str], config: &str, out: &Path) -> Output {
    let dir = out.parent().unwrap();
    let cfg = dir.join(format!("{}.toml", out.file_name().unwrap().to_string_lossy()));
    std::fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_rankflow"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn empty_experiment_list() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("empty");
    let o = rankflow(&["all"], "seed = 1\n", &out);
    assert_eq!(o.status.code(), Some(0));
    let s = json(&out.join("summary.json"));
    assert_eq!(s["experiments"].as_array().unwrap().len(), 0);
    assert_eq!(s["pass"], true);
}

#[test]
fn malformed_spacers_report_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = r#"
[[experiment]]
id = "t"
kind = "tower"
tower = { p = [2, 3], family = "explicit", spacers = [[0.0, 0.1], [0.0, 0.2]] }
"#;
    let o = rankflow(&["tower"], cfg, &tmp.path().join("bad"));
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("experiment[0].tower.spacers[1]"), "{err}");

    let o = rankflow(&["tower"], "[[experiment]]\nid = \"t\"\nkind = \"nope\"\n", &tmp.path().join("kind"));
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("experiment"));
}

#[test]
fn tower_csv_for_doubling() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("tower");
    let cfg = "[[experiment]]\nid = \"p22\"\nkind = \"tower\"\ntower = { p = [2, 2], family = \"zero\" }\n";
    let o = rankflow(&["tower"], cfg, &out);
    assert_eq!(o.status.code(), Some(0));
    let csv = std::fs::read_to_string(out.join("p22/tower.csv")).unwrap();
    assert_eq!(csv, "k,h_k,j,sbar,freq\n0,1e0,0,0e0,0e0\n0,1e0,1,0e0,1e0\n1,2e0,0,0e0,0e0\n1,2e0,1,0e0,2e0\n");
    let r = json(&out.join("p22/result.json"));
    assert_eq!(r["metrics"]["final_height"], 4.0);
    assert_eq!(r["module"], "tower");
}

#[test]
fn spectrum_two_paths_agree_and_subcommands_filter() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("spec");
    let cfg = r#"
seed = 5

[[experiment]]
id = "p22"
kind = "spectrum"
stages = [1]
s = 0.5
tower = { p = [2, 2], family = "zero" }
t = { points = "grid", from = -4.0, to = 4.0, count = 33 }

[[experiment]]
id = "kk"
kind = "kk-verify"
ladder = { q = [1000], beta = 0.015625, m = 4.0, tau1 = 0.6, tau2 = 0.9, grid = 40 }
"#;
    let o = rankflow(&["spectrum"], cfg, &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let r = json(&out.join("p22/result.json"));
    assert!(r["metrics"]["max_abs_diff"].as_f64().unwrap() <= 1e-6);
    assert!(!out.join("kk").exists());
    let rows = std::fs::read_to_string(out.join("p22/spectrum.csv")).unwrap();
    assert_eq!(rows.lines().count(), 34);

    let o = rankflow(&["kk-verify"], cfg, &out);
    assert_eq!(o.status.code(), Some(0));
    let r = json(&out.join("kk/result.json"));
    assert_eq!(r["checks"]["q1000.all_within_bound"], true);
    assert!(out.join("kk/kk_q1000.csv").exists());
}

#[test]
fn failures_are_per_experiment_and_digest_tracks_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = r#"
[[experiment]]
id = "ok"
kind = "criteria"
checks = [{ check = "totient", x = 1000 }]

[[experiment]]
id = "ok-copy"
kind = "criteria"
checks = [{ check = "totient", x = 1000 }]

[[experiment]]
id = "red"
kind = "clt"
model = "exponential"
m = 256.0
eps = [1, 2]
p = 1
a = 1.0
b = 2.0
s = 0.5
samples = 2000
max_ks = 0.05
"#;
    let out = tmp.path().join("mixed");
    let o = rankflow(&["all"], cfg, &out);
    assert_eq!(o.status.code(), Some(3));
    let s = json(&out.join("summary.json"));
    let ids: Vec<&str> = s["experiments"].as_array().unwrap().iter().map(|e| e["id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["ok", "ok-copy", "red"]);
    assert_eq!(s["experiments"][0]["pass"], true);
    assert_eq!(s["experiments"][2]["pass"], false);
    // Same inputs under different ids dedupe.
    assert_eq!(s["experiments"][0]["inputs_digest"], s["experiments"][1]["inputs_digest"]);

    let out2 = tmp.path().join("reseeded");
    rankflow(&["all", "--seed", "9"], cfg, &out2);
    let s2 = json(&out2.join("summary.json"));
    assert_ne!(s["experiments"][0]["inputs_digest"], s2["experiments"][0]["inputs_digest"]);
    assert_eq!(s2["seed"], 9);
}
