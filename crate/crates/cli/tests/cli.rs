use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn data(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name).display().to_string()
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_boxflow")).args(args).output().unwrap()
}

fn report(args: &[&str]) -> Value {
    let out = run(args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

#[test]
fn oracle_golden_values() {
    let graph = data("cycle8.txt");
    let ts = report(&["oracle", "--graph", &graph, "--demand", &data("cycle8_transshipment.demand"), "--problem", "transshipment"]);
    assert_eq!(ts["result"]["cost"], 4.0);
    assert_eq!(ts["result"]["cost_exact"], "4");
    let cg = report(&["oracle", "--graph", &graph, "--demand", &data("cycle8_congestion.demand"), "--problem", "congestion"]);
    assert_eq!(cg["result"]["cost_exact"], "3/2");
    assert_eq!(cg["format"], "boxflow-report");
}

#[test]
fn transshipment_golden() {
    let doc = report(&["transshipment", "--graph", &data("cycle8.txt"), "--demand", &data("cycle8_transshipment.demand"), "--eps", "0.1"]);
    let s = &doc["result"]["solve"];
    let cost = s["primal_cost"].as_f64().unwrap();
    assert!((4.0..=4.4).contains(&cost), "cost {cost}");
    assert!(s["dual_value"].as_f64().unwrap() >= 3.6 - 1e-9);
    assert!(s["primal_residual"].as_f64().unwrap() <= 1e-8);
}

#[test]
fn maxflow_golden() {
    let doc = report(&["maxflow", "--graph", &data("cycle8.txt"), "--demand", &data("cycle8_congestion.demand"), "--eps", "0.1"]);
    let s = &doc["result"]["solve"];
    let cost = s["primal_cost"].as_f64().unwrap();
    assert!((1.5..=1.65).contains(&cost), "cost {cost}");
    let dual = s["dual_value"].as_f64().unwrap();
    assert!((1.35 - 1e-9..=1.5 + 1e-9).contains(&dual), "dual {dual}");
    assert_eq!(doc["result"]["approximator"]["kind"], "decomposition_tree");
}

#[test]
fn modes_agree() {
    let base = ["transshipment", "--graph", &data("cycle8.txt"), "--demand", &data("cycle8_transshipment.demand")].map(String::from);
    let args = |mode: &str| {
        let mut v: Vec<String> = base.to_vec();
        v.extend(["--mode".into(), mode.into()]);
        v
    };
    let a = args("centralized");
    let b = args("minor-agg");
    let central = report(&a.iter().map(String::as_str).collect::<Vec<_>>());
    let dist = report(&b.iter().map(String::as_str).collect::<Vec<_>>());
    let fc = floats(&central["result"]["solve"]["flow"]);
    let fd = floats(&dist["result"]["solve"]["flow"]);
    assert!(fc.iter().zip(&fd).all(|(x, y)| (x - y).abs() <= 1e-9));
    assert_eq!(central["result"]["solve"]["rounds"], 0);
    assert!(dist["result"]["solve"]["rounds"].as_u64().unwrap() > 0);
}

#[test]
fn approx_quality_has_no_violations() {
    let doc = report(&["approx-quality", "--graph", &data("cycle8.txt"), "--samples", "40"]);
    let rows = doc["result"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    for r in rows {
        assert_eq!(r["lower_violations"], 0);
        assert!(r["min_ratio"].as_f64().unwrap() >= 1.0 - 1e-9);
        assert!(r["max_ratio"].as_f64().unwrap() <= r["approximator"]["rho"].as_f64().unwrap() + 1e-9);
    }
    let only = report(&["approx-quality", "--graph", &data("cycle8.txt"), "--samples", "5", "--problem", "congestion"]);
    assert_eq!(only["result"].as_array().unwrap().len(), 1);
}

#[test]
fn dist_demo_checks() {
    let doc = report(&["dist-demo", "--graph", &data("cycle8.txt"), "--demand", &data("cycle8_transshipment.demand"), "--trace"]);
    let r = &doc["result"];
    assert_eq!(r["columns_identical"], true);
    let bound = r["round_bound"].as_u64().unwrap();
    for p in r["products"].as_array().unwrap() {
        assert!(p["max_abs_diff"].as_f64().unwrap() <= 1e-9);
        assert!(p["rounds"].as_u64().unwrap() <= bound);
    }
    assert!(r["equivalence"]["max_flow_diff"].as_f64().unwrap() <= 1e-9);
    assert!(!r["trace"].as_array().unwrap().is_empty());
}

#[test]
fn reports_are_byte_identical() {
    let graph = data("cycle8.txt");
    let ts = data("cycle8_transshipment.demand");
    let cg = data("cycle8_congestion.demand");
    let runs: [Vec<&str>; 5] = [
        vec!["transshipment", "--graph", &graph, "--demand", &ts, "--seed", "7"],
        vec!["maxflow", "--graph", &graph, "--demand", &cg, "--seed", "7"],
        vec!["oracle", "--graph", &graph, "--demand", &cg, "--problem", "congestion"],
        vec!["approx-quality", "--graph", &graph, "--samples", "10", "--seed", "7"],
        vec!["dist-demo", "--graph", &graph, "--seed", "7"],
    ];
    for args in runs {
        let a = run(&args);
        let b = run(&args);
        assert!(a.status.success());
        assert_eq!(a.stdout, b.stdout, "{args:?}");
    }
}

#[test]
fn report_file_matches_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.json");
    let path = path.to_str().unwrap();
    let args = ["maxflow", "--graph", &data("cycle8.txt"), "--demand", &data("cycle8_congestion.demand")];
    let stdout = run(&args).stdout;
    let mut with_file = args.to_vec();
    with_file.extend(["--report", path]);
    let out = run(&with_file);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    assert_eq!(std::fs::read(path).unwrap(), stdout);
}

#[test]
fn exit_codes() {
    let graph = data("cycle8.txt");
    let ts = data("cycle8_transshipment.demand");
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["transshipment", "--graph", &graph, "--demand", &ts, "--bogus"]).status.code(), Some(1));
    assert_eq!(run(&["transshipment", "--graph", "/nonexistent/graph.txt", "--demand", &ts]).status.code(), Some(1));
    assert_eq!(run(&["transshipment", "--graph", &graph, "--demand", &ts, "--eps", "0"]).status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.demand");
    std::fs::write(&bad, "0 1\n1 1\n").unwrap();
    let out = run(&["oracle", "--graph", &graph, "--demand", bad.to_str().unwrap(), "--problem", "transshipment"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());

    let broken = dir.path().join("broken.txt");
    std::fs::write(&broken, "A B x\n").unwrap();
    assert_eq!(run(&["oracle", "--graph", broken.to_str().unwrap(), "--demand", &ts, "--problem", "transshipment"]).status.code(), Some(1));
}

#[test]
fn seed_is_recorded() {
    let graph = data("cycle8.txt");
    let ts = data("cycle8_transshipment.demand");
    let a = report(&["transshipment", "--graph", &graph, "--demand", &ts, "--seed", "1"]);
    let b = report(&["transshipment", "--graph", &graph, "--demand", &ts, "--seed", "2"]);
    assert_eq!(a["seed"], 1);
    assert_eq!(b["seed"], 2);
    for doc in [a, b] {
        let cost = doc["result"]["solve"]["primal_cost"].as_f64().unwrap();
        assert!((4.0..=4.4).contains(&cost));
    }
}
