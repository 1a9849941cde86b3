use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn wsdo(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wsdo")).current_dir(dir).args(args).env_remove("WSDO_WORKERS").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn small_instance(dir: &Path) {
    fs::write(dir.join("gen.json"), serde_json::to_string(&small_params()).unwrap()).unwrap();
    let o = wsdo(dir, &["gen", "--seed", "5", "--config", "gen.json", "--out", "inst.json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

fn small_params() -> wsdo_core::generate::GenParams {
    wsdo_core::generate::GenParams { num_products: 60, num_orders: 80, ..Default::default() }
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn gen_is_byte_identical_for_a_seed() {
    let d = TempDir::new().unwrap();
    assert_eq!(code(&wsdo(d.path(), &["gen", "--seed", "7", "--out", "a.json"])), 0);
    assert_eq!(code(&wsdo(d.path(), &["gen", "--seed", "7", "--out", "b.json"])), 0);
    assert_eq!(code(&wsdo(d.path(), &["gen", "--seed", "8", "--out", "c.json"])), 0);
    let a = fs::read(d.path().join("a.json")).unwrap();
    assert_eq!(a, fs::read(d.path().join("b.json")).unwrap());
    assert_ne!(a, fs::read(d.path().join("c.json")).unwrap());
}

#[test]
fn gen_reports_capacity_as_infeasible() {
    let d = TempDir::new().unwrap();
    let params = wsdo_core::generate::GenParams { num_products: 10_000, ..Default::default() };
    fs::write(d.path().join("g.json"), serde_json::to_string(&params).unwrap()).unwrap();
    let o = wsdo(d.path(), &["gen", "--config", "g.json", "--out", "x.json"]);
    assert_eq!(code(&o), 2);
    assert!(!d.path().join("x.json").exists());
}

#[test]
fn optimize_with_a_partial_active_set() {
    let d = TempDir::new().unwrap();
    small_instance(d.path());
    let o = wsdo(
        d.path(),
        &["optimize", "--instance", "inst.json", "--active", "routing,slotting,classification", "--out", "run"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rep = read_json(&d.path().join("run/report.json"));
    assert_eq!(rep["status"], "converged");
    assert!(!rep["history"].as_array().unwrap().is_empty());
    let active: Vec<&str> =
        rep["nodes"].as_array().unwrap().iter().filter(|n| n["active"] == true).map(|n| n["id"].as_str().unwrap()).collect();
    assert_eq!(active, ["routing", "slotting", "classification"]);
    let updated = wsdo_core::model::Instance::from_json(&fs::read_to_string(d.path().join("run/instance.json")).unwrap()).unwrap();
    updated.validate().unwrap();
}

#[test]
fn optimize_full_graph_updates_the_layout() {
    let d = TempDir::new().unwrap();
    small_instance(d.path());
    let o = wsdo(d.path(), &["optimize", "--instance", "inst.json", "--out", "run"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rep = read_json(&d.path().join("run/report.json"));
    let widths = rep["links"].as_array().unwrap().iter().find(|l| l["name"] == "aisle_widths").unwrap()["r"].clone();
    let inst = read_json(&d.path().join("run/instance.json"));
    assert_eq!(inst["layout"]["aisle_widths"], widths);
}

#[test]
fn unreachable_frozen_rates_exit_two_and_still_write_the_report() {
    let d = TempDir::new().unwrap();
    small_instance(d.path());
    fs::write(
        d.path().join("run.json"),
        r#"{"active": ["layout"], "max_outer": 4, "frozen": {"pick_frequency": [1e6, 1e6, 1e6, 1e6, 1e6]}}"#,
    )
    .unwrap();
    let o = wsdo(d.path(), &["optimize", "--instance", "inst.json", "--config", "run.json", "--out", "run"]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    let rep = read_json(&d.path().join("run/report.json"));
    assert_eq!(rep["status"], "max-outer");
    assert_eq!(rep["outer_iterations"], 4);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let d = TempDir::new().unwrap();
    small_instance(d.path());
    fs::write(
        d.path().join("run.json"),
        r#"{"instance": "inst.json", "active": ["routing"], "max_outer": 1, "tol_c": 1e-300, "out": "from_config"}"#,
    )
    .unwrap();
    let o = wsdo(d.path(), &["optimize", "--config", "run.json", "--tol", "1e-4", "--max-outer", "5"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rep = read_json(&d.path().join("from_config/report.json"));
    assert_eq!(rep["options"]["max_outer"], 5);
    let bad = wsdo(d.path(), &["optimize", "--config", "run.json", "--active", "storage"]);
    assert_eq!(code(&bad), 1);
}

#[test]
fn unreachable_workers_fall_back_in_process() {
    let d = TempDir::new().unwrap();
    small_instance(d.path());
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    fs::write(d.path().join("workers.json"), format!(r#"[{{"host": "127.0.0.1", "port": {port}}}]"#)).unwrap();
    let o = wsdo(d.path(), &["optimize", "--instance", "inst.json", "--workers", "workers.json", "--active", "routing,slotting", "--out", "run"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rep = read_json(&d.path().join("run/report.json"));
    let log = rep["dispatch_log"].as_array().unwrap();
    assert!(log.iter().any(|e| e["outcome"].as_str().unwrap().contains("fallback")));
}

#[test]
fn plot_draws_one_rect_per_rack_row() {
    let d = TempDir::new().unwrap();
    small_instance(d.path());
    let o = wsdo(d.path(), &["plot", "--instance", "inst.json", "--out", "layout.svg"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(d.path().join("layout.svg")).unwrap();
    let doc = roxmltree::Document::parse(&text).unwrap();
    let count = |tag: &str| doc.descendants().filter(|n| n.has_tag_name(tag)).count();
    assert_eq!(count("rect"), small_params().layout.rows);
    assert_eq!(count("polyline"), 1);
    assert_eq!(count("circle"), 1);
    let points = doc.descendants().find(|n| n.has_tag_name("polyline")).unwrap().attribute("points").unwrap();
    let pts: Vec<&str> = points.split_whitespace().collect();
    assert!(pts.len() >= 2);
    assert_eq!(pts.first(), pts.last(), "routes start and end at the depot");
}

#[test]
fn plot_rejects_an_unknown_order() {
    let d = TempDir::new().unwrap();
    small_instance(d.path());
    assert_eq!(code(&wsdo(d.path(), &["plot", "--instance", "inst.json", "--order", "999999"])), 1);
}

#[test]
fn compare_writes_json_and_csv() {
    let d = TempDir::new().unwrap();
    small_instance(d.path());
    let o = wsdo(d.path(), &["compare", "--instance", "inst.json", "--seed", "5", "--out", "cmp"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let cmp = read_json(&d.path().join("cmp/compare.json"));
    assert!(cmp["optimized_completed"].as_u64().unwrap() >= cmp["baseline_completed"].as_u64().unwrap());
    let mut r = csv::Reader::from_path(d.path().join("cmp/compare.csv")).unwrap();
    let labels: Vec<String> = r.records().map(|rec| rec.unwrap()[0].to_string()).collect();
    assert_eq!(labels, ["baseline", "optimized"]);
}

#[test]
fn evaluate_writes_a_throughput_report() {
    let d = TempDir::new().unwrap();
    small_instance(d.path());
    let o = wsdo(d.path(), &["evaluate", "--instance", "inst.json", "--policy", "baseline", "--out", "ev"]);
    assert_eq!(code(&o), 0);
    let rep = read_json(&d.path().join("ev/throughput.json"));
    assert_eq!(rep["orders_offered"], 80);
    assert_eq!(rep["bundle"]["slotting"], "random");
}

#[test]
fn exit_codes_for_usage_and_io_errors() {
    let d = TempDir::new().unwrap();
    assert_eq!(code(&wsdo(d.path(), &["--help"])), 0);
    assert_eq!(code(&wsdo(d.path(), &["--version"])), 0);
    assert_eq!(code(&wsdo(d.path(), &["frobnicate"])), 1);
    assert_eq!(code(&wsdo(d.path(), &["gen", "--seed", "minus-one"])), 1);
    assert_eq!(code(&wsdo(d.path(), &["evaluate", "--instance", "missing.json"])), 3);
    fs::write(d.path().join("bad.json"), "{not json").unwrap();
    assert_eq!(code(&wsdo(d.path(), &["evaluate", "--instance", "bad.json"])), 1);
    assert_eq!(code(&wsdo(d.path(), &["worker", "--capabilities", "teleport"])), 1);
}

#[test]
fn run_is_callable_in_process() {
    assert_eq!(wsdo_cli::run(["wsdo", "--help"]), wsdo_cli::EXIT_OK);
    assert_eq!(wsdo_cli::run(["wsdo", "optimize", "--active", ""]), wsdo_cli::EXIT_USAGE);
}
