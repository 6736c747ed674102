//! End-to-end runs of the `isolator` binary.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn isolator(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_isolator"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stdout)))
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn find_check<'a>(doc: &'a Value, name: &str) -> &'a Value {
    doc["checks"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"] == name)
        .unwrap_or_else(|| panic!("no check {name}"))
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn extract_reports_the_reference_coil() {
    let o = isolator(&["extract", "--json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let doc = json(&o);
    assert_eq!(doc["schema_version"], 1);
    assert_eq!(doc["command"], "extract");
    let l = doc["metrics"]["l_primary"].as_f64().unwrap();
    assert!((l - 1.44e-6).abs() < 0.01e-6, "{l}");
    assert!((doc["metrics"]["coil_area_cm2"].as_f64().unwrap() - 2.4649).abs() < 1e-3);
}

#[test]
fn zero_turns_is_a_config_error_naming_the_field() {
    let o = isolator(&["extract", "--set", "coil.turns=0"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("coil.turns"), "{}", stderr(&o));
}

#[test]
fn stdout_and_file_output_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("x.json");
    let o = isolator(&["extract", "--json", "--out", path_str(&file)]);
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read(&file).unwrap(), o.stdout);
}

#[test]
fn config_file_is_strict_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[coil]\nturnz = 3\n").unwrap();
    let o = isolator(&["extract", "--config", path_str(&bad)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("turnz"));

    let good = dir.path().join("good.toml");
    std::fs::write(&good, "[coil]\nturns = 4\n[board]\nthickness_mm = 0.8\n").unwrap();
    let from_file = json(&isolator(&["extract", "--json", "--config", path_str(&good)]));
    let overridden = json(&isolator(&["extract", "--json", "--config", path_str(&good), "--set", "coil.turns=8"]));
    let defaults = json(&isolator(&["extract", "--json"]));
    assert!(from_file["metrics"]["l_primary"].as_f64() < defaults["metrics"]["l_primary"].as_f64());
    assert_eq!(overridden["metrics"]["l_primary"], defaults["metrics"]["l_primary"]);
    assert_eq!(overridden["metrics"]["breakdown_voltage"], 16000.0);
}

#[test]
fn malformed_set_is_a_usage_error() {
    assert_eq!(code(&isolator(&["extract", "--set", "turns=3"])), 2);
    assert_eq!(code(&isolator(&["extract", "--set", "coil.turns"])), 2);
}

#[test]
fn transmitter_oscillates_in_band() {
    let o = isolator(&["simulate", "--circuit", "tx", "--stimulus", "high", "--json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let f = json(&o)["metrics"]["frequency_hz"].as_f64().unwrap();
    assert!((10e6..=22e6).contains(&f), "{f}");
}

#[test]
fn transmitter_is_silent_at_logic_zero() {
    let o = isolator(&["simulate", "--circuit", "tx", "--stimulus", "low", "--json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(find_check(&json(&o), "no_carrier_v")["pass"], true);
}

#[test]
fn dead_oscillator_fails_its_checks() {
    // the startup kick rings the passive tank briefly, then nothing
    let o = isolator(&["simulate", "--circuit", "tx", "--set", "mosfet.vth_v=20", "--json"]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    let doc = json(&o);
    assert_eq!(find_check(&doc, "carrier_v")["pass"], false);
    assert_eq!(find_check(&doc, "sustained_amplitude")["pass"], false);
}

#[test]
fn unmeasurable_trace_is_a_numeric_failure() {
    let o = isolator(&["simulate", "--circuit", "tx", "--set", "sim.dt_ns=400"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).starts_with("error: "));
}

#[test]
fn conflicting_flags_are_usage_errors() {
    let o = isolator(&["simulate", "--circuit", "isolator", "--stimulus", "high", "--bits", "10"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--bits"));
    assert_eq!(code(&isolator(&["simulate", "--circuit", "halfbridge", "--stimulus", "prbs7"])), 2);
    assert_eq!(code(&isolator(&["eye", "--bit-rate", "0"])), 2);
    assert_eq!(code(&isolator(&["simulate", "--circuit", "tx", "--sweep", "coil.turns=4,,8"])), 2);
}

#[test]
fn isolator_logic_levels() {
    let hi = json(&isolator(&["simulate", "--circuit", "isolator", "--stimulus", "high", "--json"]));
    assert_eq!(hi["pass"], true, "{hi}");
    assert!(hi["metrics"]["dy_max_v"].as_f64().unwrap() < 0.8);
    let lo = json(&isolator(&["simulate", "--circuit", "isolator", "--stimulus", "low", "--json"]));
    assert!(lo["metrics"]["dy_min_v"].as_f64().unwrap() > 4.0);
}

#[test]
fn prbs_link_over_a_thousand_bits() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("trace.csv");
    let o = isolator(&[
        "simulate", "--circuit", "isolator", "--stimulus", "prbs7", "--bits", "1000", "--csv", path_str(&csv), "--json",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = &json(&o)["metrics"];
    assert_eq!(m["bit_errors"], 0);
    assert_eq!(m["bits"], 1000);
    let d = m["prop_delay_s"].as_f64().unwrap();
    assert!((100e-9..=400e-9).contains(&d), "{d}");
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("time_s,"));
    assert!(text.lines().next().unwrap().contains("v(dy)"));
}

#[test]
fn eye_is_open_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let run = |tag: &str| {
        let csv = dir.path().join(format!("{tag}.csv"));
        let o = isolator(&["eye", "--bits", "127", "--seed", "33", "--csv", path_str(&csv), "--json"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        (o.stdout, std::fs::read(&csv).unwrap())
    };
    let (j1, c1) = run("a");
    let (j2, c2) = run("b");
    assert_eq!(j1, j2);
    assert_eq!(c1, c2);
    assert!(String::from_utf8(c1).unwrap().starts_with("phase_s,voltage_v,bit_class\n"));
    let doc: Value = serde_json::from_slice(&j1).unwrap();
    assert!(doc["metrics"]["eye_height_v"].as_f64().unwrap() >= 2.5);
    assert!(doc["metrics"]["eye_width_s"].as_f64().unwrap() >= 0.5e-6);
}

#[test]
fn halfbridge_truth_table_and_square_wave() {
    let truth = json(&isolator(&["simulate", "--circuit", "halfbridge", "--stimulus", "truth", "--json"]));
    assert_eq!(truth["pass"], true, "{truth}");
    assert_eq!(truth["metrics"]["rows"].as_array().unwrap().len(), 4);

    let o = isolator(&["simulate", "--circuit", "halfbridge", "--set", "halfbridge.cycles=2", "--json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = &json(&o)["metrics"];
    assert_eq!(m["lockout_ok"], true);
    let lo = m["dead_time_min_s"].as_f64().unwrap();
    let hi = m["dead_time_max_s"].as_f64().unwrap();
    assert!(lo >= 100e-9 && hi <= 600e-9, "{lo} {hi}");
}

#[test]
fn report_passes_every_row_at_defaults() {
    let o = isolator(&["report", "--json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let doc = json(&o);
    let checks = doc["checks"].as_array().unwrap();
    assert_eq!(checks.len(), 6);
    assert!(checks.iter().all(|c| c["pass"] == true), "{doc}");
    let area = find_check(&doc, "coil_area_cm2");
    assert!((area["value"].as_f64().unwrap() - 2.46).abs() < 0.01);
    assert!(area["note"].as_str().unwrap().contains("coil footprint only"));
    assert!(doc["metrics"]["max_verified_bit_rate_bps"].as_f64().unwrap() >= 1e6);
}

#[test]
fn halving_the_board_halves_breakdown() {
    let full = json(&isolator(&["report", "--json", "--set", "link.verify_rates_mbps=[1.0]"]));
    let half = json(&isolator(&[
        "report", "--json", "--set", "link.verify_rates_mbps=[1.0]", "--set", "board.thickness_mm=0.8",
    ]));
    let v = |d: &Value| find_check(d, "breakdown_voltage_v")["value"].as_f64().unwrap();
    assert!((v(&half) / v(&full) - 0.5).abs() < 1e-12);
    assert_eq!(find_check(&half, "breakdown_voltage_v")["pass"], true);
}

#[test]
fn sweep_runs_keep_input_order_and_match_single_runs() {
    let o = isolator(&["extract", "--json", "--sweep", "coil.turns=8,4,6"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let doc = json(&o);
    assert_eq!(doc["schema_version"], 1);
    assert_eq!(doc["sweep"]["key"], "coil.turns");
    let results = doc["results"].as_array().unwrap();
    assert_eq!(results.len(), 3);
    for (r, turns) in results.iter().zip(["8", "4", "6"]) {
        assert_eq!(r["sweep_value"], turns);
        let single = json(&isolator(&["extract", "--json", "--set", &format!("coil.turns={turns}")]));
        assert_eq!(r["metrics"], single["metrics"]);
    }
}

#[test]
fn sweep_is_identical_without_parallelism() {
    let args = ["simulate", "--circuit", "tx", "--json", "--sweep", "isolator.r_drain_b_ohm=900,1100"];
    let par = isolator(&args);
    let mut seq_args = args.to_vec();
    seq_args.extend(["--set", "sim.parallel=false"]);
    let seq = isolator(&seq_args);
    assert_eq!(code(&par), 0, "{}", stderr(&par));
    assert_eq!(par.stdout, seq.stdout);
}

#[test]
fn optional_drain_resistor_can_be_set_and_cleared() {
    let base = json(&isolator(&["simulate", "--circuit", "tx", "--json"]));
    let sym = json(&isolator(&["simulate", "--circuit", "tx", "--json", "--set", "isolator.r_drain_a_ohm=1000"]));
    let cleared = json(&isolator(&[
        "simulate", "--circuit", "tx", "--json", "--set", "isolator.r_drain_a_ohm=1000", "--set",
        "isolator.r_drain_a_ohm=none",
    ]));
    assert_ne!(base["metrics"], sym["metrics"]);
    assert_eq!(base, cleared);
}
