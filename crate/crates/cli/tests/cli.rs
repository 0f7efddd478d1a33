//! End-to-end runs of the `qudit-net` binary.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn qn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qudit-net"))
        .args(args)
        .env_remove("QUDIT_NET_OUT")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = qn(args);
    assert_eq!(out.status.code(), Some(0), "{args:?}\nstderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

fn f(v: &Value) -> f64 {
    v.as_f64().unwrap()
}

/// Rows of a CSV file keyed by column name.
fn rows(path: &Path) -> Vec<BTreeMap<String, String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
    r.records()
        .map(|rec| header.iter().cloned().zip(rec.unwrap().iter().map(String::from)).collect())
        .collect()
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

fn num(row: &BTreeMap<String, String>, key: &str) -> f64 {
    row[key].parse().unwrap_or_else(|_| panic!("{key} = {:?}", row[key]))
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn simulate_d4_post_selected_fraction() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    ok(&["simulate", "--dimension", "4", "--attempts", "100000", "--seed", "3", "--out", s(&out)]);
    for file in ["log.jsonl", "config.json", "summary.json", "fractions.csv"] {
        assert!(out.join(file).is_file(), "{file} missing");
    }
    let sm = summary(&out);
    assert_eq!(sm["attempts"], 100_000);
    let frac = f(&sm["success_fraction"]);
    let sigma = (0.75f64 * 0.25 / 1e5).sqrt();
    assert!((frac - 0.75).abs() < 5.0 * sigma, "{frac}");
    let counts = &sm["counts"];
    let total: u64 = ["success", "discard_same_bin", "discard_dark_dark", "erasure_veto", "no_herald"]
        .iter()
        .map(|k| counts[k].as_u64().unwrap())
        .sum();
    assert_eq!(total, 100_000);
    assert_eq!(sm["successes"], sm["bell_heralds"]);
}

#[test]
fn same_seed_same_outputs_for_any_job_count() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("calibrated.toml");
    let mut logs = Vec::new();
    for (i, jobs) in ["1", "3", "1"].iter().enumerate() {
        let out = tmp.path().join(format!("r{i}"));
        ok(&["simulate", "--config", s(&cfg), "--attempts", "2500000", "--jobs", jobs, "--out", s(&out)]);
        logs.push((fs::read(out.join("summary.json")).unwrap(), fs::read(out.join("log.jsonl")).unwrap()));
    }
    assert!(logs.windows(2).all(|w| w[0] == w[1]));
    let other = tmp.path().join("other");
    ok(&["simulate", "--config", s(&cfg), "--attempts", "2500000", "--seed", "8", "--out", s(&other)]);
    assert_ne!(fs::read(other.join("log.jsonl")).unwrap(), logs[0].1);
}

#[test]
fn successes_stop_is_exact() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    ok(&["simulate", "--dimension", "3", "--successes", "250", "--jobs", "2", "--out", s(&out)]);
    let sm = summary(&out);
    assert_eq!(sm["successes"], 250);
    assert_eq!(sm["stop"]["successes"], 250);
}

#[test]
fn config_diagnostics_name_the_problem() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = write_config(tmp.path(), "missing.toml", "[experiment]\nseed = 1\n");
    let out = qn(&["simulate", "--config", s(&missing), "--out", s(&tmp.path().join("x"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("missing field `d`"), "{}", stderr(&out));

    let typo = write_config(tmp.path(), "typo.toml", "[experiment]\nd = 3\n\n[experiment.node_a]\np_detec = 0.1\n");
    let out = qn(&["validate-config", "--config", s(&typo)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("p_detec") && stderr(&out).contains("line 5"), "{}", stderr(&out));

    let bad = write_config(tmp.path(), "bad.toml", "[experiment]\nd = 3\n[experiment.pulse_errors]\nswap_infidelity = 1.5\n");
    let out = qn(&["validate-config", "--config", s(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("swap_infidelity"), "{}", stderr(&out));
}

#[test]
fn sample_configs_validate() {
    for entry in fs::read_dir(configs()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            ok(&["validate-config", "--config", s(&path)]);
        }
    }
}

#[test]
fn refuses_to_overwrite_logs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let args = ["simulate", "--dimension", "2", "--attempts", "1000", "--out", s(&out)];
    ok(&args);
    let before = fs::read(out.join("log.jsonl")).unwrap();
    let again = qn(&[&args[..], &["--seed", "9"]].concat());
    assert_eq!(again.status.code(), Some(1));
    assert!(stderr(&again).contains("--force"));
    assert_eq!(fs::read(out.join("log.jsonl")).unwrap(), before);
    ok(&[&args[..], &["--seed", "9", "--force"]].concat());
    assert_ne!(fs::read(out.join("log.jsonl")).unwrap(), before);
}

#[test]
fn exit_codes() {
    assert_eq!(qn(&[]).status.code(), Some(1));
    assert_eq!(qn(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(qn(&["--help"]).status.code(), Some(0));
    assert_eq!(qn(&["--version"]).status.code(), Some(0));
    assert_eq!(qn(&["simulate", "--attempts", "5", "--successes", "5"]).status.code(), Some(1));
    assert_eq!(qn(&["simulate"]).status.code(), Some(1));
    assert_eq!(qn(&["analyze", "/nonexistent/qudit-net/log"]).status.code(), Some(1));
    assert_eq!(qn(&["validate-config"]).status.code(), Some(1));

    let tmp = tempfile::tempdir().unwrap();
    let truncated = tmp.path().join("t.jsonl");
    fs::write(&truncated, "{\"header\": 1}\n").unwrap();
    let out = qn(&["analyze", s(&truncated), "--out", s(&tmp.path().join("a"))]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn corrupt_records_skip_or_abort() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    ok(&["simulate", "--dimension", "3", "--attempts", "2000", "--out", s(&run)]);
    let log = run.join("log.jsonl");
    let mut lines: Vec<String> = fs::read_to_string(&log).unwrap().lines().map(String::from).collect();
    lines[5] = String::from("{\"record\": {\"attempt_index\": ");
    fs::write(&log, lines.join("\n") + "\n").unwrap();

    let out = ok(&["analyze", s(&run), "--out", s(&tmp.path().join("lenient"))]);
    assert!(stderr(&out).contains("skipped 1 corrupt"), "{}", stderr(&out));
    let report: Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("lenient/analysis.json")).unwrap()).unwrap();
    assert_eq!(report["skipped_lines"], 1);

    let strict = qn(&["analyze", s(&run), "--strict", "--out", s(&tmp.path().join("strict"))]);
    assert_eq!(strict.status.code(), Some(2));
    assert!(stderr(&strict).contains("corrupt record"), "{}", stderr(&strict));
}

#[test]
fn analyze_ideal_d2_fidelities_near_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "ideal2.toml", "[experiment]\nd = 2\nseed = 5\nparity_points = 8\n[run]\nattempts = 40000\n");
    let run = tmp.path().join("run");
    ok(&["simulate", "--config", s(&cfg), "--out", s(&run)]);
    let an = tmp.path().join("an");
    ok(&["analyze", s(&run.join("log.jsonl")), "--out", s(&an)]);
    let states = rows(&an.join("states.csv"));
    assert_eq!(states.len(), 2);
    for r in &states {
        assert_eq!(r["status"], "ok");
        let (fid, sigma) = (num(r, "F"), num(r, "sigma_F"));
        let shots = num(r, "parity_shots");
        assert!(sigma < 2.0 / shots.sqrt(), "{r:?}");
        assert!((fid - 1.0).abs() < 5.0 * sigma.max(1e-9), "{r:?}");
        assert_eq!(num(r, "P"), 1.0);
    }
    let parity = rows(&an.join("parity.csv"));
    assert_eq!(parity.len(), 16);
}

#[test]
fn empty_classes_are_flagged() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    ok(&["simulate", "--dimension", "4", "--attempts", "3", "--out", s(&run)]);
    let an = tmp.path().join("an");
    ok(&["analyze", s(&run), "--out", s(&an)]);
    let states = rows(&an.join("states.csv"));
    assert_eq!(states.len(), 12);
    let empty: Vec<_> = states.iter().filter(|r| r["status"] == "empty").collect();
    assert!(empty.len() >= 9);
    assert!(empty.iter().all(|r| r["P"].is_empty() && r["F"].is_empty()));
}

fn mean_contrast(states: &[BTreeMap<String, String>], filter: impl Fn(&BTreeMap<String, String>) -> bool) -> f64 {
    let cs: Vec<f64> = states.iter().filter(|r| filter(r)).map(|r| num(r, "C")).collect();
    cs.iter().sum::<f64>() / cs.len() as f64
}

#[test]
fn feed_forward_improves_contrast() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    ok(&["simulate", "--config", s(&configs().join("drift.toml")), "--out", s(&run)]);
    let raw = tmp.path().join("raw");
    let ff = tmp.path().join("ff");
    ok(&["analyze", s(&run), "--out", s(&raw)]);
    ok(&["analyze", s(&run), "--feed-forward", "--out", s(&ff)]);
    let (raw, ff_dir) = (rows(&raw.join("states.csv")), ff.clone());
    let ff = rows(&ff.join("states.csv"));
    let all = |_: &BTreeMap<String, String>| true;
    assert!(mean_contrast(&ff, all) > mean_contrast(&raw, all) + 0.1);
    let sensitive = |r: &BTreeMap<String, String>| r["n"] == "1" && r["m"] == "2";
    assert!(mean_contrast(&raw, sensitive) < 0.5);
    assert!(mean_contrast(&ff, sensitive) > 0.95);

    let drift = rows(&ff_dir.join("drift.csv"));
    assert!(drift.len() > 100);
    let mut err2 = 0.0;
    let mut n = 0.0;
    for w in drift.iter().filter(|w| !w["delta_b_mg"].is_empty()) {
        err2 += (num(w, "delta_b_mg") - num(w, "true_delta_b_mg")).powi(2);
        n += 1.0;
    }
    assert!((err2 / n).sqrt() < 0.1, "rms field error {}", (err2 / n).sqrt());
}

#[test]
fn rate_reproduces_measured_entanglement_probabilities() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("rate");
    let stdout = ok(&["rate", "--config", s(&configs().join("rate_measured.toml")), "--out", s(&out)]).stdout;
    let text = String::from_utf8(stdout).unwrap();
    assert!(text.contains("p_A") && text.contains("optimal d"));
    let table = rows(&out.join("rate.csv"));
    let p_ent: Vec<f64> = table.iter().map(|r| num(r, "p_ent")).collect();
    for (got, want) in p_ent.iter().zip([1.17e-5, 2.04e-5, 2.89e-5]) {
        assert!((got - want).abs() < 0.005e-5, "{got} vs {want}");
    }
    assert_eq!(table.iter().filter(|r| r["optimal"] == "true").count(), 1);
}

#[test]
fn rate_defaults_use_budget_products() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("rate");
    ok(&["rate", "--out", s(&out)]);
    let table = rows(&out.join("rate.csv"));
    assert_eq!(table.len(), 7);
    for r in &table {
        let d = num(r, "d");
        assert!((num(r, "success_fraction") - (1.0 - 1.0 / d)).abs() < 1e-12);
        assert!((num(r, "p_a") / 0.0047 - 1.0).abs() < 0.02);
        assert!((num(r, "p_b") / 0.0069 - 1.0).abs() < 0.02);
        let expected = num(r, "success_fraction") * num(r, "p_a") * num(r, "p_b") / (num(r, "period_us") * 1e-6);
        assert!((num(r, "rate_per_s") / expected - 1.0).abs() < 1e-9);
    }
}

const UNIT_BUDGET: &str = "factors = [{ name = \"all\", value = 1.0 }]";

#[test]
fn unit_efficiencies_give_fraction_over_period() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "unit.toml",
        &format!("[rate]\nd_min = 2\nd_max = 6\nbudget_a = {{ {UNIT_BUDGET} }}\nbudget_b = {{ {UNIT_BUDGET} }}\n"),
    );
    let out = tmp.path().join("rate");
    ok(&["rate", "--config", s(&cfg), "--out", s(&out)]);
    for r in rows(&out.join("rate.csv")) {
        let d = num(&r, "d");
        let want = (1.0 - 1.0 / d) / (num(&r, "period_us") * 1e-6);
        assert!((num(&r, "rate_per_s") / want - 1.0).abs() < 1e-12, "{r:?}");
    }
}

#[test]
fn rate_falls_with_bin_time() {
    let tmp = tempfile::tempdir().unwrap();
    let mut previous: Option<Vec<f64>> = None;
    for tau_bin in ["3.0", "5.7", "8.0", "12.0"] {
        let cfg = write_config(
            tmp.path(),
            &format!("tau{tau_bin}.toml"),
            &format!("[rate]\nlinear_only = true\ntau_bin_us = {tau_bin}\n"),
        );
        let out = tmp.path().join(format!("rate{tau_bin}"));
        ok(&["rate", "--config", s(&cfg), "--out", s(&out)]);
        let rates: Vec<f64> = rows(&out.join("rate.csv")).iter().map(|r| num(r, "rate_per_s")).collect();
        if let Some(prev) = &previous {
            assert!(rates.iter().zip(prev).all(|(r, p)| r < p));
        }
        previous = Some(rates);
    }
}

#[test]
fn sweep_dimension_fractions() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sweep");
    ok(&["sweep", "--config", s(&configs().join("sweep_d.toml")), "--out", s(&out)]);
    let table = rows(&out.join("sweep.csv"));
    assert_eq!(table.len(), 3);
    for (r, want) in table.iter().zip([0.5, 2.0 / 3.0, 0.75]) {
        let n = num(r, "attempts");
        let sigma = (want * (1.0 - want) / n).sqrt();
        assert!((num(r, "fraction") - want).abs() < 5.0 * sigma, "{r:?}");
    }
    for i in 0..3 {
        assert!(out.join(format!("point_{i:03}/log.jsonl")).is_file());
    }
    assert_eq!(rows(&out.join("fractions.csv")).len(), 3);

    // the aggregate analysis over the sweep directory sees every point
    let an = tmp.path().join("an");
    ok(&["analyze", s(&out), "--out", s(&an)]);
    assert_eq!(rows(&an.join("fractions.csv")).len(), 3);
    assert_eq!(rows(&an.join("point_002/log/states.csv")).len(), 12);
}

#[test]
fn sweep_swap_infidelity_degrades_adjacent_classes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sweep");
    ok(&["sweep", "--config", s(&configs().join("sweep_swap.toml")), "--out", s(&out), "--jobs", "2"]);
    let table = rows(&out.join("sweep.csv"));
    let adjacent: Vec<f64> = table.iter().map(|r| num(r, "fidelity_adjacent")).collect();
    assert!((adjacent[0] - 1.0).abs() < 1e-9);
    assert!(adjacent.windows(2).all(|w| w[1] < w[0]), "{adjacent:?}");
    assert!(table.iter().all(|r| (num(r, "fidelity_distant") - 1.0).abs() < 1e-9));
}

#[test]
fn single_point_sweep_matches_simulate() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "one.toml",
        "[experiment]\nd = 3\nparity_points = 4\n[run]\nattempts = 5000\n[sweep]\nparameter = \"seed\"\nvalues = [5]\n",
    );
    let sweep = tmp.path().join("sweep");
    let sim = tmp.path().join("sim");
    ok(&["sweep", "--config", s(&cfg), "--out", s(&sweep)]);
    ok(&["simulate", "--config", s(&cfg), "--seed", "5", "--out", s(&sim)]);
    for file in ["log.jsonl", "summary.json", "config.json"] {
        assert_eq!(fs::read(sweep.join("point_000").join(file)).unwrap(), fs::read(sim.join(file)).unwrap(), "{file}");
    }
}

#[test]
fn sweep_rejects_unknown_parameter() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "bad.toml",
        "[experiment]\nd = 3\n[sweep]\nparameter = \"pulse_errors.swap_fidelity\"\nvalues = [0.1]\n",
    );
    let out = qn(&["sweep", "--config", s(&cfg), "--out", s(&tmp.path().join("x"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("unknown sweep parameter `pulse_errors.swap_fidelity`"), "{}", stderr(&out));
    assert!(!tmp.path().join("x").exists());
}

#[test]
fn output_root_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_qudit-net"))
        .args(["rate", "--dimension", "3"])
        .env("QUDIT_NET_OUT", tmp.path())
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    assert_eq!(rows(&tmp.path().join("rate/rate.csv")).len(), 1);
}

#[test]
fn piecewise_field_file_relative_to_config() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    ok(&["simulate", "--config", s(&configs().join("piecewise.toml")), "--successes", "300", "--out", s(&out)]);
    let echo: Value = serde_json::from_str(&fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(echo["experiment"]["noise"]["field"]["kind"], "piecewise");
    assert_eq!(echo["experiment"]["noise"]["field"]["points"][1][1], 0.4);
}

#[test]
fn csv_headers_are_stable() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", "[experiment]\nd = 2\nparity_points = 4\n[run]\nattempts = 2000\n");
    let run = tmp.path().join("run");
    ok(&["simulate", "--config", s(&cfg), "--out", s(&run)]);
    let an = tmp.path().join("an");
    ok(&["analyze", s(&run), "--out", s(&an)]);
    let rate = tmp.path().join("rate");
    ok(&["rate", "--out", s(&rate)]);
    let expected = [
        (an.join("states.csv"), "state,n,m,sign,P,sigma_P,C,sigma_C,phi0,F,sigma_F,population_shots,parity_shots,status"),
        (an.join("parity.csv"), "state,n,m,sign,delta_phi,even,odd,shots,parity,sigma,fit_contrast,fit_phi0,model"),
        (an.join("drift.csv"), "window_start,window_end,centre,delta_b_mg,sigma_mg,underdetermined,true_delta_b_mg"),
        (an.join("fractions.csv"), "d,attempts,bell_heralds,fraction,sigma,theory"),
        (rate.join("rate.csv"), "d,success_fraction,p_a,p_b,p_ent,period_us,rate_per_s,optimal"),
    ];
    for (path, want) in expected {
        assert_eq!(header(&path), want, "{}", path.display());
    }
}
