use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tomolab::analysis::{beta_opt, dark_cuts};
use tomolab::tomogram::Tomogram;

fn tomolab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tomolab"))
        .args(args)
        .current_dir(dir)
        .env_remove("TOMOLAB_THREADS")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_tomogram(path: &Path) -> Tomogram {
    Tomogram::read_csv(fs::File::open(path).unwrap()).unwrap()
}

fn json_file(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn fock_tomogram_columns_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let o = tomolab(&["tomogram", "--state", "fock:n=5", "--n-theta", "64", "-o", "t.csv"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let t = read_tomogram(&dir.path().join("t.csv"));
    assert_eq!(t.slices().len(), 64);
    let first = t.slices()[0].pdf();
    for s in t.slices() {
        for (a, b) in s.pdf().iter().zip(first) {
            assert!((a - b).abs() <= 1e-14 * b.max(1e-300) + 1e-300, "{a} vs {b}");
        }
    }
    let run = json_file(&dir.path().join("t.csv.run.json"));
    assert_eq!(run["config"]["state"], "fock:n=5");
    assert_eq!(run["config"]["n_theta"], 64);
    assert_eq!(run["config"]["epsilon"], 1e-12);
    assert!(run["config"]["grid"]["n_points"].as_u64().unwrap() >= 4001);
}

#[test]
fn two_photon_added_state_has_two_dark_cuts() {
    let dir = tempfile::tempdir().unwrap();
    let o = tomolab(&["tomogram", "--state", "pacs:alpha=0.7,m=2", "-o", "t.csv"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let t = read_tomogram(&dir.path().join("t.csv"));
    assert_eq!(t.slices()[0].theta(), 0.0);
    assert_eq!(dark_cuts(&t.slices()[0]), 2);
}

#[test]
fn zero_amplitude_coherent_state_is_vacuum() {
    let dir = tempfile::tempdir().unwrap();
    let o = tomolab(&["tomogram", "--state", "cs:alpha=0", "--n-theta", "3", "-o", "v.csv"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let t = read_tomogram(&dir.path().join("v.csv"));
    let xs = t.grid().points();
    for s in t.slices() {
        for (x, p) in xs.iter().zip(s.pdf()) {
            let gauss = (-x * x).exp() / std::f64::consts::PI.sqrt();
            assert!((p - gauss).abs() < 1e-13);
        }
    }
}

#[test]
fn csv_round_trip_reproduces_pdfs_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let o = tomolab(
        &["tomogram", "--state", "pasvs:r=0.4,phi=0.3,m=1", "--n-theta", "5", "-o", "a.csv"],
        dir.path(),
    );
    assert!(o.status.success());
    let t = read_tomogram(&dir.path().join("a.csv"));
    let mut rewritten = Vec::new();
    t.write_csv(&mut rewritten).unwrap();
    assert_eq!(rewritten, fs::read(dir.path().join("a.csv")).unwrap());
}

#[test]
fn tomogram_json_embeds_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = tomolab(
        &["tomogram", "--state", "svs:r=0.3", "--n-theta", "2", "--format", "json", "-o", "t.json"],
        dir.path(),
    );
    assert!(o.status.success());
    let doc = json_file(&dir.path().join("t.json"));
    assert_eq!(doc["config"]["state"], "svs:r=0.3,phi=0");
    assert_eq!(doc["tomogram"]["slices"].as_array().unwrap().len(), 2);
}

#[test]
fn output_is_independent_of_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let run = |threads: &str, out: &str| {
        let o = Command::new(env!("CARGO_BIN_EXE_tomolab"))
            .args(["markers", "--state", "pacs:alpha=1.1,m=2", "--state-b", "cs:alpha=1.7", "-o", out])
            .current_dir(dir.path())
            .env("TOMOLAB_THREADS", threads)
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", stderr(&o));
        fs::read(dir.path().join(out)).unwrap()
    };
    let one = run("1", "one.json");
    let four = run("4", "four.json");
    let strip = |b: Vec<u8>| {
        let mut v: Value = serde_json::from_slice(&b).unwrap();
        v["config"]["output"] = Value::Null;
        v
    };
    assert_eq!(strip(one), strip(four));
}

#[test]
fn bad_thread_count_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_tomolab"))
        .args(["tomogram", "--state", "fock:n=0"])
        .current_dir(dir.path())
        .env("TOMOLAB_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn vacuum_versus_one_photon_markers() {
    let dir = tempfile::tempdir().unwrap();
    let o = tomolab(
        &["markers", "--state", "fock:n=0", "--state-b", "fock:n=1", "--marker", "w1", "--theta", "0"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let doc: Value = serde_json::from_slice(&o.stdout).unwrap();
    let rec = &doc["records"][0];
    assert_eq!(rec["kind"], "W1");
    assert_eq!(rec["stateA"], "fock:n=0");
    assert!((rec["value"].as_f64().unwrap() - 0.564190).abs() < 1e-5);
}

#[test]
fn identical_states_give_zero_markers() {
    let dir = tempfile::tempdir().unwrap();
    let o = tomolab(
        &["markers", "--state", "cat:alpha=1.2", "--state-b", "evencat:alpha=1.2", "--format", "csv"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("kind,theta,n_slices,value,stateA,stateB"));
    let rows: Vec<_> = lines.collect();
    assert_eq!(rows.len(), 3);
    for row in rows {
        let cols: Vec<_> = row.split(',').collect();
        assert_eq!(cols[1], "avg");
        assert_eq!(cols[2], "5");
        assert!(cols[3].parse::<f64>().unwrap().abs() < 1e-9, "{row}");
    }
}

#[test]
fn photon_added_state_close_to_optimal_coherent_state() {
    let dir = tempfile::tempdir().unwrap();
    let beta = format!("cs:alpha={}", beta_opt(2.0, 1));
    let o = tomolab(&["markers", "--state", &beta, "--state-b", "pacs:alpha=2,m=1"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let doc: Value = serde_json::from_slice(&o.stdout).unwrap();
    for rec in doc["records"].as_array().unwrap() {
        let v = rec["value"].as_f64().unwrap();
        assert!(v.is_finite() && v > 0.0 && v < 0.2, "{rec}");
        assert_eq!(rec["theta"], "avg");
    }
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("run.json"),
        r#"{"command":"markers","state":"fock:n=0","state_b":"fock:n=2","marker":"db","theta":0.0}"#,
    )
    .unwrap();
    let o = tomolab(&["markers", "--config", "run.json", "--state-b", "fock:n=1"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let doc: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(doc["config"]["state_b"], "fock:n=1");
    assert_eq!(doc["records"].as_array().unwrap().len(), 1);
    let v = doc["records"][0]["value"].as_f64().unwrap();
    assert!((v - 0.5 * (std::f64::consts::PI / 2.0).ln()).abs() < 1e-8);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.json"), r#"{"state":"fock:n=0","colour":"blue"}"#).unwrap();
    let o = tomolab(&["tomogram", "--config", "bad.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("colour"));

    fs::write(dir.path().join("other.json"), r#"{"command":"moments","state":"fock:n=0"}"#).unwrap();
    let o = tomolab(&["tomogram", "--config", "other.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));

    let o = tomolab(&["tomogram"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--state"));

    let o = tomolab(&["tomogram", "--state", "pacs:alpha=0.7,m=2,q=1"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`q`"), "{}", stderr(&o));

    let o = tomolab(&["experiment", "nonsense"], dir.path());
    assert_eq!(o.status.code(), Some(2));

    let o = tomolab(&["moments", "--state", "fock:n=1", "--max-order", "13"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn narrow_grid_fails_with_advice() {
    let dir = tempfile::tempdir().unwrap();
    let o = tomolab(&["tomogram", "--state", "cs:alpha=3", "--x-max", "3"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("widen the grid"), "{}", stderr(&o));
}

#[test]
fn moments_json() {
    let dir = tempfile::tempdir().unwrap();
    let o = tomolab(&["moments", "--state", "fock:n=3", "--max-order", "2", "-o", "m.json"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let doc = json_file(&dir.path().join("m.json"));
    let entries = doc["moments"]["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 6);
    let n = entries
        .iter()
        .find(|e| e[0] == 1 && e[1] == 1)
        .map(|e| e[2].as_f64().unwrap())
        .unwrap();
    assert!((n - 3.0).abs() < 1e-8);
    assert_eq!(doc["config"]["max_order"], 2);
}

fn run_experiment(name: &str, extra: &[&str]) -> (Output, Value, tempfile::TempDir) {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["experiment", name, "-o", "report.json"];
    args.extend_from_slice(extra);
    let o = tomolab(&args, dir.path());
    let doc = json_file(&dir.path().join("report.json"));
    (o, doc, dir)
}

#[test]
fn fock_distance_experiment_passes() {
    let (o, doc, dir) = run_experiment("fock-distances", &["--n-max", "100"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let exponent = doc["report"]["checks"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["description"].as_str().unwrap().starts_with("W1 grows"))
        .unwrap();
    assert_eq!(exponent["passed"], true);
    assert!(dir.path().join("report.W1.csv").exists());
    assert!(stderr(&o).contains("PASS"));
}

#[test]
fn svs_crossover_experiment_passes() {
    let (o, doc, _dir) = run_experiment("svs-crossover", &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let check = doc["report"]["checks"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["description"].as_str().unwrap().contains("cross near"))
        .unwrap()
        .clone();
    assert_eq!(check["passed"], true);
    assert!((check["measured"].as_f64().unwrap() - 0.24).abs() <= 0.05);
}

#[test]
fn gain_variance_experiment_passes() {
    let (o, doc, _dir) = run_experiment("gain-variance", &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(doc["report"]["name"], "gain-variance");
    assert!(doc["config"]["grid"].is_null());
}

#[test]
fn pacs_marker_experiment_with_gain_reference() {
    let (o, doc, _dir) = run_experiment("pacs-markers", &["--reference", "gain_amplified"]);
    assert_eq!(doc["config"]["reference"], "gain_amplified");
    // trend checks against the gain-amplified reference are informational;
    // the exit code reflects them either way
    let all_passed = doc["report"]["checks"]
        .as_array()
        .unwrap()
        .iter()
        .all(|c| c["passed"] == true);
    assert_eq!(o.status.success(), all_passed);
}

#[test]
fn failing_checks_exit_with_one() {
    // the fitted exponent on a tiny range misses 1/2 by far
    let (o, doc, _dir) = run_experiment("fock-distances", &["--n-max", "8"]);
    let failed = doc["report"]["checks"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["passed"] == false)
        .count();
    if failed > 0 {
        assert_eq!(o.status.code(), Some(1));
        assert!(stderr(&o).contains("FAIL"));
    } else {
        assert!(o.status.success());
    }
}

