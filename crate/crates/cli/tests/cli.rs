use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn lqkd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lqkd")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = lqkd(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn validate_summary() {
    let s = ok(&["validate", "-f", path_str(&data("three_user.json"))]);
    assert_eq!(s.lines().next().unwrap(), "K=2, ℓ=(2,2,1), connected, ghz_rate1=false");
    let s = ok(&["validate", "-f", path_str(&data("four_user_pairs.json"))]);
    assert!(s.starts_with("K=6, ℓ=(3,3,3,3), connected, ghz_rate1=true"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");
    let out = lqkd(&["validate", "-f", path_str(&missing)]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(String::from_utf8_lossy(&out.stderr).lines().count(), 1);

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"users":["a"],"layers":[["a","b"]]}"#).unwrap();
    let out = lqkd(&["validate", "-f", path_str(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(String::from_utf8_lossy(&out.stderr).lines().count(), 1);

    let three = data("three_user.json");
    let out = lqkd(&["simulate", "-f", path_str(&three), "--noise", "1.5"]);
    assert_eq!(out.status.code(), Some(1));
    let out = lqkd(&["rates", "-f", path_str(&three), "--impl", "ghz"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn simulate_is_deterministic_and_reloadable() {
    let three = data("three_user.json");
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        ok(&[
            "simulate", "-f", path_str(&three), "--plan", "tradeoff", "--rounds", "3000", "--seed", "11",
            "--out", path_str(d.path()),
        ]);
    }
    for f in ["transcript.csv", "keyring.json"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert_eq!(x, y, "{f} differs between identical runs");
    }
    let text = std::fs::read_to_string(a.path().join("keyring.json")).unwrap();
    let report = lqkd::protocol::KeyRingReport::from_json(&text).unwrap();
    assert_eq!(report.layers.len(), 2);
    let csv = std::fs::read_to_string(a.path().join("transcript.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "round,user,setting,outcome_symbol");
    assert_eq!(csv.lines().count(), 1 + 3000 * 3);

    let combined = ok(&[
        "report",
        path_str(&a.path().join("keyring.json")),
        path_str(&a.path().join("transcript.csv")),
        path_str(&three),
    ]);
    let v: serde_json::Value = serde_json::from_str(&combined).unwrap();
    let kinds: Vec<&str> = v["inputs"].as_array().unwrap().iter().map(|i| i["kind"].as_str().unwrap()).collect();
    assert_eq!(kinds, ["keyring", "transcript", "structure"]);
}

#[test]
fn build_and_plan_round_trip() {
    let three = data("three_user.json");
    let dir = tempfile::tempdir().unwrap();
    let plan_file = dir.path().join("plan.json");
    ok(&["plan", "-f", path_str(&three), "--select", "1", "--out", path_str(&plan_file)]);
    let plan = lqkd::planner::ConstructionPlan::from_json(&std::fs::read_to_string(&plan_file).unwrap()).unwrap();
    assert_eq!(plan.to_json() + "\n", std::fs::read_to_string(&plan_file).unwrap());

    let dump = ok(&["build", "-f", path_str(&three), "--plan", path_str(&plan_file)]);
    let dump: lqkd::quantum::StateDump = serde_json::from_str(&dump).unwrap();
    let state = lqkd::quantum::SparseState::from_dump(&dump).unwrap();
    let direct = lqkd::quantum::build_from_plan(&plan).unwrap().state;
    assert!(state.approx_eq(&direct, 1e-15));

    let listing = dir.path().join("plans.json");
    ok(&["plan", "-f", path_str(&three), "--out", path_str(&listing)]);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&listing).unwrap()).unwrap();
    assert_eq!(v["plans"].as_array().unwrap().len(), 2);
}

#[test]
fn rates_json_reloads() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("rates.json");
    ok(&[
        "rates", "-f", path_str(&data("three_user.json")), "--impl", "epr",
        "--schedule", path_str(&data("three_user_epr_schedule.json")), "--out", path_str(&out),
    ]);
    let r = lqkd::rates::RateReport::from_json(&std::fs::read_to_string(&out).unwrap()).unwrap();
    // p = 2/3: min(1 - p, 2p) for the triple, 3p - 1 for the pair
    let want = [1.0 / 3.0, 1.0];
    for (got, w) in r.rates().iter().zip(want) {
        assert!((got - w).abs() < 1e-12, "{got} vs {w}");
    }
}

#[test]
fn compare_csv() {
    let s = ok(&["compare", "--grid", "0:1:0.5"]);
    let rows: Vec<&str> = s.lines().collect();
    assert_eq!(rows[0], "p,epr_r123,epr_r12,ghz_r123,ghz_r12,layered_r123,layered_r12");
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[2], "0.5,0.5,0.5,0.5,1,1,1");
    let out = lqkd(&["compare", "--grid", "1:0:0.5"]);
    assert_eq!(out.status.code(), Some(1));
}
