use lqkd_web::{plans_json, simulate_json, sweep_json};
use serde_json::Value;

const THREE: &str = r#"{"users": ["1", "2", "3"], "layers": [["1", "2", "3"], ["1", "2"]]}"#;

#[test]
fn sweep_rows() {
    let v: Value = serde_json::from_str(&sweep_json(0.0, 1.0, 0.25).unwrap()).unwrap();
    let rows = v.as_array().unwrap();
    assert_eq!(rows.len(), 5);
    assert_eq!(rows[2]["ghz"], serde_json::json!([0.5, 1.0]));
    assert!(sweep_json(0.0, 1.0, 0.0).is_err());
}

#[test]
fn plan_listing() {
    let v: Value = serde_json::from_str(&plans_json(THREE, 2).unwrap()).unwrap();
    let list = v["plans"].as_array().unwrap();
    assert_eq!(list.len(), 2);
    assert_eq!(list[1]["total_dim"], 18);
    assert!(plans_json("{", 2).is_err());
}

#[test]
fn session_report() {
    let out = simulate_json(THREE, "tradeoff", 2000, 3, 1.0).unwrap();
    assert_eq!(out, simulate_json(THREE, "tradeoff", 2000, 3, 1.0).unwrap());
    let v: Value = serde_json::from_str(&out).unwrap();
    let layers = v["report"]["layers"].as_array().unwrap();
    assert_eq!(layers.len(), 2);
    assert!(simulate_json(THREE, "other", 10, 0, 1.0).is_err());
    assert!(simulate_json(THREE, "flat", 10, 0, 2.0).is_err());
}
