//! Browser bindings. Each export takes and returns JSON strings so the page
//! needs no generated type glue beyond `wasm-bindgen`.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use lqkd::keystructure::LayeredKeyStructure;
use lqkd::measurement::PreparedState;
use lqkd::planner::{enumerate_plans_with, pareto_front, plan_metrics, ConstructionPlan};
use lqkd::protocol::{run_protocol, ProtocolConfig};
use lqkd::rates::{three_user_sweep, Grid};

fn text(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Three-user rate triple over `p ∈ [start, stop]`, as a JSON array of rows.
pub fn sweep_json(start: f64, stop: f64, step: f64) -> Result<String, String> {
    let grid: Grid = format!("{start}:{stop}:{step}").parse().map_err(text)?;
    let rows = three_user_sweep(&grid).map_err(text)?;
    serde_json::to_string(&rows).map_err(text)
}

/// All plans of a structure with metrics and Pareto membership.
pub fn plans_json(structure: &str, max_arity: usize) -> Result<String, String> {
    let k = LayeredKeyStructure::from_json(structure).map_err(text)?;
    let plans = enumerate_plans_with(&k, max_arity, false).map_err(text)?;
    let metrics: Vec<_> = plans.iter().map(plan_metrics).collect();
    let front = pareto_front(&metrics);
    let rows: Vec<Value> = plans
        .iter()
        .zip(&metrics)
        .enumerate()
        .map(|(i, (p, m))| {
            json!({
                "index": i,
                "plan": p.describe(),
                "pareto": front.contains(&i),
                "total_dim": m.total_dim(),
                "metrics": m,
            })
        })
        .collect();
    Ok(json!({ "plans": rows }).to_string())
}

/// Runs a protocol session on the flat (`"flat"`) or trade-off
/// (`"tradeoff"`) plan and returns the key ring report.
pub fn simulate_json(
    structure: &str,
    plan: &str,
    rounds: usize,
    seed: u64,
    visibility: f64,
) -> Result<String, String> {
    let k = LayeredKeyStructure::from_json(structure).map_err(text)?;
    let plan = match plan {
        "flat" => ConstructionPlan::flat(&k),
        "tradeoff" => ConstructionPlan::greedy_tradeoff(&k, 2).map_err(text)?,
        other => return Err(format!("unknown plan `{other}`")),
    };
    let cfg = ProtocolConfig { rounds, seed, noise_v: visibility, ..ProtocolConfig::default() };
    cfg.validate().map_err(text)?;
    let prep = PreparedState::new(&plan).map_err(text)?;
    let (_, ring) = run_protocol(&prep, &cfg).map_err(text)?;
    Ok(json!({ "plan": plan.describe(), "report": ring.report() }).to_string())
}

#[wasm_bindgen]
pub fn sweep(start: f64, stop: f64, step: f64) -> Result<String, JsError> {
    sweep_json(start, stop, step).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn plans(structure: &str, max_arity: usize) -> Result<String, JsError> {
    plans_json(structure, max_arity).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn simulate(structure: &str, plan: &str, rounds: usize, seed: u64, visibility: f64) -> Result<String, JsError> {
    simulate_json(structure, plan, rounds, seed, visibility).map_err(|e| JsError::new(&e))
}
