use std::collections::BTreeMap;

use lqkd::keystructure::LayeredKeyStructure;
use lqkd::measurement::{key_extract, LayerOutcome, PreparedState};
use lqkd::planner::{enumerate_plans_with, plan_metrics, ConstructionPlan, PlanNode};
use lqkd::quantum::{build_from_plan, flat_construct, KeyValue};
use lqkd::rates::{epr_schedule_rates, ghz_schedule_rates, layered_rates, partition_schedule};
use proptest::prelude::*;

fn structure_from_masks(n: usize, masks: &[u32]) -> Option<LayeredKeyStructure> {
    let users: Vec<String> = (1..=n).map(|i| i.to_string()).collect();
    let mut layers: Vec<Vec<String>> = Vec::new();
    for &m in masks {
        let l: Vec<String> = (0..n).filter(|b| m >> b & 1 == 1).map(|b| users[b].clone()).collect();
        if l.len() >= 2 && !layers.contains(&l) {
            layers.push(l);
        }
    }
    if layers.is_empty() {
        return None;
    }
    LayeredKeyStructure::new(users, layers).ok()
}

fn arb_structure() -> impl Strategy<Value = LayeredKeyStructure> {
    (2usize..=4)
        .prop_flat_map(|n| (Just(n), prop::collection::vec(0u32..(1 << n), 1..5)))
        .prop_filter_map("needs a layer", |(n, masks)| structure_from_masks(n, &masks))
}

fn plans_of(k: &LayeredKeyStructure) -> Vec<ConstructionPlan> {
    enumerate_plans_with(k, 3, false).unwrap().into_iter().take(12).collect()
}

fn has_superpose_ancestor(plan: &ConstructionPlan, layer: &lqkd::keystructure::Layer) -> bool {
    let (root, _, path) = plan.find(layer).unwrap();
    let mut node = &plan.roots()[root];
    for &c in &path {
        if matches!(node, PlanNode::Superpose { .. }) {
            return true;
        }
        node = &node.children()[c];
    }
    false
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn layered_rate_at_most_one(k in arb_structure()) {
        for plan in plans_of(&k) {
            let m = plan_metrics(&plan);
            for (layer, r) in m.layers.iter().zip(&m.rates) {
                prop_assert!(*r <= 1.0);
                prop_assert_eq!(*r == 1.0, !has_superpose_ancestor(&plan, layer));
            }
            let report = layered_rates(&plan);
            prop_assert!(report.rates().iter().all(|&r| r >= 0.0));
        }
    }

    #[test]
    fn decoders_agree_and_match_rates(k in arb_structure()) {
        for plan in plans_of(&k) {
            let ks = build_from_plan(&plan).unwrap();
            prop_assert!((ks.state.norm_sqr() - 1.0).abs() < 1e-12);
            let m = plan_metrics(&plan);
            prop_assert_eq!(m.support_size as usize, ks.state.support_size());
            let mut reach = vec![0.0; m.layers.len()];
            for (v, a) in ks.state.amplitudes() {
                for (i, (layer, out)) in key_extract(ks.state.layout(), v, &ks.keys).into_iter().enumerate() {
                    prop_assert_eq!(&layer, &m.layers[i]);
                    match out {
                        LayerOutcome::Disagree => prop_assert!(false, "members disagree on {}", layer),
                        LayerOutcome::Agreed(KeyValue::Value(_)) => reach[i] += a.norm_sqr(),
                        LayerOutcome::Agreed(KeyValue::Bottom) => {}
                    }
                }
            }
            for (r, want) in reach.iter().zip(&m.rates) {
                prop_assert!((r - want).abs() < 1e-12);
            }
        }
    }

    /// The joint law of a layer's key and any outsider's full readout
    /// factorizes exactly.
    #[test]
    fn outsiders_learn_nothing(k in arb_structure()) {
        for plan in plans_of(&k) {
            let ks = build_from_plan(&plan).unwrap();
            let lay = ks.state.layout();
            for (li, layer) in k.layers().iter().enumerate() {
                for (u, uid) in lay.users().iter().enumerate() {
                    if layer.contains(uid) {
                        continue;
                    }
                    let mut joint: BTreeMap<(Option<u32>, u32), f64> = BTreeMap::new();
                    for (v, a) in ks.state.amplitudes() {
                        let key = match key_extract(lay, v, &ks.keys)[li].1 {
                            LayerOutcome::Agreed(kv) => kv.value(),
                            LayerOutcome::Disagree => unreachable!(),
                        };
                        *joint.entry((key, v.0[u])).or_default() += a.norm_sqr();
                    }
                    let mut pk: BTreeMap<Option<u32>, f64> = BTreeMap::new();
                    let mut po: BTreeMap<u32, f64> = BTreeMap::new();
                    for (&(x, y), p) in &joint {
                        *pk.entry(x).or_default() += p;
                        *po.entry(y).or_default() += p;
                    }
                    // Only the non-⊥ key values must be hidden; whether a
                    // round is ⊥ may be visible to supersets of the layer.
                    for (&(x, y), p) in &joint {
                        if x.is_none() {
                            continue;
                        }
                        let cond_bottom = joint.get(&(None, y)).copied().unwrap_or(0.0);
                        let reached_y = po[&y] - cond_bottom;
                        let values: usize = pk.keys().filter(|x| x.is_some()).count();
                        prop_assert!((p - reached_y / values as f64).abs() < 1e-12,
                            "layer {} user {}", layer, uid);
                    }
                }
            }
        }
    }

    #[test]
    fn flat_plan_equals_flat_construction(k in arb_structure()) {
        let a = build_from_plan(&ConstructionPlan::flat(&k)).unwrap();
        let b = flat_construct(&k).unwrap();
        prop_assert!(a.state.approx_eq(&b.state, 1e-12));
        prop_assert_eq!(a.keys, b.keys);
        prop_assert!(PreparedState::flat(&k).unwrap().state().approx_eq(&b.state, 1e-12));
    }

    #[test]
    fn partition_schedules_reach_rate_one(k in arb_structure()) {
        if matches!(k.ghz_rate1_feasible(), Ok(true)) {
            let s = partition_schedule(&k).unwrap();
            let r = ghz_schedule_rates(&k, &s).unwrap();
            prop_assert!(r.rates().iter().all(|&x| (x - 1.0).abs() < 1e-12));
        }
        if matches!(k.epr_rate1_feasible(), Ok(true)) {
            let s = partition_schedule(&k).unwrap();
            let r = epr_schedule_rates(&k, &s).unwrap();
            prop_assert!(r.rates().iter().all(|&x| (x - 1.0).abs() < 1e-12));
        }
    }
}
