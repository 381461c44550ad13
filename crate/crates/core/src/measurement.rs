//! Measurements on constructed states.
//!
//! Key-basis rounds sample the computational basis. Test rounds measure a
//! two-outcome observable per (user, layer node): on a GHZ leaf this is
//! `σx` or `σy` on the user's virtual qubit, on a binary superpose node it is
//! the lifted parity `e^{iφ}W + e^{-iφ}W†` where `W` pairs the user's
//! right-branch symbols with their left-branch symbols in alphabet order
//! (`φ = 0` for the x setting, `φ = π/2` for y). Symbols outside a pairing
//! are annihilated by the observable and report a fair coin.
//!
//! A user walks their plan tree from the root: key settings at a superpose
//! node reveal the branch and descend into it, a test setting measures the
//! node's observable and stops.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;

use num_complex::Complex64;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::keystructure::{Layer, LayeredKeyStructure, UserId};
use crate::planner::{ConstructionPlan, PlanNode};
use crate::quantum::{
    build_node, empty_keyed, join_tensor, BasisVector, KeyExtractionMap, KeyValue, KeyedState,
    QuantumError, RegisterLayout, SparseState, Symbol,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeasurementError {
    #[error(transparent)]
    Quantum(#[from] QuantumError),
    #[error("plan is invalid: {0}")]
    Plan(String),
    #[error("layer {0} is not implemented by the plan")]
    UnknownLayer(Layer),
    #[error("layer {0} is not a binary superpose node")]
    NotBinary(Layer),
    #[error("settings do not match the user's virtual qubits: {0}")]
    BadSetting(String),
    #[error("state was not produced by the flat construction")]
    NotFlat,
}

/// Per-node basis choice of one user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeSetting {
    Z,
    X,
    Y,
}

impl NodeSetting {
    pub fn as_char(self) -> char {
        match self {
            NodeSetting::Z => 'z',
            NodeSetting::X => 'x',
            NodeSetting::Y => 'y',
        }
    }

    pub fn from_char(c: char) -> Option<Self> {
        match c {
            'z' => Some(NodeSetting::Z),
            'x' => Some(NodeSetting::X),
            'y' => Some(NodeSetting::Y),
            _ => None,
        }
    }
}

/// Settings per user (structure user order), one entry per layer the user
/// belongs to (canonical layer order).
pub type Settings = Vec<Vec<NodeSetting>>;

/// What one user learned about one of their layers in a round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Observation {
    /// Key-basis result at the node.
    Value(u32),
    /// ±1 result of the node's test observable.
    Parity(i8),
    /// The walk never reached the node (another branch, or stopped above).
    Missed,
}

/// Result of decoding one layer from a joint outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayerOutcome {
    Agreed(KeyValue),
    /// Members decoded different symbols; counted as an error, not a failure.
    Disagree,
}

/// Draws computational-basis outcomes with probability `|amplitude|²`.
#[derive(Debug, Clone)]
pub struct ComputationalSampler {
    support: Vec<BasisVector>,
    weights: WeightedIndex<f64>,
}

impl ComputationalSampler {
    pub fn new(state: &SparseState) -> Self {
        let support: Vec<BasisVector> = state.amplitudes().keys().cloned().collect();
        let weights = WeightedIndex::new(state.amplitudes().values().map(|a| a.norm_sqr()))
            .expect("normalized state has positive weight");
        ComputationalSampler { support, weights }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> &BasisVector {
        &self.support[self.weights.sample(rng)]
    }
}

pub fn sample_computational<R: Rng + ?Sized>(state: &SparseState, rng: &mut R) -> BasisVector {
    ComputationalSampler::new(state).sample(rng).clone()
}

/// Decodes every layer of `map` from a computational outcome.
pub fn key_extract(
    layout: &RegisterLayout,
    outcome: &BasisVector,
    map: &KeyExtractionMap,
) -> Vec<(Layer, LayerOutcome)> {
    map.layers
        .iter()
        .map(|d| {
            let mut seen: Option<KeyValue> = None;
            let mut agree = true;
            for (u, table) in &d.tables {
                let pos = layout.position(u).expect("decoder user in layout");
                let v = table[outcome.0[pos] as usize];
                match seen {
                    None => seen = Some(v),
                    Some(s) if s != v => agree = false,
                    _ => {}
                }
            }
            let res = if agree {
                LayerOutcome::Agreed(seen.unwrap_or(KeyValue::Bottom))
            } else {
                LayerOutcome::Disagree
            };
            (d.layer.clone(), res)
        })
        .collect()
}

/// Column-sparse local basis change: `columns[input] = [(output, coeff)]`.
type LocalOp = Vec<Vec<(u32, Complex64)>>;

/// Samples the state after applying `ops[k]` to user `k` (identity when
/// `None`), one user at a time. The conditional weight of an outcome prefix
/// only needs the amplitudes grouped by the not-yet-measured suffix, because
/// the remaining local unitaries preserve the norm.
pub fn sample_rotated<R: Rng + ?Sized>(
    state: &SparseState,
    ops: &[Option<&LocalOp>],
    rng: &mut R,
) -> BasisVector {
    let n = state.users().len();
    assert_eq!(ops.len(), n);
    let mut entries: Vec<(&[u32], Complex64)> = state
        .amplitudes()
        .iter()
        .map(|(v, a)| (v.0.as_slice(), *a))
        .collect();
    let mut outcome = Vec::with_capacity(n);
    for op in ops {
        let mut groups: BTreeMap<(u32, &[u32]), Complex64> = BTreeMap::new();
        for &(v, a) in &entries {
            let rest = &v[1..];
            match op {
                None => *groups.entry((v[0], rest)).or_default() += a,
                Some(cols) => {
                    for &(o, c) in &cols[v[0] as usize] {
                        *groups.entry((o, rest)).or_default() += a * c;
                    }
                }
            }
        }
        let mut probs: BTreeMap<u32, f64> = BTreeMap::new();
        for (&(o, _), amp) in &groups {
            let p = amp.norm_sqr();
            if p > 1e-24 {
                *probs.entry(o).or_default() += p;
            }
        }
        let total: f64 = probs.values().sum();
        let mut x = rng.random::<f64>() * total;
        let mut pick = *probs.keys().next_back().expect("nonempty outcome set");
        for (&o, &p) in &probs {
            if x < p {
                pick = o;
                break;
            }
            x -= p;
        }
        outcome.push(pick);
        entries = groups
            .into_iter()
            .filter(|((o, _), a)| *o == pick && a.norm_sqr() > 1e-24)
            .map(|((_, rest), a)| (rest, a))
            .collect();
    }
    BasisVector(outcome)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Visit {
    Key(u32),
    /// Stopped at a test node; `side` is the block (branch or leaf digit).
    Test { side: u32 },
}

/// Pairing of one user's register for the test observable of one node.
#[derive(Debug, Clone, Default)]
struct Pairing {
    /// `(left, right, φ)` index pairs.
    pairs: Vec<(u32, u32, f64)>,
    unpaired: Vec<u32>,
}

/// How a user's factor register responds to a given settings assignment.
#[derive(Debug, Clone)]
struct LocalResponse {
    op: Option<LocalOp>,
    /// Per register index: the `(layer, sign)` it reports for a tested node,
    /// with `sign == 0` meaning a coin decides.
    test_sign: Vec<Option<(usize, i8)>>,
}

#[derive(Debug, Clone)]
struct Factor {
    node: Option<PlanNode>,
    keyed: KeyedState,
    sampler: ComputationalSampler,
}

#[derive(Debug, Clone)]
struct LayerHome {
    factor: usize,
    ancestors: Vec<usize>,
    reach_prob: f64,
    arity: u32,
    leaf: bool,
}

/// A plan's state ready for measurement: the joint state plus one factor per
/// plan tree (the joint state is their tensor product).
#[derive(Debug, Clone)]
pub struct PreparedState {
    plan: ConstructionPlan,
    structure: LayeredKeyStructure,
    user_layers: Vec<Vec<usize>>,
    factors: Vec<Factor>,
    full: KeyedState,
    full_sampler: ComputationalSampler,
    /// Per user: `(factor, position in factor layout)` in tensor order.
    user_slots: Vec<Vec<(usize, usize)>>,
    homes: Vec<LayerHome>,
}

fn tree_homes(
    node: &PlanNode,
    factor: usize,
    ancestors: &mut Vec<usize>,
    prob: f64,
    k: &LayeredKeyStructure,
    out: &mut [Option<LayerHome>],
) {
    let Some(layer) = node.layer() else { return };
    let idx = k.layer_index(layer).expect("plan layer in structure");
    let (arity, leaf) = match node {
        PlanNode::Superpose { children, .. } => (children.len() as u32, false),
        _ => (2, true),
    };
    out[idx] = Some(LayerHome {
        factor,
        ancestors: ancestors.clone(),
        reach_prob: prob,
        arity,
        leaf,
    });
    ancestors.push(idx);
    for c in node.children() {
        tree_homes(c, factor, ancestors, prob / node.arity() as f64, k, out);
    }
    ancestors.pop();
}

impl PreparedState {
    pub fn new(plan: &ConstructionPlan) -> Result<Self, MeasurementError> {
        let structure = plan
            .structure()
            .map_err(|e| MeasurementError::Plan(e.to_string()))?;
        let mut factors = Vec::new();
        for r in plan.roots() {
            let keyed = build_node(r)?;
            factors.push(Factor {
                sampler: ComputationalSampler::new(&keyed.state),
                node: Some(r.clone()),
                keyed,
            });
        }
        let covered: std::collections::BTreeSet<&UserId> =
            plan.roots().iter().flat_map(|r| r.users().iter()).collect();
        let missing: Vec<UserId> = plan
            .users()
            .iter()
            .filter(|u| !covered.contains(u))
            .cloned()
            .collect();
        if !missing.is_empty() {
            let keyed = empty_keyed(&missing)?;
            factors.push(Factor {
                sampler: ComputationalSampler::new(&keyed.state),
                node: None,
                keyed,
            });
        }
        let mut full = factors[0].keyed.clone();
        for f in &factors[1..] {
            full = join_tensor(&full, &f.keyed)?;
        }
        let user_slots = structure
            .users()
            .iter()
            .map(|u| {
                factors
                    .iter()
                    .enumerate()
                    .filter_map(|(i, f)| f.keyed.state.layout().position(u).map(|p| (i, p)))
                    .collect()
            })
            .collect();
        let mut homes = vec![None; structure.num_layers()];
        for (i, r) in plan.roots().iter().enumerate() {
            tree_homes(r, i, &mut Vec::new(), 1.0, &structure, &mut homes);
        }
        let user_layers = structure.users().iter().map(|u| structure.layers_of(u)).collect();
        Ok(PreparedState {
            plan: plan.clone(),
            full_sampler: ComputationalSampler::new(&full.state),
            homes: homes.into_iter().map(|h| h.expect("every layer placed")).collect(),
            structure,
            user_layers,
            factors,
            full,
            user_slots,
        })
    }

    /// The flat construction of `k` (every layer a GHZ leaf).
    pub fn flat(k: &LayeredKeyStructure) -> Result<Self, MeasurementError> {
        Self::new(&ConstructionPlan::flat(k))
    }

    pub fn plan(&self) -> &ConstructionPlan {
        &self.plan
    }

    pub fn structure(&self) -> &LayeredKeyStructure {
        &self.structure
    }

    pub fn state(&self) -> &SparseState {
        &self.full.state
    }

    pub fn keyed(&self) -> &KeyedState {
        &self.full
    }

    pub fn is_flat(&self) -> bool {
        self.plan
            .roots()
            .iter()
            .all(|r| matches!(r, PlanNode::Leaf { .. }))
    }

    /// Layers of user `u` (indices into the structure), canonical order.
    pub fn user_layers(&self, u: usize) -> &[usize] {
        &self.user_layers[u]
    }

    /// Whether the node implementing layer `i` has a test observable.
    pub fn testable(&self, i: usize) -> bool {
        let h = &self.homes[i];
        h.leaf || h.arity == 2
    }

    /// Proper ancestors of layer `i` in its plan tree, root first.
    pub fn ancestors(&self, i: usize) -> &[usize] {
        &self.homes[i].ancestors
    }

    /// Probability that a key round reaches layer `i`'s node.
    pub fn reach_probability(&self, i: usize) -> f64 {
        self.homes[i].reach_prob
    }

    pub fn arity(&self, i: usize) -> u32 {
        self.homes[i].arity
    }

    /// Number of plan factors holding a register of user `u`.
    pub fn user_factor_count(&self, u: usize) -> usize {
        self.user_slots[u].len()
    }

    pub fn all_key_settings(&self) -> Settings {
        self.user_layers
            .iter()
            .map(|ls| vec![NodeSetting::Z; ls.len()])
            .collect()
    }

    pub fn check_settings(&self, settings: &Settings) -> Result<(), MeasurementError> {
        if settings.len() != self.user_layers.len() {
            return Err(MeasurementError::BadSetting("one entry per user expected".into()));
        }
        for (u, (s, ls)) in settings.iter().zip(&self.user_layers).enumerate() {
            if s.len() != ls.len() {
                return Err(MeasurementError::BadSetting(format!(
                    "user `{}` has {} layers, got {} settings",
                    self.structure.users()[u],
                    ls.len(),
                    s.len()
                )));
            }
            for (&l, &st) in ls.iter().zip(s) {
                if st != NodeSetting::Z && !self.testable(l) {
                    return Err(MeasurementError::BadSetting(format!(
                        "layer {} has no test observable",
                        self.structure.layers()[l]
                    )));
                }
            }
        }
        Ok(())
    }

    fn setting_of(&self, settings: &Settings, u: usize, layer: usize) -> NodeSetting {
        let pos = self.user_layers[u]
            .iter()
            .position(|&l| l == layer)
            .expect("user is a member");
        settings[u][pos]
    }

    fn walk(
        &self,
        node: &PlanNode,
        sym: &Symbol,
        u: usize,
        settings: &Settings,
        out: &mut Vec<(usize, Visit)>,
    ) {
        match node {
            PlanNode::Empty { .. } => {}
            PlanNode::Leaf { layer } => {
                let l = self.structure.layer_index(layer).expect("layer");
                let Symbol::Digit(d) = sym else {
                    panic!("leaf symbol must be a digit, got {sym}")
                };
                out.push((
                    l,
                    match self.setting_of(settings, u, l) {
                        NodeSetting::Z => Visit::Key(*d),
                        _ => Visit::Test { side: *d },
                    },
                ));
            }
            PlanNode::Superpose { layer, children } => {
                let l = self.structure.layer_index(layer).expect("layer");
                let (b, inner) = match sym {
                    Symbol::Branch { branch, inner } => (*branch, Some(inner.as_ref())),
                    Symbol::Bottom { branch } => (*branch, None),
                    other => panic!("superpose symbol must carry a branch, got {other}"),
                };
                if self.setting_of(settings, u, l) != NodeSetting::Z {
                    out.push((l, Visit::Test { side: b }));
                    return;
                }
                out.push((l, Visit::Key(b)));
                if let Some(inner) = inner {
                    self.walk(&children[b as usize], inner, u, settings, out);
                }
            }
        }
    }

    fn phase(&self, layer: usize, s: NodeSetting) -> f64 {
        match (self.homes[layer].leaf, s) {
            (_, NodeSetting::X) => 0.0,
            (true, NodeSetting::Y) => -FRAC_PI_2,
            (false, NodeSetting::Y) => FRAC_PI_2,
            (_, NodeSetting::Z) => unreachable!("key setting has no phase"),
        }
    }

    /// Groups the register of user `u` in factor `f` by the test node each
    /// symbol stops at, and pairs left and right blocks in alphabet order.
    fn pairings(&self, u: usize, f: usize, slot: usize, settings: &Settings) -> BTreeMap<usize, Pairing> {
        let factor = &self.factors[f];
        let Some(node) = &factor.node else {
            return BTreeMap::new();
        };
        let alphabet = factor.keyed.state.layout().alphabet(slot);
        let mut blocks: BTreeMap<usize, (Vec<u32>, Vec<u32>)> = BTreeMap::new();
        let mut visits = Vec::new();
        for (r, sym) in alphabet.iter().enumerate() {
            visits.clear();
            self.walk(node, sym, u, settings, &mut visits);
            if let Some(&(l, Visit::Test { side })) = visits.last() {
                let e = blocks.entry(l).or_default();
                if side == 0 {
                    e.0.push(r as u32);
                } else {
                    e.1.push(r as u32);
                }
            }
        }
        blocks
            .into_iter()
            .map(|(l, (left, right))| {
                let phi = self.phase(l, self.setting_of(settings, u, l));
                let n = left.len().min(right.len());
                let pairs = (0..n).map(|k| (left[k], right[k], phi)).collect();
                let unpaired = left[n..].iter().chain(&right[n..]).copied().collect();
                (l, Pairing { pairs, unpaired })
            })
            .collect()
    }

    fn response(&self, u: usize, f: usize, slot: usize, settings: &Settings) -> LocalResponse {
        let dim = self.factors[f].keyed.state.layout().dim(slot);
        let pairings = self.pairings(u, f, slot, settings);
        let mut test_sign = vec![None; dim];
        if pairings.is_empty() {
            return LocalResponse { op: None, test_sign };
        }
        let one = Complex64::new(1.0, 0.0);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let mut op: LocalOp = (0..dim as u32).map(|i| vec![(i, one)]).collect();
        for (&l, p) in &pairings {
            for &(a, b, phi) in &p.pairs {
                let e = Complex64::from_polar(1.0, phi);
                op[a as usize] = vec![(a, one * h), (b, one * h)];
                op[b as usize] = vec![(a, e * h), (b, -e * h)];
                test_sign[a as usize] = Some((l, 1));
                test_sign[b as usize] = Some((l, -1));
            }
            for &r in &p.unpaired {
                test_sign[r as usize] = Some((l, 0));
            }
        }
        LocalResponse {
            op: Some(op),
            test_sign,
        }
    }

    /// Splits a user's joint register index into per-factor indices.
    fn split_index(&self, u: usize, mut idx: u32) -> Vec<u32> {
        self.user_slots[u]
            .iter()
            .map(|&(f, p)| {
                let d = self.factors[f].keyed.state.layout().dim(p) as u32;
                let i = idx % d;
                idx /= d;
                i
            })
            .collect()
    }

    fn join_index(&self, u: usize, parts: &[u32]) -> u32 {
        let mut idx = 0u32;
        let mut radix = 1u32;
        for (&(f, p), &i) in self.user_slots[u].iter().zip(parts) {
            idx += radix * i;
            radix *= self.factors[f].keyed.state.layout().dim(p) as u32;
        }
        idx
    }

    /// Measures one round. Returns each user's joint register readout and,
    /// per user factor, the coin used when the readout fell outside a test
    /// pairing. `noisy` replaces the quantum outcome by a uniform readout.
    pub fn measure<R: Rng + ?Sized>(
        &self,
        settings: &Settings,
        noisy: bool,
        source: &mut R,
        coins: &mut [&mut dyn rand::RngCore],
    ) -> (Vec<u32>, Vec<Vec<Option<bool>>>) {
        let n = self.user_layers.len();
        let all_key = settings.iter().flatten().all(|&s| s == NodeSetting::Z);
        let mut parts: Vec<Vec<u32>> = self.user_slots.iter().map(|s| vec![0; s.len()]).collect();
        let mut responses: Vec<Vec<Option<LocalResponse>>> =
            self.user_slots.iter().map(|s| vec![None; s.len()]).collect();
        if all_key && !noisy {
            let v = self.full_sampler.sample(source);
            for u in 0..n {
                parts[u] = self.split_index(u, v.0[u]);
            }
        } else {
            for (f, factor) in self.factors.iter().enumerate() {
                let layout = factor.keyed.state.layout();
                let members: Vec<(usize, usize)> = layout
                    .users()
                    .iter()
                    .map(|uid| self.structure.user_index(uid).expect("user"))
                    .map(|u| (u, self.user_slots[u].iter().position(|&(ff, _)| ff == f).unwrap()))
                    .collect();
                for (slot, &(u, k)) in members.iter().enumerate() {
                    responses[u][k] = Some(self.response(u, f, slot, settings));
                }
                if noisy {
                    for (slot, &(u, k)) in members.iter().enumerate() {
                        parts[u][k] = source.random_range(0..layout.dim(slot) as u32);
                    }
                } else {
                    let ops: Vec<Option<&LocalOp>> = members
                        .iter()
                        .map(|&(u, k)| responses[u][k].as_ref().and_then(|r| r.op.as_ref()))
                        .collect();
                    let v = if ops.iter().all(Option::is_none) {
                        factor.sampler.sample(source).clone()
                    } else {
                        sample_rotated(&factor.keyed.state, &ops, source)
                    };
                    for (slot, &(u, k)) in members.iter().enumerate() {
                        parts[u][k] = v.0[slot];
                    }
                }
            }
        }
        let mut readout = Vec::with_capacity(n);
        let mut coin_out = Vec::with_capacity(n);
        for u in 0..n {
            readout.push(self.join_index(u, &parts[u]));
            let mut cs = Vec::with_capacity(parts[u].len());
            for (k, &i) in parts[u].iter().enumerate() {
                let needs = responses[u][k]
                    .as_ref()
                    .and_then(|r| r.test_sign[i as usize])
                    .is_some_and(|(_, s)| s == 0);
                cs.push(needs.then(|| coins[u].random::<bool>()));
            }
            coin_out.push(cs);
        }
        (readout, coin_out)
    }

    /// Interprets a round: per user, one observation per layer of theirs.
    pub fn observe(
        &self,
        settings: &Settings,
        readout: &[u32],
        coins: &[Vec<Option<bool>>],
    ) -> Vec<Vec<Observation>> {
        let mut out = Vec::with_capacity(readout.len());
        let mut visits = Vec::new();
        for (u, &idx) in readout.iter().enumerate() {
            let mut obs: BTreeMap<usize, Observation> = BTreeMap::new();
            let parts = self.split_index(u, idx);
            for (k, (&(f, slot), &i)) in self.user_slots[u].iter().zip(&parts).enumerate() {
                let factor = &self.factors[f];
                let Some(node) = &factor.node else { continue };
                let sym = &factor.keyed.state.layout().alphabet(slot)[i as usize];
                visits.clear();
                self.walk(node, sym, u, settings, &mut visits);
                let mut sign_of = None;
                for &(l, v) in &visits {
                    let o = match v {
                        Visit::Key(x) => Observation::Value(x),
                        Visit::Test { .. } => {
                            let resp = sign_of.get_or_insert_with(|| self.response(u, f, slot, settings));
                            let sign = match resp.test_sign[i as usize] {
                                Some((_, 0)) | None => {
                                    if coins[u].get(k).copied().flatten().unwrap_or(true) {
                                        1
                                    } else {
                                        -1
                                    }
                                }
                                Some((_, s)) => s,
                            };
                            Observation::Parity(sign)
                        }
                    };
                    obs.insert(l, o);
                }
            }
            out.push(
                self.user_layers[u]
                    .iter()
                    .map(|l| obs.get(l).copied().unwrap_or(Observation::Missed))
                    .collect(),
            );
        }
        out
    }

    /// Observation of user `u` for layer `layer` within `obs`.
    pub fn observation(&self, obs: &[Vec<Observation>], u: usize, layer: usize) -> Observation {
        let pos = self.user_layers[u]
            .iter()
            .position(|&l| l == layer)
            .expect("user is a member");
        obs[u][pos]
    }

    /// Exact `⟨Ψ| ⊗_j O_j |Ψ⟩` for the test observables of layer `layer`
    /// with per-member settings (member order). Non-members act as identity.
    pub fn parity_expectation(
        &self,
        layer: usize,
        member_settings: &[NodeSetting],
    ) -> Result<f64, MeasurementError> {
        let lay = &self.structure.layers()[layer];
        if !self.testable(layer) {
            return Err(MeasurementError::NotBinary(lay.clone()));
        }
        if member_settings.len() != lay.len() || member_settings.contains(&NodeSetting::Z) {
            return Err(MeasurementError::BadSetting(
                "one x/y setting per member expected".into(),
            ));
        }
        let settings = self.settings_for_test(layer, member_settings);
        let f = self.homes[layer].factor;
        let state = &self.factors[f].keyed.state;
        // Each O_j maps a basis index to at most one basis index.
        let maps: Vec<Vec<Option<(u32, Complex64)>>> = state
            .users()
            .iter()
            .enumerate()
            .map(|(slot, uid)| {
                let u = self.structure.user_index(uid).expect("user");
                let dim = state.layout().dim(slot);
                if !lay.contains(uid) {
                    return (0..dim as u32).map(|i| Some((i, Complex64::new(1.0, 0.0)))).collect();
                }
                let mut m = vec![None; dim];
                if let Some(p) = self.pairings(u, f, slot, &settings).get(&layer) {
                    for &(a, b, phi) in &p.pairs {
                        m[a as usize] = Some((b, Complex64::from_polar(1.0, -phi)));
                        m[b as usize] = Some((a, Complex64::from_polar(1.0, phi)));
                    }
                }
                m
            })
            .collect();
        let mut total = Complex64::new(0.0, 0.0);
        'outer: for (v, a) in state.amplitudes() {
            let mut w = Vec::with_capacity(v.0.len());
            let mut c = Complex64::new(1.0, 0.0);
            for (slot, &i) in v.0.iter().enumerate() {
                match maps[slot][i as usize] {
                    Some((j, ph)) => {
                        w.push(j);
                        c *= ph;
                    }
                    None => continue 'outer,
                }
            }
            total += state.amplitude(&BasisVector(w)).conj() * a * c;
        }
        Ok(total.re)
    }

    /// Expected test parity given that the round reached the node:
    /// [`Self::parity_expectation`] divided by the reach probability.
    pub fn ideal_test_parity(
        &self,
        layer: usize,
        member_settings: &[NodeSetting],
    ) -> Result<f64, MeasurementError> {
        Ok(self.parity_expectation(layer, member_settings)? / self.homes[layer].reach_prob)
    }

    /// Settings testing `layer` with the given member settings, key basis
    /// everywhere else.
    pub fn settings_for_test(&self, layer: usize, member_settings: &[NodeSetting]) -> Settings {
        let lay = &self.structure.layers()[layer];
        let mut s = self.all_key_settings();
        for (k, uid) in lay.members().iter().enumerate() {
            let u = self.structure.user_index(uid).expect("user");
            let pos = self.user_layers[u].iter().position(|&l| l == layer).unwrap();
            s[u][pos] = member_settings[k];
        }
        s
    }

    /// One sampled value of the product of the members' test outcomes for
    /// `layer`, or `None` when the round did not reach the node.
    pub fn sample_parity<R: Rng + ?Sized>(
        &self,
        layer: usize,
        member_settings: &[NodeSetting],
        rng: &mut R,
    ) -> Result<Option<i8>, MeasurementError> {
        let settings = self.settings_for_test(layer, member_settings);
        self.check_settings(&settings)?;
        let n = self.user_layers.len();
        let mut coin_rngs: Vec<rand_chacha::ChaCha8Rng> = (0..n)
            .map(|_| rand::SeedableRng::seed_from_u64(rng.random()))
            .collect();
        let mut coin_refs: Vec<&mut dyn rand::RngCore> =
            coin_rngs.iter_mut().map(|r| r as &mut dyn rand::RngCore).collect();
        let (readout, coins) = self.measure(&settings, false, rng, &mut coin_refs);
        let obs = self.observe(&settings, &readout, &coins);
        let mut prod = 1i8;
        for uid in self.structure.layers()[layer].members() {
            let u = self.structure.user_index(uid).unwrap();
            match self.observation(&obs, u, layer) {
                Observation::Parity(s) => prod *= s,
                _ => return Ok(None),
            }
        }
        Ok(Some(prod))
    }
}

/// Local Pauli measurement on the flat construction: per user, one x/y/z
/// choice per virtual qubit (the user's layers in canonical order). Returns
/// one bit per virtual qubit: the key bit for z, `(1 - outcome)/2` for x/y.
pub fn measure_flat_pauli<R: Rng + ?Sized>(
    prepared: &PreparedState,
    settings: &Settings,
    rng: &mut R,
) -> Result<Vec<Vec<u8>>, MeasurementError> {
    if !prepared.is_flat() {
        return Err(MeasurementError::NotFlat);
    }
    prepared.check_settings(settings)?;
    let n = prepared.user_layers.len();
    let mut coin_rngs: Vec<rand_chacha::ChaCha8Rng> = (0..n)
        .map(|_| rand::SeedableRng::seed_from_u64(rng.random()))
        .collect();
    let mut coin_refs: Vec<&mut dyn rand::RngCore> =
        coin_rngs.iter_mut().map(|r| r as &mut dyn rand::RngCore).collect();
    let (readout, coins) = prepared.measure(settings, false, rng, &mut coin_refs);
    let obs = prepared.observe(settings, &readout, &coins);
    Ok(obs
        .iter()
        .map(|per_user| {
            per_user
                .iter()
                .map(|o| match o {
                    Observation::Value(b) => *b as u8,
                    Observation::Parity(s) => u8::from(*s < 0),
                    Observation::Missed => unreachable!("flat states reach every qubit"),
                })
                .collect()
        })
        .collect())
}
