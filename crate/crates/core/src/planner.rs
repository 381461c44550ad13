//! Construction plans: forests over the inclusion order of layers, where every
//! internal node superposes its children to implement its own layer and the
//! trees are tensor-joined. Enumerates plans and extracts the trade-off
//! between local dimensions and key rates.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::keystructure::{Layer, LayeredKeyStructure, StructureError, UserId};

/// Plans over more layers than this are only enumerated on request.
pub const ENUMERATION_LAYER_LIMIT: usize = 12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error(transparent)]
    Structure(#[from] StructureError),
    #[error("layer {0} appears more than once in the plan")]
    DuplicateLayer(Layer),
    #[error("node {node}: child user set is not contained in the layer")]
    ChildOutsideParent { node: Layer },
    #[error("node {node}: children do not cover the layer")]
    Uncovered { node: Layer },
    #[error("node {node}: needs at least two branches, has {count}")]
    TooFewBranches { node: Layer, count: usize },
    #[error("user `{0}` is not part of the plan")]
    UnknownUser(UserId),
    #[error("max_arity must be at least 2")]
    BadArity,
    #[error("{0} layers exceeds the enumeration limit of {ENUMERATION_LAYER_LIMIT}; pass the override to proceed")]
    TooLarge(usize),
    #[error("malformed plan file: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PlanNode {
    /// Binary GHZ state on the layer.
    Leaf { layer: Layer },
    /// Padding branch: the empty-structure state on a set of users.
    Empty { users: Vec<UserId> },
    /// Equal superposition of the children; implements `layer`.
    Superpose { layer: Layer, children: Vec<PlanNode> },
}

impl PlanNode {
    pub fn users(&self) -> &[UserId] {
        match self {
            PlanNode::Leaf { layer } | PlanNode::Superpose { layer, .. } => layer.members(),
            PlanNode::Empty { users } => users,
        }
    }

    pub fn layer(&self) -> Option<&Layer> {
        match self {
            PlanNode::Leaf { layer } | PlanNode::Superpose { layer, .. } => Some(layer),
            PlanNode::Empty { .. } => None,
        }
    }

    pub fn children(&self) -> &[PlanNode] {
        match self {
            PlanNode::Superpose { children, .. } => children,
            _ => &[],
        }
    }

    /// Number of branches of a superpose node, 0 otherwise.
    pub fn arity(&self) -> usize {
        self.children().len()
    }

    /// Pre-order walk over the subtree.
    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a PlanNode)) {
        f(self);
        for c in self.children() {
            c.visit(f);
        }
    }

    /// Finds the node implementing `layer` together with the arities of its
    /// proper superpose ancestors.
    pub fn find(&self, layer: &Layer) -> Option<(&PlanNode, Vec<usize>)> {
        if self.layer() == Some(layer) {
            return Some((self, Vec::new()));
        }
        for c in self.children() {
            if let Some((n, mut path)) = c.find(layer) {
                path.insert(0, self.arity());
                return Some((n, path));
            }
        }
        None
    }
}

/// A forest of plan trees over a user set; the trees are tensor-joined in
/// order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ConstructionPlan {
    users: Vec<UserId>,
    roots: Vec<PlanNode>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum RootRepr {
    Tensor { children: Vec<PlanNode> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PlanFile {
    users: Vec<UserId>,
    root: RootRepr,
}

impl ConstructionPlan {
    pub fn new(users: Vec<UserId>, roots: Vec<PlanNode>) -> Result<Self, PlanError> {
        let users: Vec<UserId> = users.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        let mut seen = BTreeSet::new();
        for r in &roots {
            check_node(r, &users, &mut seen)?;
        }
        let plan = ConstructionPlan { users, roots };
        plan.structure()?;
        Ok(plan)
    }

    pub fn users(&self) -> &[UserId] {
        &self.users
    }

    pub fn roots(&self) -> &[PlanNode] {
        &self.roots
    }

    /// Every layer the plan implements, canonically ordered.
    pub fn layers(&self) -> Vec<Layer> {
        let mut out = BTreeSet::new();
        for r in &self.roots {
            r.visit(&mut |n| {
                if let Some(l) = n.layer() {
                    out.insert(l.clone());
                }
            });
        }
        out.into_iter().collect()
    }

    pub fn structure(&self) -> Result<LayeredKeyStructure, StructureError> {
        LayeredKeyStructure::new(
            self.users.iter().cloned(),
            self.layers().into_iter().map(|l| l.members().to_vec()),
        )
    }

    /// Locates the node implementing `layer`, with its ancestors' arities.
    pub fn find(&self, layer: &Layer) -> Option<(usize, &PlanNode, Vec<usize>)> {
        self.roots
            .iter()
            .enumerate()
            .find_map(|(i, r)| r.find(layer).map(|(n, p)| (i, n, p)))
    }

    /// All layers as tensor-joined GHZ leaves.
    pub fn flat(k: &LayeredKeyStructure) -> Self {
        ConstructionPlan {
            users: k.users().to_vec(),
            roots: k
                .layers()
                .iter()
                .map(|l| PlanNode::Leaf { layer: l.clone() })
                .collect(),
        }
    }

    /// Builds the plan in which layer `i` hangs below layer `parents[i]`
    /// (roots have `None`). Superpose nodes whose children miss part of the
    /// layer, or that have a single child, get one padding branch.
    pub fn from_parents(
        k: &LayeredKeyStructure,
        parents: &[Option<usize>],
    ) -> Result<Self, PlanError> {
        assert_eq!(parents.len(), k.num_layers(), "one parent entry per layer");
        fn node(k: &LayeredKeyStructure, parents: &[Option<usize>], i: usize) -> PlanNode {
            let layer = k.layers()[i].clone();
            let kids: Vec<usize> = (0..parents.len()).filter(|&j| parents[j] == Some(i)).collect();
            if kids.is_empty() {
                return PlanNode::Leaf { layer };
            }
            let mut children: Vec<PlanNode> = kids.iter().map(|&j| node(k, parents, j)).collect();
            let covered: BTreeSet<&UserId> = kids
                .iter()
                .flat_map(|&j| k.layers()[j].members().iter())
                .collect();
            if covered.len() < layer.len() || kids.len() < 2 {
                children.push(PlanNode::Empty {
                    users: layer.members().to_vec(),
                });
            }
            PlanNode::Superpose { layer, children }
        }
        let roots = (0..parents.len())
            .filter(|&i| parents[i].is_none())
            .map(|i| node(k, parents, i))
            .collect();
        ConstructionPlan::new(k.users().to_vec(), roots)
    }

    /// Hangs each layer below its smallest strict superset that still has
    /// room (at most `max_arity - 1` layer children), largest layers first.
    pub fn greedy_tradeoff(k: &LayeredKeyStructure, max_arity: usize) -> Result<Self, PlanError> {
        if max_arity < 2 {
            return Err(PlanError::BadArity);
        }
        let g = k.inclusion_graph();
        let mut parents = vec![None; k.num_layers()];
        let mut counts = vec![0usize; k.num_layers()];
        for i in 0..k.num_layers() {
            // Supersets come earlier in canonical order; the last is smallest.
            if let Some(&p) = g
                .supersets(i)
                .iter()
                .rev()
                .find(|&&p| counts[p] + 1 < max_arity)
            {
                parents[i] = Some(p);
                counts[p] += 1;
            }
        }
        Self::from_parents(k, &parents)
    }

    pub fn from_json(text: &str) -> Result<Self, PlanError> {
        let file: PlanFile =
            serde_json::from_str(text).map_err(|e| PlanError::Parse(e.to_string()))?;
        let RootRepr::Tensor { children } = file.root;
        Self::new(file.users, children)
    }

    pub fn to_json(&self) -> String {
        let file = PlanFile {
            users: self.users.clone(),
            root: RootRepr::Tensor {
                children: self.roots.clone(),
            },
        };
        serde_json::to_string_pretty(&file).expect("plan serializes")
    }

    /// Compact one-line rendering, e.g. `[{1,2,3}<{1,2},∅>]`.
    pub fn describe(&self) -> String {
        fn node(n: &PlanNode, out: &mut String) {
            match n {
                PlanNode::Leaf { layer } => out.push_str(&layer.to_string()),
                PlanNode::Empty { .. } => out.push('∅'),
                PlanNode::Superpose { layer, children } => {
                    out.push_str(&layer.to_string());
                    out.push('<');
                    for (i, c) in children.iter().enumerate() {
                        if i > 0 {
                            out.push(',');
                        }
                        node(c, out);
                    }
                    out.push('>');
                }
            }
        }
        let mut out = String::from("[");
        for (i, r) in self.roots.iter().enumerate() {
            if i > 0 {
                out.push_str(" ⊗ ");
            }
            node(r, &mut out);
        }
        out.push(']');
        out
    }
}

fn check_node(
    n: &PlanNode,
    users: &[UserId],
    seen: &mut BTreeSet<Layer>,
) -> Result<(), PlanError> {
    for u in n.users() {
        if users.binary_search(u).is_err() {
            return Err(PlanError::UnknownUser(u.clone()));
        }
    }
    if let PlanNode::Empty { users: e } = n {
        if e.is_empty() {
            return Err(PlanError::Parse("empty node without users".into()));
        }
    }
    if let Some(l) = n.layer() {
        if !seen.insert(l.clone()) {
            return Err(PlanError::DuplicateLayer(l.clone()));
        }
    }
    if let PlanNode::Superpose { layer, children } = n {
        if children.len() < 2 {
            return Err(PlanError::TooFewBranches {
                node: layer.clone(),
                count: children.len(),
            });
        }
        let mut covered = BTreeSet::new();
        for c in children {
            if !c.users().iter().all(|u| layer.contains(u)) {
                return Err(PlanError::ChildOutsideParent { node: layer.clone() });
            }
            covered.extend(c.users().iter().cloned());
            check_node(c, users, seen)?;
        }
        if covered.len() != layer.len() {
            return Err(PlanError::Uncovered { node: layer.clone() });
        }
    }
    Ok(())
}

/// Every plan whose superpose nodes have at most `max_arity` branches
/// (padding included). The flat plan comes first.
pub fn enumerate_plans(
    k: &LayeredKeyStructure,
    max_arity: usize,
) -> Result<Vec<ConstructionPlan>, PlanError> {
    enumerate_plans_with(k, max_arity, false)
}

/// As [`enumerate_plans`]; `allow_large` lifts the layer-count guard.
pub fn enumerate_plans_with(
    k: &LayeredKeyStructure,
    max_arity: usize,
    allow_large: bool,
) -> Result<Vec<ConstructionPlan>, PlanError> {
    if max_arity < 2 {
        return Err(PlanError::BadArity);
    }
    let n = k.num_layers();
    if n > ENUMERATION_LAYER_LIMIT && !allow_large {
        return Err(PlanError::TooLarge(n));
    }
    let g = k.inclusion_graph();
    let options: Vec<Vec<usize>> = (0..n).map(|i| g.supersets(i)).collect();
    let user_pos: BTreeMap<&UserId, usize> =
        k.users().iter().enumerate().map(|(i, u)| (u, i)).collect();
    let masks: Vec<u128> = k
        .layers()
        .iter()
        .map(|l| l.members().iter().fold(0, |m, u| m | (1u128 << user_pos[u])))
        .collect();

    struct Search<'a> {
        options: &'a [Vec<usize>],
        masks: &'a [u128],
        max_arity: usize,
        parents: Vec<Option<usize>>,
        counts: Vec<usize>,
        union: Vec<u128>,
        found: Vec<Vec<Option<usize>>>,
    }
    impl Search<'_> {
        fn arity_ok(&self, p: usize) -> bool {
            let c = self.counts[p];
            c == 0 || c + usize::from(self.union[p] != self.masks[p]) <= self.max_arity
        }
        fn go(&mut self, i: usize) {
            if i == self.masks.len() {
                if (0..self.masks.len()).all(|p| self.arity_ok(p)) {
                    self.found.push(self.parents.clone());
                }
                return;
            }
            self.parents[i] = None;
            self.go(i + 1);
            for k in 0..self.options[i].len() {
                let p = self.options[i][k];
                if self.counts[p] + 1 > self.max_arity {
                    continue;
                }
                let saved = self.union[p];
                self.counts[p] += 1;
                self.union[p] |= self.masks[i];
                self.parents[i] = Some(p);
                self.go(i + 1);
                self.parents[i] = None;
                self.counts[p] -= 1;
                self.union[p] = saved;
            }
        }
    }
    let mut s = Search {
        options: &options,
        masks: &masks,
        max_arity,
        parents: vec![None; n],
        counts: vec![0; n],
        union: vec![0; n],
        found: Vec::new(),
    };
    s.go(0);
    s.found
        .iter()
        .map(|parents| ConstructionPlan::from_parents(k, parents))
        .collect()
}

/// Local dimensions, key probabilities and support size of a plan, computed
/// from the plan alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanMetrics {
    pub users: Vec<UserId>,
    pub dims: Vec<u64>,
    pub layers: Vec<Layer>,
    /// Probability that a key-basis round yields a symbol in each layer:
    /// the product of `1/m` over the layer's superpose ancestors.
    pub rates: Vec<f64>,
    /// Expected key bits per round: the probability times `log2` of the
    /// layer's key alphabet size.
    pub bits: Vec<f64>,
    /// Key alphabet size per layer (2 for leaves, the branch count for
    /// superpose nodes).
    pub arities: Vec<u32>,
    pub support_size: u64,
}

impl PlanMetrics {
    pub fn total_dim(&self) -> u64 {
        self.dims.iter().fold(1u64, |a, &d| a.saturating_mul(d))
    }

    /// Every dimension no larger and every rate no smaller, one strictly.
    pub fn dominates(&self, other: &PlanMetrics) -> bool {
        let dims_le = self.dims.iter().zip(&other.dims).all(|(a, b)| a <= b);
        let rates_ge = self.rates.iter().zip(&other.rates).all(|(a, b)| a >= b);
        let strict = self.dims.iter().zip(&other.dims).any(|(a, b)| a < b)
            || self.rates.iter().zip(&other.rates).any(|(a, b)| a > b);
        dims_le && rates_ge && strict
    }
}

struct NodeInfo {
    dims: BTreeMap<UserId, u64>,
    support: u64,
}

fn node_info(
    n: &PlanNode,
    prob: f64,
    rates: &mut BTreeMap<Layer, (f64, u32)>,
) -> NodeInfo {
    match n {
        PlanNode::Leaf { layer } => {
            rates.insert(layer.clone(), (prob, 2));
            NodeInfo {
                dims: layer.members().iter().map(|u| (u.clone(), 2)).collect(),
                support: 2,
            }
        }
        PlanNode::Empty { users } => NodeInfo {
            dims: users.iter().map(|u| (u.clone(), 1)).collect(),
            support: 1,
        },
        PlanNode::Superpose { layer, children } => {
            let m = children.len();
            rates.insert(layer.clone(), (prob, m as u32));
            let infos: Vec<NodeInfo> = children
                .iter()
                .map(|c| node_info(c, prob / m as f64, rates))
                .collect();
            let dims = layer
                .members()
                .iter()
                .map(|u| {
                    let d = infos
                        .iter()
                        .map(|i| i.dims.get(u).copied().unwrap_or(1))
                        .sum();
                    (u.clone(), d)
                })
                .collect();
            NodeInfo {
                dims,
                support: infos.iter().map(|i| i.support).sum(),
            }
        }
    }
}

pub fn plan_metrics(plan: &ConstructionPlan) -> PlanMetrics {
    let mut rates = BTreeMap::new();
    let mut dims: BTreeMap<UserId, u64> = plan.users().iter().map(|u| (u.clone(), 1)).collect();
    let mut support = 1u64;
    for r in plan.roots() {
        let info = node_info(r, 1.0, &mut rates);
        for (u, d) in info.dims {
            *dims.get_mut(&u).expect("plan user") *= d;
        }
        support = support.saturating_mul(info.support);
    }
    let layers: Vec<Layer> = rates.keys().cloned().collect();
    PlanMetrics {
        users: dims.keys().cloned().collect(),
        dims: dims.values().copied().collect(),
        rates: rates.values().map(|r| r.0).collect(),
        bits: rates.values().map(|r| r.0 * (r.1 as f64).log2()).collect(),
        arities: rates.values().map(|r| r.1).collect(),
        layers,
        support_size: support,
    }
}

/// Indices of the non-dominated plans, in input order. Plans with identical
/// metrics keep only their first representative.
pub fn pareto_front(metrics: &[PlanMetrics]) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::new();
    for (i, m) in metrics.iter().enumerate() {
        if metrics.iter().any(|o| o.dominates(m)) {
            continue;
        }
        if out
            .iter()
            .any(|&j| metrics[j].dims == m.dims && metrics[j].rates == m.rates)
        {
            continue;
        }
        out.push(i);
    }
    out
}
