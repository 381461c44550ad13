//! Layered key structures: users, layers and the combinatorics derived from
//! them (per-user layer counts, neighborhood graph, connected components,
//! partitions and the inclusion order of layers).

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Above this many layers, enumerating every partition grouping is refused.
pub const ENUMERATE_ALL_LIMIT: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StructureError {
    #[error("structure has no users")]
    EmptyUsers,
    #[error("duplicate user `{0}`")]
    DuplicateUser(UserId),
    #[error("duplicate layer {0}")]
    DuplicateLayer(Layer),
    #[error("layer references unknown user `{0}`")]
    UnknownUser(UserId),
    #[error("layer lists user `{0}` more than once")]
    RepeatedMember(UserId),
    #[error("layer must contain at least two users, got {0}")]
    LayerTooSmall(usize),
    #[error("structure is not connected ({0} components)")]
    NotConnected(usize),
    #[error("refusing to enumerate all partitions of {0} layers (limit {limit})", limit = ENUMERATE_ALL_LIMIT)]
    TooManyLayers(usize),
    #[error("malformed structure file: {0}")]
    Parse(String),
}

/// Opaque user label. Users are ordered lexicographically by label.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UserId(String);

impl UserId {
    pub fn new(label: impl Into<String>) -> Self {
        UserId(label.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for UserId {
    fn from(s: &str) -> Self {
        UserId(s.to_owned())
    }
}

impl From<String> for UserId {
    fn from(s: String) -> Self {
        UserId(s)
    }
}

/// A set of at least two users sharing one key.
///
/// Layers order canonically by size (largest first), then by their sorted
/// member lists. With this order the full-user layer of a three-user
/// structure comes before its two-user sublayer, which is the bit order the
/// flat construction uses.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<UserId>", into = "Vec<UserId>")]
pub struct Layer {
    members: Vec<UserId>,
}

impl Layer {
    pub fn new<I, U>(members: I) -> Result<Self, StructureError>
    where
        I: IntoIterator<Item = U>,
        U: Into<UserId>,
    {
        let mut seen = BTreeSet::new();
        for m in members {
            let m = m.into();
            if !seen.insert(m.clone()) {
                return Err(StructureError::RepeatedMember(m));
            }
        }
        if seen.len() < 2 {
            return Err(StructureError::LayerTooSmall(seen.len()));
        }
        Ok(Layer {
            members: seen.into_iter().collect(),
        })
    }

    /// Sorted member list.
    pub fn members(&self) -> &[UserId] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, user: &UserId) -> bool {
        self.members.binary_search(user).is_ok()
    }

    pub fn is_disjoint(&self, other: &Layer) -> bool {
        !self.members.iter().any(|u| other.contains(u))
    }

    pub fn is_subset(&self, other: &Layer) -> bool {
        self.members.iter().all(|u| other.contains(u))
    }

    /// Strict subset.
    pub fn is_proper_subset(&self, other: &Layer) -> bool {
        self.len() < other.len() && self.is_subset(other)
    }
}

impl Ord for Layer {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .len()
            .cmp(&self.len())
            .then_with(|| self.members.cmp(&other.members))
    }
}

impl PartialOrd for Layer {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, m) in self.members.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{m}")?;
        }
        f.write_str("}")
    }
}

impl TryFrom<Vec<UserId>> for Layer {
    type Error = StructureError;

    fn try_from(v: Vec<UserId>) -> Result<Self, Self::Error> {
        Layer::new(v)
    }
}

impl From<Layer> for Vec<UserId> {
    fn from(l: Layer) -> Self {
        l.members
    }
}

/// Raw on-disk form of a structure file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StructureFile {
    pub users: Vec<String>,
    pub layers: Vec<Vec<String>>,
}

/// A canonicalized set of layers over a set of users.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LayeredKeyStructure {
    users: Vec<UserId>,
    layers: Vec<Layer>,
}

/// A set of pairwise disjoint layers covering every user. Holds indices into
/// the structure's canonical layer list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub layers: Vec<usize>,
}

/// Users as vertices, an edge whenever two users share a layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborhoodGraph {
    pub users: Vec<UserId>,
    /// Pairs of user indices `(a, b)` with `a < b`.
    pub edges: BTreeSet<(usize, usize)>,
}

impl NeighborhoodGraph {
    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    pub fn degree(&self, v: usize) -> usize {
        self.edges.iter().filter(|&&(a, b)| a == v || b == v).count()
    }
}

/// Layers ordered by strict inclusion: an edge `a -> b` whenever layer `a` is
/// a proper subset of layer `b`. Transitive edges are kept.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InclusionGraph {
    pub layers: Vec<Layer>,
    pub edges: Vec<(usize, usize)>,
}

impl InclusionGraph {
    /// Indices of the strict supersets of layer `i`, in canonical order.
    pub fn supersets(&self, i: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .edges
            .iter()
            .filter(|&&(a, _)| a == i)
            .map(|&(_, b)| b)
            .collect();
        out.sort_unstable();
        out
    }

    /// Indices of the strict subsets of layer `i`, in canonical order.
    pub fn subsets(&self, i: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .edges
            .iter()
            .filter(|&&(_, b)| b == i)
            .map(|&(a, _)| a)
            .collect();
        out.sort_unstable();
        out
    }

    /// Kahn's algorithm; true when every vertex can be ordered.
    pub fn is_acyclic(&self) -> bool {
        let n = self.layers.len();
        let mut indeg = vec![0usize; n];
        for &(_, b) in &self.edges {
            indeg[b] += 1;
        }
        let mut stack: Vec<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
        let mut seen = 0;
        while let Some(v) = stack.pop() {
            seen += 1;
            for &(a, b) in &self.edges {
                if a == v {
                    indeg[b] -= 1;
                    if indeg[b] == 0 {
                        stack.push(b);
                    }
                }
            }
        }
        seen == n
    }
}

impl LayeredKeyStructure {
    /// Validates and canonicalizes a structure: users sorted by label, layers
    /// sorted canonically.
    pub fn new<U, L, M>(users: U, layers: L) -> Result<Self, StructureError>
    where
        U: IntoIterator,
        U::Item: Into<UserId>,
        L: IntoIterator<Item = M>,
        M: IntoIterator,
        M::Item: Into<UserId>,
    {
        let mut user_set = BTreeSet::new();
        for u in users {
            let u = u.into();
            if !user_set.insert(u.clone()) {
                return Err(StructureError::DuplicateUser(u));
            }
        }
        if user_set.is_empty() {
            return Err(StructureError::EmptyUsers);
        }
        let mut layer_set = BTreeSet::new();
        for raw in layers {
            let layer = Layer::new(raw)?;
            if let Some(u) = layer.members().iter().find(|u| !user_set.contains(*u)) {
                return Err(StructureError::UnknownUser(u.clone()));
            }
            if layer_set.contains(&layer) {
                return Err(StructureError::DuplicateLayer(layer));
            }
            layer_set.insert(layer);
        }
        Ok(LayeredKeyStructure {
            users: user_set.into_iter().collect(),
            layers: layer_set.into_iter().collect(),
        })
    }

    pub fn from_file(file: &StructureFile) -> Result<Self, StructureError> {
        Self::new(
            file.users.iter().map(String::as_str),
            file.layers.iter().map(|l| l.iter().map(String::as_str)),
        )
    }

    pub fn from_json(text: &str) -> Result<Self, StructureError> {
        let file: StructureFile =
            serde_json::from_str(text).map_err(|e| StructureError::Parse(e.to_string()))?;
        Self::from_file(&file)
    }

    pub fn to_file(&self) -> StructureFile {
        StructureFile {
            users: self.users.iter().map(|u| u.to_string()).collect(),
            layers: self
                .layers
                .iter()
                .map(|l| l.members().iter().map(|u| u.to_string()).collect())
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("structure serializes")
    }

    pub fn users(&self) -> &[UserId] {
        &self.users
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Number of layers.
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn user_index(&self, user: &UserId) -> Option<usize> {
        self.users.binary_search(user).ok()
    }

    pub fn layer_index(&self, layer: &Layer) -> Option<usize> {
        self.layers.binary_search(layer).ok()
    }

    /// Number of layers containing `user`.
    pub fn user_layer_count(&self, user: &UserId) -> Result<usize, StructureError> {
        if self.user_index(user).is_none() {
            return Err(StructureError::UnknownUser(user.clone()));
        }
        Ok(self.layers.iter().filter(|l| l.contains(user)).count())
    }

    /// Layer counts for every user, in user order.
    pub fn layer_counts(&self) -> Vec<usize> {
        self.users
            .iter()
            .map(|u| self.layers.iter().filter(|l| l.contains(u)).count())
            .collect()
    }

    /// Indices of the layers containing `user`, in canonical order.
    pub fn layers_of(&self, user: &UserId) -> Vec<usize> {
        (0..self.layers.len())
            .filter(|&i| self.layers[i].contains(user))
            .collect()
    }

    pub fn neighborhood_graph(&self) -> NeighborhoodGraph {
        let mut edges = BTreeSet::new();
        for layer in &self.layers {
            let idx: Vec<usize> = layer
                .members()
                .iter()
                .map(|u| self.user_index(u).expect("member is a user"))
                .collect();
            for (k, &a) in idx.iter().enumerate() {
                for &b in &idx[k + 1..] {
                    edges.insert((a.min(b), a.max(b)));
                }
            }
        }
        NeighborhoodGraph {
            users: self.users.clone(),
            edges,
        }
    }

    /// Splits the structure along the connected components of its
    /// neighborhood graph. Users outside every layer form singleton
    /// components. Components are ordered by their smallest user.
    pub fn connected_components(&self) -> Vec<LayeredKeyStructure> {
        let n = self.users.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for (a, b) in self.neighborhood_graph().edges {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for v in 0..n {
            let r = find(&mut parent, v);
            groups.entry(r).or_default().push(v);
        }
        groups
            .into_values()
            .map(|vs| {
                let users: Vec<UserId> = vs.iter().map(|&v| self.users[v].clone()).collect();
                let layers: Vec<Layer> = self
                    .layers
                    .iter()
                    .filter(|l| users.contains(&l.members()[0]))
                    .cloned()
                    .collect();
                LayeredKeyStructure { users, layers }
            })
            .collect()
    }

    pub fn is_connected(&self) -> bool {
        self.connected_components().len() == 1
    }

    fn require_connected(&self) -> Result<(), StructureError> {
        let c = self.connected_components().len();
        if c == 1 {
            Ok(())
        } else {
            Err(StructureError::NotConnected(c))
        }
    }

    /// Groups every layer into partitions of the user set, each layer used
    /// exactly once. Backtracks over layers in canonical order and returns the
    /// first grouping found, or `None` when no grouping exists.
    pub fn partition_decomposition(&self) -> Option<Vec<Partition>> {
        let mut out = None;
        self.search_partitions(&mut |p| {
            out = Some(p.to_vec());
            false
        });
        out
    }

    /// Every distinct grouping of the layers into partitions.
    pub fn all_partition_decompositions(&self) -> Result<Vec<Vec<Partition>>, StructureError> {
        if self.layers.len() > ENUMERATE_ALL_LIMIT {
            return Err(StructureError::TooManyLayers(self.layers.len()));
        }
        let mut out = Vec::new();
        self.search_partitions(&mut |p| {
            out.push(p.to_vec());
            true
        });
        Ok(out)
    }

    /// Drives the backtracking search; `visit` returns whether to continue.
    fn search_partitions(&self, visit: &mut dyn FnMut(&[Partition]) -> bool) {
        let counts = self.layer_counts();
        // Each partition covers every user once, so all counts must agree.
        if counts.windows(2).any(|w| w[0] != w[1]) {
            return;
        }
        let target = counts.first().copied().unwrap_or(0);
        let user_bits: Vec<u128> = self.layer_masks();
        let full: u128 = if self.users.len() >= 128 {
            u128::MAX
        } else {
            (1u128 << self.users.len()) - 1
        };
        let mut groups: Vec<(u128, Vec<usize>)> = Vec::new();
        self.backtrack(0, target, full, &user_bits, &mut groups, visit);
    }

    fn layer_masks(&self) -> Vec<u128> {
        assert!(self.users.len() <= 128, "partition search supports up to 128 users");
        self.layers
            .iter()
            .map(|l| {
                l.members()
                    .iter()
                    .map(|u| 1u128 << self.user_index(u).expect("member"))
                    .fold(0, |a, b| a | b)
            })
            .collect()
    }

    fn backtrack(
        &self,
        next: usize,
        target: usize,
        full: u128,
        masks: &[u128],
        groups: &mut Vec<(u128, Vec<usize>)>,
        visit: &mut dyn FnMut(&[Partition]) -> bool,
    ) -> bool {
        if next == masks.len() {
            if groups.iter().all(|(m, _)| *m == full) {
                let parts: Vec<Partition> = groups
                    .iter()
                    .map(|(_, ls)| Partition { layers: ls.clone() })
                    .collect();
                return visit(&parts);
            }
            return true;
        }
        let mask = masks[next];
        for g in 0..groups.len() {
            if groups[g].0 & mask == 0 {
                groups[g].0 |= mask;
                groups[g].1.push(next);
                let go_on = self.backtrack(next + 1, target, full, masks, groups, visit);
                groups[g].1.pop();
                groups[g].0 &= !mask;
                if !go_on {
                    return false;
                }
            }
        }
        if groups.len() < target {
            groups.push((mask, vec![next]));
            let go_on = self.backtrack(next + 1, target, full, masks, groups, visit);
            groups.pop();
            if !go_on {
                return false;
            }
        }
        true
    }

    /// Whether GHZ distribution over partitions reaches rate one in every
    /// layer: all layer counts equal and the layers split into exactly that
    /// many partitions. Only defined for connected structures.
    pub fn ghz_rate1_feasible(&self) -> Result<bool, StructureError> {
        self.require_connected()?;
        let counts = self.layer_counts();
        if counts.windows(2).any(|w| w[0] != w[1]) {
            return Ok(false);
        }
        let ell = counts.first().copied().unwrap_or(0);
        Ok(self
            .partition_decomposition()
            .is_some_and(|p| p.len() == ell))
    }

    /// GHZ feasibility plus every layer being a pair.
    pub fn epr_rate1_feasible(&self) -> Result<bool, StructureError> {
        Ok(self.ghz_rate1_feasible()? && self.layers.iter().all(|l| l.len() == 2))
    }

    pub fn inclusion_graph(&self) -> InclusionGraph {
        let mut edges = Vec::new();
        for (a, la) in self.layers.iter().enumerate() {
            for (b, lb) in self.layers.iter().enumerate() {
                if la.is_proper_subset(lb) {
                    edges.push((a, b));
                }
            }
        }
        InclusionGraph {
            layers: self.layers.clone(),
            edges,
        }
    }

    /// `{n-1, n}, {n-2, n-1, n}, ..., {1, ..., n}` over users labelled `1..=n`.
    pub fn nested_chain(n: usize) -> Result<Self, StructureError> {
        let users: Vec<String> = (1..=n).map(|i| i.to_string()).collect();
        let layers: Vec<Vec<String>> = (2..=n).map(|size| users[n - size..].to_vec()).collect();
        Self::new(users, layers)
    }

    /// Every subset of `1..=n` with at least two users.
    pub fn all_multi_user_subsets(n: usize) -> Result<Self, StructureError> {
        let users: Vec<String> = (1..=n).map(|i| i.to_string()).collect();
        let mut layers = Vec::new();
        for mask in 0u32..(1 << n) {
            if mask.count_ones() >= 2 {
                layers.push(
                    (0..n)
                        .filter(|i| mask & (1 << i) != 0)
                        .map(|i| users[i].clone())
                        .collect::<Vec<_>>(),
                );
            }
        }
        Self::new(users, layers)
    }
}

impl fmt::Display for LayeredKeyStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, l) in self.layers.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{l}")?;
        }
        f.write_str("]")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn three_user() -> LayeredKeyStructure {
        LayeredKeyStructure::new(["1", "2", "3"], [vec!["1", "2", "3"], vec!["1", "2"]]).unwrap()
    }

    fn k4_pairs() -> LayeredKeyStructure {
        let pairs = [["1", "2"], ["1", "3"], ["1", "4"], ["2", "3"], ["2", "4"], ["3", "4"]];
        LayeredKeyStructure::new(["1", "2", "3", "4"], pairs).unwrap()
    }

    fn uid(s: &str) -> UserId {
        UserId::from(s)
    }

    #[test]
    fn validate_canonicalizes() {
        let k = LayeredKeyStructure::new(["3", "1", "2"], [vec!["2", "1"], vec!["3", "2", "1"]])
            .unwrap();
        assert_eq!(k.num_layers(), 2);
        assert_eq!(k.users(), &[uid("1"), uid("2"), uid("3")]);
        assert_eq!(k.layers()[0].len(), 3);
        assert_eq!(k.layers()[1].members(), &[uid("1"), uid("2")]);
    }

    #[test]
    fn validate_errors() {
        let dup = LayeredKeyStructure::new(["1", "2"], [vec!["1", "2"], vec!["2", "1"]]);
        assert!(matches!(dup, Err(StructureError::DuplicateLayer(_))));
        let unknown = LayeredKeyStructure::new(["1", "2", "3"], [vec!["1", "4"]]);
        assert_eq!(unknown, Err(StructureError::UnknownUser(uid("4"))));
        let small = LayeredKeyStructure::new(["1", "2"], [vec!["1"]]);
        assert_eq!(small, Err(StructureError::LayerTooSmall(1)));
        let empty = LayeredKeyStructure::new(Vec::<&str>::new(), Vec::<Vec<&str>>::new());
        assert_eq!(empty, Err(StructureError::EmptyUsers));
        let rep = LayeredKeyStructure::new(["1", "2"], [vec!["1", "1", "2"]]);
        assert_eq!(rep, Err(StructureError::RepeatedMember(uid("1"))));
    }

    #[test]
    fn layer_counts() {
        let k = three_user();
        assert_eq!(k.user_layer_count(&uid("1")), Ok(2));
        assert_eq!(k.user_layer_count(&uid("3")), Ok(1));
        assert!(k.user_layer_count(&uid("9")).is_err());
        let bare = LayeredKeyStructure::new(["1", "2"], Vec::<Vec<&str>>::new()).unwrap();
        assert_eq!(bare.user_layer_count(&uid("1")), Ok(0));
    }

    #[test]
    fn neighborhood_graphs() {
        let g = three_user().neighborhood_graph();
        assert_eq!(g.edges.len(), 3);
        let two = LayeredKeyStructure::new(["1", "2", "3", "4"], [["1", "2"], ["3", "4"]]).unwrap();
        assert_eq!(
            two.neighborhood_graph().edges,
            BTreeSet::from([(0, 1), (2, 3)])
        );
        let full = LayeredKeyStructure::new(["a", "b", "c", "d"], [["a", "b", "c", "d"]]).unwrap();
        assert_eq!(full.neighborhood_graph().edges.len(), 6);
    }

    #[test]
    fn components() {
        assert_eq!(three_user().connected_components().len(), 1);
        let two = LayeredKeyStructure::new(["1", "2", "3", "4"], [["1", "2"], ["3", "4"]]).unwrap();
        let comps = two.connected_components();
        assert_eq!(comps.len(), 2);
        assert_eq!(comps[1].users(), &[uid("3"), uid("4")]);
        assert_eq!(comps[1].num_layers(), 1);
        assert_eq!(k4_pairs().connected_components().len(), 1);
    }

    #[test]
    fn partitions() {
        let p = k4_pairs().partition_decomposition().unwrap();
        assert_eq!(p.len(), 3);
        let k = k4_pairs();
        let names: Vec<Vec<String>> = p
            .iter()
            .map(|part| part.layers.iter().map(|&i| k.layers()[i].to_string()).collect())
            .collect();
        assert_eq!(
            names,
            vec![
                vec!["{1,2}", "{3,4}"],
                vec!["{1,3}", "{2,4}"],
                vec!["{1,4}", "{2,3}"]
            ]
        );
        assert!(three_user().partition_decomposition().is_none());
        let single = LayeredKeyStructure::new(["1", "2", "3"], [["1", "2", "3"]]).unwrap();
        assert_eq!(single.partition_decomposition().unwrap().len(), 1);
        // K4 has exactly one grouping into matchings.
        assert_eq!(k4_pairs().all_partition_decompositions().unwrap().len(), 1);
    }

    #[test]
    fn feasibility() {
        assert_eq!(k4_pairs().ghz_rate1_feasible(), Ok(true));
        assert_eq!(k4_pairs().epr_rate1_feasible(), Ok(true));
        assert_eq!(three_user().ghz_rate1_feasible(), Ok(false));
        let single = LayeredKeyStructure::new(["1", "2", "3"], [["1", "2", "3"]]).unwrap();
        assert_eq!(single.ghz_rate1_feasible(), Ok(true));
        assert_eq!(single.epr_rate1_feasible(), Ok(false));
        let tri = LayeredKeyStructure::new(["1", "2", "3"], [["1", "2"], ["2", "3"], ["1", "3"]])
            .unwrap();
        assert_eq!(tri.epr_rate1_feasible(), Ok(false));
        let mut layers: Vec<Vec<&str>> = vec![
            vec!["1", "2"],
            vec!["1", "3"],
            vec!["1", "4"],
            vec!["2", "3"],
            vec!["2", "4"],
            vec!["3", "4"],
        ];
        layers.push(vec!["1", "2", "3", "4"]);
        let plus = LayeredKeyStructure::new(["1", "2", "3", "4"], layers).unwrap();
        assert_eq!(plus.epr_rate1_feasible(), Ok(false));
        let split = LayeredKeyStructure::new(["1", "2", "3", "4"], [["1", "2"], ["3", "4"]]).unwrap();
        assert_eq!(split.ghz_rate1_feasible(), Err(StructureError::NotConnected(2)));
    }

    #[test]
    fn inclusion() {
        let g = three_user().inclusion_graph();
        assert_eq!(g.edges, vec![(1, 0)]);
        let subsets = LayeredKeyStructure::all_multi_user_subsets(4).unwrap();
        let g = subsets.inclusion_graph();
        assert_eq!(subsets.num_layers(), 11);
        // 6 pairs x 3 supersets + 4 triples x 1 superset.
        assert_eq!(g.edges.len(), 22);
        assert!(g.is_acyclic());
        let anti = LayeredKeyStructure::new(["1", "2", "3", "4"], [["1", "2"], ["3", "4"]]).unwrap();
        assert!(anti.inclusion_graph().edges.is_empty());
    }

    #[test]
    fn json_round_trip() {
        let k = three_user();
        let back = LayeredKeyStructure::from_json(&k.to_json()).unwrap();
        assert_eq!(k, back);
        assert!(matches!(
            LayeredKeyStructure::from_json("{\"users\": 3}"),
            Err(StructureError::Parse(_))
        ));
    }

    #[test]
    fn chain_structure() {
        let k = LayeredKeyStructure::nested_chain(4).unwrap();
        assert_eq!(k.num_layers(), 3);
        assert_eq!(k.layer_counts(), vec![1, 2, 3, 3]);
    }
}
