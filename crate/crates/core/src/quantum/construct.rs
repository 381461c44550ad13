//! State construction: GHZ leaves, the flat tensor-product construction, and
//! the two joins used to build states from construction plans.

use std::collections::{BTreeMap, BTreeSet};

use num_complex::Complex64;

use super::state::{
    BasisVector, KeyExtractionMap, KeyValue, KeyedState, LayerDecoder, RegisterLayout, SparseState,
};
use super::symbol::Symbol;
use super::QuantumError;
use crate::keystructure::{Layer, LayeredKeyStructure, UserId};
use crate::planner::{ConstructionPlan, PlanNode};

/// Flat construction keeps every basis vector; refuse beyond this many layers.
pub const FLAT_LAYER_LIMIT: usize = 24;

fn sorted_users(users: &[UserId]) -> Result<Vec<UserId>, QuantumError> {
    let set: BTreeSet<UserId> = users.iter().cloned().collect();
    if set.is_empty() {
        return Err(QuantumError::Layout("no users".into()));
    }
    if set.len() != users.len() {
        return Err(QuantumError::Layout("repeated user".into()));
    }
    Ok(set.into_iter().collect())
}

/// `(1/√d) Σ_i |i…i⟩` over `users`.
pub fn ghz_state(users: &[UserId], d: u32) -> Result<SparseState, QuantumError> {
    if d == 0 {
        return Err(QuantumError::Layout("dimension must be at least 1".into()));
    }
    let users = sorted_users(users)?;
    let n = users.len();
    let alphabet: Vec<Symbol> = (0..d).map(Symbol::Digit).collect();
    let layout = RegisterLayout::new(users.into_iter().map(|u| (u, alphabet.clone())).collect())?;
    let amp = Complex64::new(1.0 / (d as f64).sqrt(), 0.0);
    SparseState::new(layout, (0..d).map(|i| (BasisVector(vec![i; n]), amp)))
}

/// Binary GHZ state on a layer together with its key decoder.
pub fn ghz_leaf(layer: &Layer) -> Result<KeyedState, QuantumError> {
    let state = ghz_state(layer.members(), 2)?;
    let table = vec![KeyValue::Value(0), KeyValue::Value(1)];
    let decoder = LayerDecoder {
        layer: layer.clone(),
        arity: 2,
        tables: layer
            .members()
            .iter()
            .map(|u| (u.clone(), table.clone()))
            .collect(),
    };
    Ok(KeyedState {
        state,
        keys: KeyExtractionMap {
            layers: vec![decoder],
        },
    })
}

/// `|0…0⟩` with one-dimensional registers: the state of an empty structure.
pub fn empty_structure_state(users: &[UserId]) -> Result<SparseState, QuantumError> {
    ghz_state(users, 1)
}

pub fn empty_keyed(users: &[UserId]) -> Result<KeyedState, QuantumError> {
    Ok(KeyedState {
        state: empty_structure_state(users)?,
        keys: KeyExtractionMap::default(),
    })
}

/// One virtual qubit per (user, layer), packed into a digit per user with the
/// user's canonically first layer as the least significant bit.
pub fn flat_construct(k: &LayeredKeyStructure) -> Result<KeyedState, QuantumError> {
    let n_layers = k.num_layers();
    if n_layers > FLAT_LAYER_LIMIT {
        return Err(QuantumError::TooLarge(1u64 << n_layers.min(63)));
    }
    let user_layers: Vec<Vec<usize>> = k.users().iter().map(|u| k.layers_of(u)).collect();
    let layout = RegisterLayout::new(
        k.users()
            .iter()
            .zip(&user_layers)
            .map(|(u, ls)| (u.clone(), (0..1u32 << ls.len()).map(Symbol::Digit).collect()))
            .collect(),
    )?;
    let amp = Complex64::new((0.5f64).powf(n_layers as f64 / 2.0), 0.0);
    let support = (0u64..1 << n_layers).map(|bits| {
        let digits = user_layers
            .iter()
            .map(|ls| {
                ls.iter()
                    .enumerate()
                    .map(|(pos, &i)| (((bits >> i) & 1) as u32) << pos)
                    .sum()
            })
            .collect();
        (BasisVector(digits), amp)
    });
    let state = SparseState::new(layout, support)?;

    let mut keys = KeyExtractionMap::default();
    for (i, layer) in k.layers().iter().enumerate() {
        let mut tables = BTreeMap::new();
        for (u, ls) in k.users().iter().zip(&user_layers) {
            if let Some(pos) = ls.iter().position(|&x| x == i) {
                let table = (0u32..1 << ls.len())
                    .map(|digit| KeyValue::Value((digit >> pos) & 1))
                    .collect();
                tables.insert(u.clone(), table);
            }
        }
        keys.insert(LayerDecoder {
            layer: layer.clone(),
            arity: 2,
            tables,
        })?;
    }
    Ok(KeyedState { state, keys })
}

/// Tensor join: users present in both inputs encode their two registers into
/// one of dimension `d1·d2` with index `i1 + d1·i2`.
pub fn join_tensor(a: &KeyedState, b: &KeyedState) -> Result<KeyedState, QuantumError> {
    let (la, lb) = (a.state.layout(), b.state.layout());
    let users: Vec<UserId> = la
        .users()
        .iter()
        .chain(lb.users())
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let pos: Vec<(Option<usize>, Option<usize>)> = users
        .iter()
        .map(|u| (la.position(u), lb.position(u)))
        .collect();

    let mut entries = Vec::with_capacity(users.len());
    for (u, &(pa, pb)) in users.iter().zip(&pos) {
        let alphabet = match (pa, pb) {
            (Some(pa), Some(pb)) => {
                let (sa, sb) = (la.alphabet(pa), lb.alphabet(pb));
                let mut out = Vec::with_capacity(sa.len() * sb.len());
                for y in sb {
                    for x in sa {
                        out.push(if sa.len() == 1 {
                            y.clone()
                        } else if sb.len() == 1 {
                            x.clone()
                        } else {
                            Symbol::fuse(x, sa.len() as u32, y)
                        });
                    }
                }
                out
            }
            (Some(pa), None) => la.alphabet(pa).to_vec(),
            (None, Some(pb)) => lb.alphabet(pb).to_vec(),
            (None, None) => unreachable!(),
        };
        entries.push((u.clone(), alphabet));
    }
    let layout = RegisterLayout::new(entries)?;

    let mut amps = Vec::with_capacity(a.state.support_size() * b.state.support_size());
    for (va, aa) in a.state.amplitudes() {
        for (vb, ab) in b.state.amplitudes() {
            let v = pos
                .iter()
                .map(|&(pa, pb)| match (pa, pb) {
                    (Some(pa), Some(pb)) => va.0[pa] + la.dim(pa) as u32 * vb.0[pb],
                    (Some(pa), None) => va.0[pa],
                    (None, Some(pb)) => vb.0[pb],
                    (None, None) => unreachable!(),
                })
                .collect();
            amps.push((BasisVector(v), aa * ab));
        }
    }
    let state = SparseState::new(layout, amps)?;

    let mut keys = KeyExtractionMap::default();
    for d in &a.keys.layers {
        let tables = d
            .tables
            .iter()
            .map(|(u, t)| {
                let t = match lb.position(u) {
                    Some(pb) => (0..t.len() * lb.dim(pb)).map(|f| t[f % t.len()]).collect(),
                    None => t.clone(),
                };
                (u.clone(), t)
            })
            .collect();
        keys.insert(LayerDecoder {
            layer: d.layer.clone(),
            arity: d.arity,
            tables,
        })?;
    }
    for d in &b.keys.layers {
        let tables = d
            .tables
            .iter()
            .map(|(u, t)| {
                let t = match la.position(u) {
                    Some(pa) => {
                        let d1 = la.dim(pa);
                        (0..d1 * t.len()).map(|f| t[f / d1]).collect()
                    }
                    None => t.clone(),
                };
                (u.clone(), t)
            })
            .collect();
        keys.insert(LayerDecoder {
            layer: d.layer.clone(),
            arity: d.arity,
            tables,
        })?;
    }
    Ok(KeyedState { state, keys })
}

/// Superposition join: an equal superposition of the branch states placed in
/// locally distinguishable subspaces. A user's new alphabet walks the branches
/// in order, contributing the branch's symbols (tagged with the branch index)
/// when the user takes part in it and a single `⊥b` otherwise. The result
/// carries a new key on `parent_users` decoding the branch index.
pub fn join_superpose(
    branches: &[KeyedState],
    parent_users: &[UserId],
) -> Result<KeyedState, QuantumError> {
    let m = branches.len();
    if m < 2 {
        return Err(QuantumError::TooFewBranches(m));
    }
    let parent = Layer::new(parent_users.iter().cloned())
        .map_err(|e| QuantumError::Layout(e.to_string()))?;
    let union: BTreeSet<&UserId> = branches
        .iter()
        .flat_map(|b| b.state.users().iter())
        .collect();
    if union.len() != parent.len() || !parent.members().iter().all(|u| union.contains(u)) {
        return Err(QuantumError::UserSetMismatch);
    }
    let users = parent.members();

    // offsets[u][b]: first index of branch b's block in user u's alphabet.
    let mut offsets = vec![vec![0u32; m]; users.len()];
    let mut entries = Vec::with_capacity(users.len());
    for (k, u) in users.iter().enumerate() {
        let mut alphabet = Vec::new();
        for (b, br) in branches.iter().enumerate() {
            offsets[k][b] = alphabet.len() as u32;
            match br.state.layout().position(u) {
                Some(p) => alphabet.extend(
                    br.state
                        .layout()
                        .alphabet(p)
                        .iter()
                        .map(|s| Symbol::branch(b as u32, s.clone())),
                ),
                None => alphabet.push(Symbol::Bottom { branch: b as u32 }),
            }
        }
        entries.push((u.clone(), alphabet));
    }
    let layout = RegisterLayout::new(entries)?;
    let dims = layout.dims();

    let scale = 1.0 / (m as f64).sqrt();
    let mut amps = Vec::new();
    for (b, br) in branches.iter().enumerate() {
        let bl = br.state.layout();
        let positions: Vec<Option<usize>> = users.iter().map(|u| bl.position(u)).collect();
        for (v, a) in br.state.amplitudes() {
            let idx = positions
                .iter()
                .enumerate()
                .map(|(k, p)| offsets[k][b] + p.map_or(0, |p| v.0[p]))
                .collect();
            amps.push((BasisVector(idx), a * scale));
        }
    }
    let state = SparseState::new(layout, amps)?;

    let mut keys = KeyExtractionMap::default();
    for (b, br) in branches.iter().enumerate() {
        for d in &br.keys.layers {
            let tables = d
                .tables
                .iter()
                .map(|(u, t)| {
                    let k = users.binary_search(u).expect("member of parent");
                    let mut table = vec![KeyValue::Bottom; dims[k]];
                    let off = offsets[k][b] as usize;
                    table[off..off + t.len()].copy_from_slice(t);
                    (u.clone(), table)
                })
                .collect();
            keys.insert(LayerDecoder {
                layer: d.layer.clone(),
                arity: d.arity,
                tables,
            })?;
        }
    }
    let tables = users
        .iter()
        .enumerate()
        .map(|(k, u)| {
            let mut table = Vec::with_capacity(dims[k]);
            for b in 0..m {
                let end = if b + 1 < m {
                    offsets[k][b + 1] as usize
                } else {
                    dims[k]
                };
                table.extend(
                    std::iter::repeat_n(KeyValue::Value(b as u32), end - offsets[k][b] as usize),
                );
            }
            (u.clone(), table)
        })
        .collect();
    keys.insert(LayerDecoder {
        layer: parent,
        arity: m as u32,
        tables,
    })?;
    Ok(KeyedState { state, keys })
}

/// Builds the state of one plan tree.
pub fn build_node(node: &PlanNode) -> Result<KeyedState, QuantumError> {
    match node {
        PlanNode::Leaf { layer } => ghz_leaf(layer),
        PlanNode::Empty { users } => empty_keyed(users),
        PlanNode::Superpose { layer, children } => {
            let built = children
                .iter()
                .map(build_node)
                .collect::<Result<Vec<_>, _>>()?;
            join_superpose(&built, layer.members())
        }
    }
}

/// Folds a plan: every tree is built bottom-up and the trees are tensor-joined
/// in plan order. Users outside every tree get a one-dimensional register.
pub fn build_from_plan(plan: &ConstructionPlan) -> Result<KeyedState, QuantumError> {
    let mut acc: Option<KeyedState> = None;
    for root in plan.roots() {
        let built = build_node(root)?;
        acc = Some(match acc {
            None => built,
            Some(prev) => join_tensor(&prev, &built)?,
        });
    }
    let covered: BTreeSet<UserId> = acc
        .as_ref()
        .map(|k| k.state.users().iter().cloned().collect())
        .unwrap_or_default();
    let missing: Vec<UserId> = plan
        .users()
        .iter()
        .filter(|u| !covered.contains(*u))
        .cloned()
        .collect();
    if missing.is_empty() {
        return acc.ok_or_else(|| QuantumError::Layout("plan has no users".into()));
    }
    let pad = empty_keyed(&missing)?;
    match acc {
        None => Ok(pad),
        Some(prev) => join_tensor(&prev, &pad),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keystructure::LayeredKeyStructure;

    fn u(s: &[&str]) -> Vec<UserId> {
        s.iter().map(|&x| UserId::from(x)).collect()
    }

    fn bv(v: &[u32]) -> BasisVector {
        BasisVector(v.to_vec())
    }

    fn three_user() -> LayeredKeyStructure {
        LayeredKeyStructure::new(["1", "2", "3"], [vec!["1", "2", "3"], vec!["1", "2"]]).unwrap()
    }

    #[test]
    fn ghz_examples() {
        let epr = ghz_state(&u(&["1", "2"]), 2).unwrap();
        let h = 0.5f64.sqrt();
        assert!((epr.amplitude(&bv(&[0, 0])).re - h).abs() < 1e-12);
        assert!((epr.amplitude(&bv(&[1, 1])).re - h).abs() < 1e-12);
        assert_eq!(epr.support_size(), 2);
        let trivial = ghz_state(&u(&["1", "2", "3"]), 1).unwrap();
        assert_eq!(trivial.dims(), vec![1, 1, 1]);
        assert_eq!(trivial.amplitude(&bv(&[0, 0, 0])).re, 1.0);
    }

    #[test]
    fn flat_three_user_matches_four_term_state() {
        let ks = flat_construct(&three_user()).unwrap();
        assert_eq!(ks.state.dims(), vec![4, 4, 2]);
        for v in [[0, 0, 0], [1, 1, 1], [2, 2, 0], [3, 3, 1]] {
            assert!((ks.state.amplitude(&bv(&v)).re - 0.5).abs() < 1e-12);
        }
        assert_eq!(ks.state.support_size(), 4);
    }

    #[test]
    fn flat_edge_cases() {
        let one = LayeredKeyStructure::new(["1", "2"], [["1", "2"]]).unwrap();
        let ks = flat_construct(&one).unwrap();
        assert!(ks
            .state
            .approx_eq(&ghz_state(&u(&["1", "2"]), 2).unwrap(), 1e-12));
        let none = LayeredKeyStructure::new(["1", "2"], Vec::<Vec<&str>>::new()).unwrap();
        let ks = flat_construct(&none).unwrap();
        assert_eq!(ks.state.dims(), vec![1, 1]);
        assert!(ks.keys.layers.is_empty());
    }

    #[test]
    fn tensor_of_ghz_leaves_is_flat() {
        let k = three_user();
        let a = ghz_leaf(&k.layers()[0]).unwrap();
        let b = ghz_leaf(&k.layers()[1]).unwrap();
        let joined = join_tensor(&a, &b).unwrap();
        let flat = flat_construct(&k).unwrap();
        assert!(joined.state.approx_eq(&flat.state, 1e-9));
        assert_eq!(joined.keys, flat.keys);
    }

    #[test]
    fn tensor_identities() {
        let a = ghz_leaf(&Layer::new(["1", "2"]).unwrap()).unwrap();
        let b = ghz_leaf(&Layer::new(["3", "4"]).unwrap()).unwrap();
        let j = join_tensor(&a, &b).unwrap();
        assert_eq!(j.state.dims(), vec![2, 2, 2, 2]);
        let e = empty_keyed(&u(&["1", "2"])).unwrap();
        let j = join_tensor(&a, &e).unwrap();
        assert!(j.state.approx_eq(&a.state, 1e-12));
        let j = join_tensor(&e, &a).unwrap();
        assert!(j.state.approx_eq(&a.state, 1e-12));
    }

    #[test]
    fn superpose_builds_tradeoff_state() {
        let epr = ghz_leaf(&Layer::new(["1", "2"]).unwrap()).unwrap();
        let empty = empty_keyed(&u(&["1", "2", "3"])).unwrap();
        let j = join_superpose(&[epr, empty], &u(&["1", "2", "3"])).unwrap();
        assert_eq!(j.state.dims(), vec![3, 3, 2]);
        let h = 0.5f64.sqrt();
        assert!((j.state.amplitude(&bv(&[0, 0, 0])).re - 0.5).abs() < 1e-12);
        assert!((j.state.amplitude(&bv(&[1, 1, 0])).re - 0.5).abs() < 1e-12);
        assert!((j.state.amplitude(&bv(&[2, 2, 1])).re - h).abs() < 1e-12);
        let names: Vec<String> = j.state.layout().alphabet(2).iter().map(|s| s.to_string()).collect();
        assert_eq!(names, vec!["⊥0", "1.0"]);
    }

    #[test]
    fn superpose_of_empties_is_ghz() {
        let users = u(&["a", "b", "c"]);
        for m in [2usize, 3] {
            let branches: Vec<KeyedState> =
                (0..m).map(|_| empty_keyed(&users).unwrap()).collect();
            let j = join_superpose(&branches, &users).unwrap();
            let ghz = ghz_state(&users, m as u32).unwrap();
            assert!(j.state.amplitudes_close(&ghz, 1e-12));
            assert_eq!(j.keys.layers[0].arity, m as u32);
        }
    }

    #[test]
    fn superpose_errors() {
        let e = empty_keyed(&u(&["1", "2"])).unwrap();
        assert_eq!(
            join_superpose(std::slice::from_ref(&e), &u(&["1", "2"])),
            Err(QuantumError::TooFewBranches(1))
        );
        assert_eq!(
            join_superpose(&[e.clone(), e], &u(&["1", "2", "3"])),
            Err(QuantumError::UserSetMismatch)
        );
    }
}
