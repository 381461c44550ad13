//! Measurement checks against dense linear-algebra oracles written here.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_1_SQRT_2;

use lqkd::keystructure::{Layer, LayeredKeyStructure, UserId};
use lqkd::measurement::{measure_flat_pauli, NodeSetting, PreparedState};
use lqkd::planner::{ConstructionPlan, PlanNode};
use lqkd::quantum::{dense_index, BasisVector, SparseState};
use lqkd::stats::total_variation;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Mat = Vec<Vec<Complex64>>;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn dense(state: &SparseState) -> Vec<Complex64> {
    let dims = state.dims();
    let mut v = vec![c(0.0, 0.0); dims.iter().product()];
    for (b, a) in state.amplitudes() {
        v[dense_index(&dims, b)] = *a;
    }
    v
}

/// Applies `m` to register `axis` of a row-major vector (first register most
/// significant).
fn apply(v: &[Complex64], dims: &[usize], axis: usize, m: &Mat) -> Vec<Complex64> {
    let inner: usize = dims[axis + 1..].iter().product();
    let d = dims[axis];
    let mut out = vec![c(0.0, 0.0); v.len()];
    for (i, amp) in v.iter().enumerate() {
        if amp.norm_sqr() == 0.0 {
            continue;
        }
        let digit = (i / inner) % d;
        let base = i - digit * inner;
        for (row, mrow) in m.iter().enumerate() {
            out[base + row * inner] += mrow[digit] * amp;
        }
    }
    out
}

fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn pauli(s: NodeSetting) -> Mat {
    match s {
        NodeSetting::X => vec![vec![c(0., 0.), c(1., 0.)], vec![c(1., 0.), c(0., 0.)]],
        NodeSetting::Y => vec![vec![c(0., 0.), c(0., -1.)], vec![c(0., 1.), c(0., 0.)]],
        NodeSetting::Z => vec![vec![c(1., 0.), c(0., 0.)], vec![c(0., 0.), c(-1., 0.)]],
    }
}

/// Rows are the ⟨+|, ⟨−| eigenvectors; z keeps the computational basis.
fn eigen_rows(s: NodeSetting) -> Mat {
    let h = FRAC_1_SQRT_2;
    match s {
        NodeSetting::X => vec![vec![c(h, 0.), c(h, 0.)], vec![c(h, 0.), c(-h, 0.)]],
        NodeSetting::Y => vec![vec![c(h, 0.), c(0., -h)], vec![c(h, 0.), c(0., h)]],
        NodeSetting::Z => vec![vec![c(1., 0.), c(0., 0.)], vec![c(0., 0.), c(1., 0.)]],
    }
}

fn kron(a: &Mat, b: &Mat) -> Mat {
    let (n, m) = (a.len(), b.len());
    let mut out = vec![vec![c(0., 0.); n * m]; n * m];
    for i in 0..n {
        for j in 0..n {
            for k in 0..m {
                for l in 0..m {
                    out[i * m + k][j * m + l] = a[i][j] * b[k][l];
                }
            }
        }
    }
    out
}

/// Qubit operators listed least-significant first combined into one
/// register matrix.
fn register_op(ops: &[Mat]) -> Mat {
    let mut m = vec![vec![c(1., 0.)]];
    for op in ops.iter().rev() {
        m = kron(&m, op);
    }
    m
}

fn users(names: &[&str]) -> Vec<UserId> {
    names.iter().map(|s| UserId::from(*s)).collect()
}

fn ghz3() -> PreparedState {
    let k = LayeredKeyStructure::new(["1", "2", "3"], [vec!["1", "2", "3"]]).unwrap();
    PreparedState::flat(&k).unwrap()
}

#[test]
fn ghz_parity_law() {
    use NodeSetting::*;
    let p = ghz3();
    let psi = dense(p.state());
    let dims = p.state().dims();
    for a in [X, Y] {
        for b in [X, Y] {
            for d in [X, Y] {
                let s = [a, b, d];
                let mut v = psi.clone();
                for (axis, &st) in s.iter().enumerate() {
                    v = apply(&v, &dims, axis, &pauli(st));
                }
                let oracle = inner(&psi, &v).re;
                let ys = s.iter().filter(|&&x| x == Y).count();
                let law = match ys {
                    0 => 1.0,
                    2 => -1.0,
                    _ => 0.0,
                };
                assert!((oracle - law).abs() < 1e-12);
                let got = p.parity_expectation(0, &s).unwrap();
                assert!((got - oracle).abs() < 1e-12, "{s:?}: {got} vs {oracle}");
            }
        }
    }
}

#[test]
fn sampled_ghz_parities_follow_law() {
    use NodeSetting::*;
    let p = ghz3();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (s, want) in [([X, X, X], 1.0), ([X, Y, Y], -1.0), ([Y, Y, X], -1.0), ([X, X, Y], 0.0)] {
        let n = 4000;
        let mean: f64 = (0..n)
            .map(|_| p.sample_parity(0, &s, &mut rng).unwrap().unwrap() as f64)
            .sum::<f64>()
            / n as f64;
        assert!((mean - want).abs() < 4.0 / (n as f64).sqrt(), "{s:?}: {mean}");
    }
}

/// Readout distribution of local Pauli measurements on a flat state,
/// sampled against `|U ψ|²` computed densely.
fn check_flat_pauli(k: &LayeredKeyStructure, seed: u64) {
    let p = PreparedState::flat(k).unwrap();
    let psi = dense(p.state());
    let dims = p.state().dims();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let choices = [NodeSetting::X, NodeSetting::Y, NodeSetting::Z];
    for _ in 0..4 {
        let settings: Vec<Vec<NodeSetting>> = (0..k.users().len())
            .map(|u| {
                (0..p.user_layers(u).len())
                    .map(|_| choices[rng.random_range(0..3)])
                    .collect()
            })
            .collect();
        let mut v = psi.clone();
        for (u, s) in settings.iter().enumerate() {
            let ops: Vec<Mat> = s.iter().map(|&x| eigen_rows(x)).collect();
            v = apply(&v, &dims, u, &register_op(&ops));
        }
        let mut exact = BTreeMap::new();
        for (i, a) in v.iter().enumerate() {
            if a.norm_sqr() > 1e-15 {
                exact.insert(i, a.norm_sqr());
            }
        }
        let n = 20_000;
        let mut freq: BTreeMap<usize, f64> = BTreeMap::new();
        for _ in 0..n {
            let bits = measure_flat_pauli(&p, &settings, &mut rng).unwrap();
            let readout: Vec<u32> = bits
                .iter()
                .map(|b| b.iter().enumerate().map(|(i, &x)| (x as u32) << i).sum())
                .collect();
            *freq.entry(dense_index(&dims, &BasisVector(readout))).or_default() += 1.0 / n as f64;
        }
        let tv = total_variation(&exact, &freq);
        let bound = 3.0 * (exact.len() as f64 / n as f64).sqrt();
        assert!(tv < bound, "{settings:?}: tv {tv} > {bound}");
    }
}

#[test]
fn flat_pauli_distribution_matches_dense() {
    let three_user = LayeredKeyStructure::new(["1", "2", "3"], [vec!["1", "2", "3"], vec!["1", "2"]]).unwrap();
    check_flat_pauli(&three_user, 1);
    check_flat_pauli(&LayeredKeyStructure::all_multi_user_subsets(3).unwrap(), 2);
}

#[test]
fn lifted_parity_on_nested_state() {
    // Hand-built oracle: the root observable swaps each user's first
    // branch-0 symbol with their branch-1 symbol, so ⟨O⊗O⊗O⟩ picks up the
    // cross term between |000⟩ and |221⟩ only: 2 · ½ · √½.
    let k = LayeredKeyStructure::new(["1", "2", "3"], [vec!["1", "2", "3"], vec!["1", "2"]]).unwrap();
    let p = PreparedState::new(&ConstructionPlan::greedy_tradeoff(&k, 2).unwrap()).unwrap();
    let psi = dense(p.state());
    let dims = p.state().dims();
    let swap3 = vec![
        vec![c(0., 0.), c(0., 0.), c(1., 0.)],
        vec![c(0., 0.), c(0., 0.), c(0., 0.)],
        vec![c(1., 0.), c(0., 0.), c(0., 0.)],
    ];
    let swap2 = pauli(NodeSetting::X);
    let mut v = psi.clone();
    v = apply(&v, &dims, 0, &swap3);
    v = apply(&v, &dims, 1, &swap3);
    v = apply(&v, &dims, 2, &swap2);
    let oracle = inner(&psi, &v).re;
    assert!((oracle - FRAC_1_SQRT_2).abs() < 1e-12);
    let xs = [NodeSetting::X; 3];
    assert!((p.parity_expectation(0, &xs).unwrap() - oracle).abs() < 1e-12);

    // The inner {1,2} leaf sits under branch 0 (reached with probability ½)
    // and is a perfect GHZ pair there.
    let xx = [NodeSetting::X; 2];
    assert!((p.reach_probability(1) - 0.5).abs() < 1e-15);
    assert!((p.ideal_test_parity(1, &xx).unwrap() - 1.0).abs() < 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 4000;
    let mean = (0..n)
        .map(|_| p.sample_parity(0, &xs, &mut rng).unwrap().unwrap() as f64)
        .sum::<f64>()
        / n as f64;
    assert!((mean - FRAC_1_SQRT_2).abs() < 4.0 / (n as f64).sqrt());
}

#[test]
fn superposed_empties_behave_like_ghz() {
    let ab = users(&["a", "b"]);
    let layer = Layer::new(ab.clone()).unwrap();
    let node = PlanNode::Superpose {
        layer,
        children: vec![PlanNode::Empty { users: ab.clone() }, PlanNode::Empty { users: ab.clone() }],
    };
    let p = PreparedState::new(&ConstructionPlan::new(ab, vec![node]).unwrap()).unwrap();
    let x = p.parity_expectation(0, &[NodeSetting::X, NodeSetting::X]).unwrap();
    let y = p.parity_expectation(0, &[NodeSetting::Y, NodeSetting::Y]).unwrap();
    assert!((x - 1.0).abs() < 1e-12);
    assert!((y + 1.0).abs() < 1e-12);
}
