use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::symbol::Symbol;
use super::QuantumError;
use crate::keystructure::{Layer, UserId};

/// Largest product dimension [`SparseState::dense_distribution`] expands.
pub const DENSE_LIMIT: u64 = 1 << 20;

/// Normalization tolerance for constructed states.
pub const NORM_TOLERANCE: f64 = 1e-12;

/// Per-user ordered alphabets. Users are kept in label order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisterLayout {
    users: Vec<UserId>,
    alphabets: Vec<Vec<Symbol>>,
}

impl RegisterLayout {
    pub fn new(entries: Vec<(UserId, Vec<Symbol>)>) -> Result<Self, QuantumError> {
        let mut entries = entries;
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(QuantumError::Layout(format!("user `{}` listed twice", w[0].0)));
            }
        }
        for (u, alpha) in &entries {
            if alpha.is_empty() {
                return Err(QuantumError::Layout(format!("user `{u}` has an empty alphabet")));
            }
            let mut sorted = alpha.clone();
            sorted.sort();
            if sorted.windows(2).any(|w| w[0] == w[1]) {
                return Err(QuantumError::Layout(format!("user `{u}` has repeated symbols")));
            }
        }
        let (users, alphabets) = entries.into_iter().unzip();
        Ok(RegisterLayout { users, alphabets })
    }

    pub fn users(&self) -> &[UserId] {
        &self.users
    }

    pub fn alphabet(&self, user_pos: usize) -> &[Symbol] {
        &self.alphabets[user_pos]
    }

    pub fn alphabets(&self) -> &[Vec<Symbol>] {
        &self.alphabets
    }

    pub fn position(&self, user: &UserId) -> Option<usize> {
        self.users.binary_search(user).ok()
    }

    pub fn dim(&self, user_pos: usize) -> usize {
        self.alphabets[user_pos].len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.alphabets.iter().map(Vec::len).collect()
    }

    /// Product of all local dimensions, saturating.
    pub fn total_dim(&self) -> u64 {
        self.alphabets
            .iter()
            .fold(1u64, |acc, a| acc.saturating_mul(a.len() as u64))
    }

    pub fn symbol_index(&self, user_pos: usize, sym: &Symbol) -> Option<usize> {
        self.alphabets[user_pos].iter().position(|s| s == sym)
    }

    pub fn symbols_of(&self, v: &BasisVector) -> Vec<Symbol> {
        v.0.iter()
            .enumerate()
            .map(|(u, &i)| self.alphabets[u][i as usize].clone())
            .collect()
    }
}

/// One symbol index per user, in layout order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BasisVector(pub Vec<u32>);

/// Pure state stored as its nonzero amplitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseState {
    layout: RegisterLayout,
    amplitudes: BTreeMap<BasisVector, Complex64>,
}

impl SparseState {
    /// Builds a state, dropping exact zeros and checking indices and norm.
    pub fn new(
        layout: RegisterLayout,
        amplitudes: impl IntoIterator<Item = (BasisVector, Complex64)>,
    ) -> Result<Self, QuantumError> {
        let mut amps = BTreeMap::new();
        for (v, a) in amplitudes {
            if v.0.len() != layout.users.len() {
                return Err(QuantumError::Layout("basis vector length mismatch".into()));
            }
            for (u, &i) in v.0.iter().enumerate() {
                if i as usize >= layout.dim(u) {
                    return Err(QuantumError::Layout(format!(
                        "symbol index {i} out of range for user `{}`",
                        layout.users[u]
                    )));
                }
            }
            if a != Complex64::new(0.0, 0.0) {
                *amps.entry(v).or_insert(Complex64::new(0.0, 0.0)) += a;
            }
        }
        amps.retain(|_, a| a.norm_sqr() > 0.0);
        let state = SparseState {
            layout,
            amplitudes: amps,
        };
        let n = state.norm_sqr();
        if (n - 1.0).abs() > NORM_TOLERANCE {
            return Err(QuantumError::NotNormalized(n));
        }
        Ok(state)
    }

    pub fn layout(&self) -> &RegisterLayout {
        &self.layout
    }

    pub fn users(&self) -> &[UserId] {
        self.layout.users()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.layout.dims()
    }

    pub fn amplitudes(&self) -> &BTreeMap<BasisVector, Complex64> {
        &self.amplitudes
    }

    pub fn amplitude(&self, v: &BasisVector) -> Complex64 {
        self.amplitudes
            .get(v)
            .copied()
            .unwrap_or(Complex64::new(0.0, 0.0))
    }

    pub fn support_size(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.values().map(|a| a.norm_sqr()).sum()
    }

    /// Amplitude maps agree entry by entry within `tol`, with equal layouts.
    pub fn approx_eq(&self, other: &SparseState, tol: f64) -> bool {
        self.layout == other.layout && self.amplitudes_close(other, tol)
    }

    /// Compares amplitudes by basis indices only, ignoring symbol labels.
    pub fn amplitudes_close(&self, other: &SparseState, tol: f64) -> bool {
        if self.layout.dims() != other.layout.dims() || self.layout.users != other.layout.users {
            return false;
        }
        let keys: std::collections::BTreeSet<&BasisVector> =
            self.amplitudes.keys().chain(other.amplitudes.keys()).collect();
        keys.into_iter()
            .all(|k| (self.amplitude(k) - other.amplitude(k)).norm() <= tol)
    }

    /// Exact outcome probabilities over the full product alphabet.
    pub fn dense_distribution(&self) -> Result<DenseDistribution, QuantumError> {
        let total = self.layout.total_dim();
        if total > DENSE_LIMIT {
            return Err(QuantumError::TooLarge(total));
        }
        let dims = self.layout.dims();
        let mut probs = vec![0.0; total as usize];
        for (v, a) in &self.amplitudes {
            probs[dense_index(&dims, v)] += a.norm_sqr();
        }
        Ok(DenseDistribution { dims, probs })
    }

    pub fn to_dump(&self) -> StateDump {
        StateDump {
            users: self.layout.users.clone(),
            alphabets: self.layout.alphabets.clone(),
            amplitudes: self
                .amplitudes
                .iter()
                .map(|(v, a)| AmplitudeEntry {
                    basis: self.layout.symbols_of(v),
                    re: a.re,
                    im: a.im,
                })
                .collect(),
        }
    }

    pub fn from_dump(dump: &StateDump) -> Result<Self, QuantumError> {
        if dump.users.len() != dump.alphabets.len() {
            return Err(QuantumError::Layout("users and alphabets differ in length".into()));
        }
        let layout = RegisterLayout::new(
            dump.users
                .iter()
                .cloned()
                .zip(dump.alphabets.iter().cloned())
                .collect(),
        )?;
        // Dump users may be listed in any order; map to layout positions.
        let order: Vec<usize> = dump
            .users
            .iter()
            .map(|u| layout.position(u).expect("user in layout"))
            .collect();
        let mut amps = Vec::new();
        for e in &dump.amplitudes {
            if e.basis.len() != order.len() {
                return Err(QuantumError::Layout("basis entry length mismatch".into()));
            }
            let mut idx = vec![0u32; order.len()];
            for (k, sym) in e.basis.iter().enumerate() {
                let pos = order[k];
                idx[pos] = layout.symbol_index(pos, sym).ok_or_else(|| {
                    QuantumError::Layout(format!("symbol `{sym}` not in alphabet"))
                })? as u32;
            }
            amps.push((BasisVector(idx), Complex64::new(e.re, e.im)));
        }
        SparseState::new(layout, amps)
    }
}

/// Row-major index: the first user is the most significant digit.
pub fn dense_index(dims: &[usize], v: &BasisVector) -> usize {
    v.0.iter()
        .zip(dims)
        .fold(0usize, |acc, (&i, &d)| acc * d + i as usize)
}

/// Probability table over every basis vector of a layout.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseDistribution {
    pub dims: Vec<usize>,
    pub probs: Vec<f64>,
}

impl DenseDistribution {
    pub fn prob(&self, v: &BasisVector) -> f64 {
        self.probs[dense_index(&self.dims, v)]
    }

    pub fn basis_vector(&self, mut index: usize) -> BasisVector {
        let mut out = vec![0u32; self.dims.len()];
        for (k, &d) in self.dims.iter().enumerate().rev() {
            out[k] = (index % d) as u32;
            index /= d;
        }
        BasisVector(out)
    }
}

/// JSON state dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateDump {
    pub users: Vec<UserId>,
    pub alphabets: Vec<Vec<Symbol>>,
    pub amplitudes: Vec<AmplitudeEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeEntry {
    pub basis: Vec<Symbol>,
    pub re: f64,
    pub im: f64,
}

/// A decoded key symbol: a value in `0..arity`, or no key this round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum KeyValue {
    Value(u32),
    Bottom,
}

impl KeyValue {
    pub fn value(self) -> Option<u32> {
        match self {
            KeyValue::Value(v) => Some(v),
            KeyValue::Bottom => None,
        }
    }
}

/// Per-layer decoding tables: for each member, the key value carried by
/// each of their register symbols.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDecoder {
    pub layer: Layer,
    /// Size of the key alphabet.
    pub arity: u32,
    pub tables: BTreeMap<UserId, Vec<KeyValue>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyExtractionMap {
    /// Sorted by canonical layer order.
    pub layers: Vec<LayerDecoder>,
}

impl KeyExtractionMap {
    pub fn get(&self, layer: &Layer) -> Option<&LayerDecoder> {
        self.layers
            .binary_search_by(|d| d.layer.cmp(layer))
            .ok()
            .map(|i| &self.layers[i])
    }

    pub(crate) fn insert(&mut self, decoder: LayerDecoder) -> Result<(), QuantumError> {
        match self.layers.binary_search_by(|d| d.layer.cmp(&decoder.layer)) {
            Ok(_) => Err(QuantumError::DuplicateLayer(decoder.layer.to_string())),
            Err(pos) => {
                self.layers.insert(pos, decoder);
                Ok(())
            }
        }
    }
}

/// A state together with the map turning its outcomes into layer keys.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyedState {
    pub state: SparseState,
    pub keys: KeyExtractionMap,
}
