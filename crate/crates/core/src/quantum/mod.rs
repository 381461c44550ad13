//! Pure states over user registers of heterogeneous dimension, and the
//! constructions that realize a layered key structure.

mod construct;
mod state;
mod symbol;

pub use construct::{
    build_from_plan, build_node, empty_keyed, empty_structure_state, flat_construct, ghz_leaf,
    ghz_state, join_superpose, join_tensor, FLAT_LAYER_LIMIT,
};
pub use state::{
    dense_index, AmplitudeEntry, BasisVector, DenseDistribution, KeyExtractionMap, KeyValue,
    KeyedState, LayerDecoder, RegisterLayout, SparseState, StateDump, DENSE_LIMIT, NORM_TOLERANCE,
};
pub use symbol::{Symbol, SymbolParseError};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuantumError {
    #[error("invalid register layout: {0}")]
    Layout(String),
    #[error("state is not normalized (norm² = {0})")]
    NotNormalized(f64),
    #[error("product dimension {0} exceeds the dense limit")]
    TooLarge(u64),
    #[error("superposition needs at least two branches, got {0}")]
    TooFewBranches(usize),
    #[error("parent users differ from the union of branch users")]
    UserSetMismatch,
    #[error("layer {0} is implemented twice")]
    DuplicateLayer(String),
}
