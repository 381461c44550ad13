//! Layered quantum key distribution toolkit.

pub mod keystructure;
pub mod measurement;
pub mod planner;
pub mod protocol;
pub mod quantum;
pub mod rates;
pub mod rng;
pub mod stats;
