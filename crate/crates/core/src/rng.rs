//! Counter-addressed random streams. Every stream is derived from
//! `(master seed, round, lane)` alone, so results do not depend on the order
//! in which rounds are evaluated.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Which consumer a stream belongs to within a round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lane {
    /// The source: noise decisions and joint outcome sampling.
    Source,
    /// Basis choices and local coins of one user (by user index).
    User(usize),
    /// Sacrifice selection for one layer (by layer index).
    Sacrifice(usize),
}

impl Lane {
    fn code(self) -> u64 {
        match self {
            Lane::Source => 0,
            Lane::User(u) => 1 + 2 * u as u64,
            Lane::Sacrifice(l) => 2 + 2 * l as u64,
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The generator for one `(seed, round, lane)` address.
pub fn stream(seed: u64, round: u64, lane: Lane) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let words = [
        splitmix(seed),
        splitmix(round ^ 0x5851_F42D_4C95_7F2D),
        splitmix(lane.code() ^ 0x1405_7B7E_F767_814F),
        splitmix(seed ^ round.rotate_left(21) ^ lane.code().rotate_left(42)),
    ];
    for (chunk, w) in key.chunks_exact_mut(8).zip(words) {
        chunk.copy_from_slice(&w.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
