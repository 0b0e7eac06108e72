//! Deterministic random streams.
//!
//! Every chain, dataset shuffle and episode draws from its own ChaCha8 stream
//! derived from a master seed and a stream index, so runs are reproducible
//! regardless of execution order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The random stream type used throughout the simulator.
pub type SimRng = ChaCha8Rng;

/// Named sub-streams. Keeps unrelated consumers of the same master seed apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Chain = 1,
    Devices = 2,
    Dataset = 3,
    Split = 4,
    TrainEpisode = 5,
    TestEpisode = 6,
    Characterize = 7,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a master seed with an index into a new, well-separated seed.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master) ^ splitmix64(index.wrapping_mul(0xD6E8_FEB8_6659_FD93)))
}

pub fn stream_seed(master: u64, stream: Stream, index: u64) -> u64 {
    derive_seed(derive_seed(master, stream as u64), index)
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

pub fn stream_rng(master: u64, stream: Stream, index: u64) -> SimRng {
    rng_from_seed(stream_seed(master, stream, index))
}

/// Uniform draw on (0, 1]. Consumes one `f64` from the stream.
pub fn uniform_open_closed<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}
