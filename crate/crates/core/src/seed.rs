//! Seed derivation. Every random stream in a run is derived from the master
//! seed and a fixed stream tag, so streams never depend on consumption
//! order elsewhere.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named random streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Data = 1,
    Spurious = 2,
    Split = 3,
    Init = 4,
    Batches = 5,
    Stage2 = 6,
    Stage3 = 7,
    Refine = 8,
}

impl Stream {
    pub const ALL: [Stream; 8] = [
        Stream::Data,
        Stream::Spurious,
        Stream::Split,
        Stream::Init,
        Stream::Batches,
        Stream::Stage2,
        Stream::Stage3,
        Stream::Refine,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stream::Data => "data",
            Stream::Spurious => "spurious",
            Stream::Split => "split",
            Stream::Init => "init",
            Stream::Batches => "batches",
            Stream::Stage2 => "stage2",
            Stream::Stage3 => "stage3",
            Stream::Refine => "refine",
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `splitmix64(parent ⊕ splitmix64(tag))`.
pub fn derive(parent: u64, tag: u64) -> u64 {
    splitmix64(parent ^ splitmix64(tag))
}

pub fn stream_seed(master: u64, stream: Stream) -> u64 {
    derive(master, stream as u64)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `(name, seed)` for every stream, for printing.
pub fn seed_table(master: u64) -> Vec<(&'static str, u64)> {
    Stream::ALL
        .iter()
        .map(|&s| (s.name(), stream_seed(master, s)))
        .collect()
}
