//! Seed-derived random substreams.
//!
//! Every Monte Carlo unit of work (a simulated trial, a sampled bit sequence)
//! owns a ChaCha8 stream selected by `(seed, domain, index)`. Results are a
//! function of the seed and the unit index only, so any scheduling of the
//! units across threads reproduces the same numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent purposes inside one experiment get disjoint stream ranges.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamDomain {
    Trial = 1,
    SequenceSample = 2,
    GainSample = 3,
    Realization = 4,
    SecondHop = 5,
}

/// Returns the generator for unit `index` of `domain` under the master `seed`.
pub fn substream(seed: u64, domain: StreamDomain, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // 64-bit stream id: top byte selects the domain, the rest the unit.
    debug_assert!(index < (1 << 56));
    rng.set_stream(((domain as u64) << 56) | index);
    rng
}
