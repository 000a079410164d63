//! Seeded random streams.
//!
//! Every random quantity in a run derives from one root seed. Independent
//! consumers (data generation, validation) get their own ChaCha stream so
//! that changing one does not perturb the other.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::Hyperrect;

pub type StreamRng = ChaCha8Rng;

/// Stream identifiers for labelled sub-streams of a root seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Data = 1,
    Validation = 2,
    Adversarial = 3,
}

pub fn seeded(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn substream(seed: u64, stream: Stream) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Uniform sample from a box (degenerate sides return the bound).
pub fn uniform_in<R: Rng + ?Sized>(region: &Hyperrect, rng: &mut R) -> Vec<f64> {
    region
        .lower()
        .iter()
        .zip(region.upper())
        .map(|(&lo, &hi)| if hi > lo { rng.random_range(lo..=hi) } else { lo })
        .collect()
}
