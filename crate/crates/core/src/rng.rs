//! Seeded random streams. Every consumer of randomness in a run draws from
//! its own ChaCha stream of the run seed, so adding draws in one place never
//! shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Target = 1,
    Data = 2,
    Init = 3,
    Shuffle = 4,
    Maze = 5,
    Policy = 6,
    Replay = 7,
    Verification = 8,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}
