//! Counter-based random streams.
//!
//! Every random quantity in the crate is drawn from a generator keyed by
//! `(seed, stream, index)`. Two draws with different keys are independent and
//! any key can be regenerated in isolation, so results do not depend on how
//! work is split across workers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for item `index` of `stream` under master `seed`.
pub fn keyed(seed: u64, stream: u64, index: u64) -> Rng {
    let a = splitmix(seed ^ 0x6a09_e667_f3bc_c908);
    let b = splitmix(a ^ stream.rotate_left(17));
    let c = splitmix(b ^ index.rotate_left(41));
    let d = splitmix(c ^ 0x3c6e_f372_fe94_f82b);
    let mut key = [0u8; 32];
    for (chunk, word) in key.chunks_exact_mut(8).zip([a, b, c, d]) {
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    Rng::from_seed(key)
}

/// Derives a child seed, used to hand independent seeds to sub-procedures.
pub fn derive(seed: u64, label: u64) -> u64 {
    splitmix(splitmix(seed) ^ splitmix(label.wrapping_mul(0xd6e8_feb8_6659_fd93)))
}

/// A named stream under a fixed seed; `at(i)` yields the generator of item `i`.
#[derive(Clone, Copy, Debug)]
pub struct Stream {
    pub seed: u64,
    pub id: u64,
}

impl Stream {
    pub fn new(seed: u64, id: u64) -> Self {
        Self { seed, id }
    }

    pub fn at(&self, index: u64) -> Rng {
        keyed(self.seed, self.id, index)
    }

    /// A sub-stream whose keys never collide with this stream's items.
    pub fn child(&self, label: u64) -> Stream {
        Stream { seed: derive(self.seed ^ self.id.rotate_left(7), label), id: self.id }
    }
}
