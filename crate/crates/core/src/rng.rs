//! Counter-based random streams.
//!
//! Every random draw in the crate is addressed by a [`StreamKey`] derived
//! from the run seed plus a path of integers (epoch, batch index, purpose
//! tag, ...). Draw `m` of a key is generated from its own ChaCha stream, so
//! the value of sample `m` never depends on how many other samples were
//! drawn or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

/// Purpose tags mixed into keys so unrelated consumers never share draws.
pub mod tag {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const TRAIN_NOISE: u64 = 3;
    pub const EVAL_LOSS: u64 = 4;
    pub const EVAL_TEST: u64 = 5;
    pub const DATA: u64 = 6;
    pub const PROBE: u64 = 7;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey(u64);

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl StreamKey {
    pub fn new(seed: u64) -> Self {
        StreamKey(splitmix64(seed))
    }

    /// A child key; distinct `part`s give unrelated streams.
    pub fn child(self, part: u64) -> Self {
        StreamKey(splitmix64(self.0 ^ splitmix64(part.wrapping_add(0x632B_E59B_D9B4_E019))))
    }

    pub fn path(self, parts: &[u64]) -> Self {
        parts.iter().fold(self, |k, &p| k.child(p))
    }

    pub fn raw(self) -> u64 {
        self.0
    }

    /// The generator for draw `index` under this key.
    pub fn rng(self, index: u64) -> ChaCha12Rng {
        let mut rng = ChaCha12Rng::seed_from_u64(self.0);
        rng.set_stream(index);
        rng
    }

    /// `len` standard normal values for draw `index`.
    pub fn normals(self, index: u64, len: usize) -> Vec<f64> {
        let mut rng = self.rng(index);
        (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn draws_are_addressed_not_sequenced() {
        let k = StreamKey::new(7).path(&[3, 1]);
        let a = k.normals(4, 10);
        let _ = k.normals(0, 100);
        assert_eq!(a, k.normals(4, 10));
        assert_ne!(a, k.normals(5, 10));
        assert_ne!(k.child(1), k.child(2));
        assert_ne!(StreamKey::new(1), StreamKey::new(2));
    }
}
