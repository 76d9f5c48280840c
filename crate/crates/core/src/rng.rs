//! Addressable random streams.
//!
//! Every replica, block or box owns a `(seed, stream_id)` pair; the generator is
//! ChaCha8 with the stream id as its nonce, so draws never depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        RngStream { seed, stream_id }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(self.stream_id);
        r
    }

    /// Sub-stream for the `index`-th child (replica, block, box...).
    pub fn child(&self, index: u64) -> RngStream {
        let id = splitmix(splitmix(self.stream_id ^ 0x5bd1_e995_u64.rotate_left(17)).wrapping_add(index));
        RngStream { seed: self.seed, stream_id: id }
    }

    /// Named sub-stream, so independent experiment stages never share draws.
    pub fn tagged(&self, tag: &str) -> RngStream {
        let h = tag
            .bytes()
            .fold(0xcbf2_9ce4_8422_2325_u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3));
        self.child(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_stream_same_draws() {
        let a: Vec<u64> = (0..8).map({ let mut r = RngStream::new(7, 3).rng(); move |_| r.random() }).collect();
        let b: Vec<u64> = (0..8).map({ let mut r = RngStream::new(7, 3).rng(); move |_| r.random() }).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn children_differ() {
        let s = RngStream::new(1, 0);
        let x: u64 = s.child(0).rng().random();
        let y: u64 = s.child(1).rng().random();
        let z: u64 = s.tagged("a").rng().random();
        assert_ne!(x, y);
        assert_ne!(x, z);
        assert_ne!(s.child(0).child(1), s.child(1).child(0));
    }
}
