//! Counter-based random streams.
//!
//! A stream is named by `(global_seed, label, index)` plus an optional path of
//! child indices. The name is hashed into a ChaCha key and stream id, so two
//! streams with the same name always yield the same draws, no matter which
//! thread or in which order they are consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RngStream {
    seed: u64,
    label: u64,
    index: u64,
    path: u64,
}

const PATH_ROOT: u64 = 0x243f_6a88_85a3_08d3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

impl RngStream {
    pub fn new(seed: u64, label: &str, index: u64) -> Self {
        Self {
            seed,
            label: fnv1a(label),
            index,
            path: PATH_ROOT,
        }
    }

    /// Sub-stream `i`. Distinct `i` give independent streams.
    pub fn child(&self, i: u64) -> Self {
        Self {
            path: splitmix64(self.path ^ splitmix64(i.wrapping_add(1))),
            ..self.clone()
        }
    }

    /// Sub-stream named by a label, for separating roles under one parent.
    pub fn derive(&self, label: &str) -> Self {
        Self {
            path: splitmix64(self.path.rotate_left(17) ^ fnv1a(label)),
            ..self.clone()
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// A fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        let words = [
            splitmix64(self.seed),
            splitmix64(self.label ^ 0x5851_f42d_4c95_7f2d),
            splitmix64(self.index ^ 0x1405_7b7e_f767_814f),
            splitmix64(self.path),
        ];
        for (chunk, w) in key.chunks_exact_mut(8).zip(words) {
            chunk.copy_from_slice(&w.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(splitmix64(self.index.wrapping_add(self.path)));
        rng
    }
}
