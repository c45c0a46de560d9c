//! Keyed noise streams.
//!
//! Every Gaussian draw in the sampler comes from a stream identified by the
//! run seed plus the logical position of the draw (timestep, repetition,
//! sequence, cell). Streams are independent of evaluation order, so a pass
//! computed in parallel is bit-identical to the serial one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Purpose {
    Init = 1,
    Known = 2,
    Denoise = 3,
    Renoise = 4,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NoiseKey {
    pub seed: u64,
    pub purpose: Purpose,
    pub t: u32,
    pub rep: u32,
    /// 0 = column, 1 = row, 2 = standalone sequence.
    pub axis: u8,
    pub seq: u32,
    pub cell: u32,
}

impl NoiseKey {
    pub fn new(seed: u64, purpose: Purpose) -> Self {
        Self { seed, purpose, t: 0, rep: 0, axis: 0, seq: 0, cell: 0 }
    }

    pub fn at(mut self, t: usize, rep: usize) -> Self {
        self.t = t as u32;
        self.rep = rep as u32;
        self
    }

    pub fn seq(mut self, axis: u8, seq: usize, cell: usize) -> Self {
        self.axis = axis;
        self.seq = seq as u32;
        self.cell = cell as u32;
        self
    }

    pub fn stream(&self) -> NoiseStream {
        let mut state = self.seed ^ 0x5851_F42D_4C95_7F2D;
        let words = [
            self.purpose as u64,
            self.t as u64,
            self.rep as u64,
            self.axis as u64,
            self.seq as u64,
            self.cell as u64,
        ];
        let mut seed = [0u8; 32];
        for w in words {
            state = splitmix64(state ^ w);
        }
        for chunk in seed.chunks_exact_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        NoiseStream { rng: ChaCha8Rng::from_seed(seed) }
    }
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub struct NoiseStream {
    rng: ChaCha8Rng,
}

impl NoiseStream {
    #[inline]
    pub fn normal(&mut self) -> f32 {
        self.rng.sample(StandardNormal)
    }

    pub fn normals(&mut self, n: usize) -> Vec<f32> {
        (0..n).map(|_| self.normal()).collect()
    }
}
