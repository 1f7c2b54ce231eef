//! Hierarchical, counter-derived random streams.
//!
//! A stream is identified by a master seed plus a path of labelled
//! components (trial, feature, purpose, replicate). The key for a child is a
//! pure function of the parent key and the component, so any worker can
//! reconstruct the generator for `(feature 7, null draw 412)` without
//! coordinating with anyone else.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. Keeps e.g. bootstrap and null-draw streams apart
/// even when they share the same numeric index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Split,
    Fit,
    Sampler,
    Bootstrap,
    Null,
    Calibration,
    Data,
    Selection,
    Custom(u32),
}

impl Purpose {
    fn code(self) -> u64 {
        match self {
            Purpose::Split => 1,
            Purpose::Fit => 2,
            Purpose::Sampler => 3,
            Purpose::Bootstrap => 4,
            Purpose::Null => 5,
            Purpose::Calibration => 6,
            Purpose::Data => 7,
            Purpose::Selection => 8,
            Purpose::Custom(c) => 0x1000 + c as u64,
        }
    }
}

const TAG_TRIAL: u64 = 0x7472_6961_6c00_0000;
const TAG_FEATURE: u64 = 0x6665_6174_0000_0000;
const TAG_PURPOSE: u64 = 0x7075_7270_0000_0000;
const TAG_REPLICATE: u64 = 0x7265_706c_0000_0000;
const TAG_CHILD: u64 = 0x6368_6c64_0000_0000;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    seed: u64,
    key: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream {
            seed,
            key: splitmix64(seed ^ 0x4852_545f_524e_4721),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn derive(&self, tag: u64, index: u64) -> Self {
        let mixed = splitmix64(self.key ^ splitmix64(tag.wrapping_add(index)));
        RngStream {
            seed: self.seed,
            key: splitmix64(mixed.rotate_left(17) ^ tag),
        }
    }

    pub fn trial(&self, t: u64) -> Self {
        self.derive(TAG_TRIAL, t)
    }

    pub fn feature(&self, j: usize) -> Self {
        self.derive(TAG_FEATURE, j as u64)
    }

    pub fn purpose(&self, p: Purpose) -> Self {
        self.derive(TAG_PURPOSE, p.code())
    }

    pub fn replicate(&self, k: u64) -> Self {
        self.derive(TAG_REPLICATE, k)
    }

    /// Generic child for paths not covered by the named levels.
    pub fn child(&self, index: u64) -> Self {
        self.derive(TAG_CHILD, index)
    }

    /// A 64-bit seed summarizing this stream, for handing to foreign generators.
    pub fn derived_seed(&self) -> u64 {
        splitmix64(self.key ^ 0x5eed)
    }

    /// A fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut seed = [0u8; 32];
        let mut z = self.key;
        for chunk in seed.chunks_exact_mut(8) {
            z = splitmix64(z);
            chunk.copy_from_slice(&z.to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}
