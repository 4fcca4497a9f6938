//! Counter-based random streams. Every random decision in the samplers is
//! addressed by a (stream key, counter) pair instead of consuming a shared
//! sequential state: the key is derived from the master seed and structural
//! labels (chain id, sweep, site, ...), the counter enumerates draws inside
//! the stream. This gives random access (a bond coin or a cluster recolor can
//! be regenerated from its address alone) and makes trajectories independent
//! of evaluation schedule, which is what keeps parallel runs bit-reproducible.
//!
//! The generator is the SplitMix64 finalizer over a Weyl sequence, which is
//! the standard statistically-solid choice for keyed counter mixing.

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
const SEED_SALT: u64 = 0x51a2_9ac7_0e3f_11d7;
const LABEL_SALT: u64 = 0xd2b7_4407_b1ce_6e93;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A keyed random stream; cheap to copy and to derive children from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey(u64);

impl StreamKey {
    pub fn from_seed(seed: u64) -> Self {
        StreamKey(mix(seed ^ SEED_SALT))
    }

    /// Child stream for a structural label (chain index, site, color slot...).
    #[inline]
    pub fn derive(self, label: u64) -> Self {
        StreamKey(mix(
            self.0 ^ mix(label.wrapping_mul(GOLDEN).wrapping_add(LABEL_SALT)),
        ))
    }

    /// The `ctr`-th word of this stream.
    #[inline]
    pub fn word(self, ctr: u64) -> u64 {
        mix(self.0.wrapping_add(ctr.wrapping_mul(GOLDEN)))
    }

    /// Uniform draw in the open interval (0, 1).
    #[inline]
    pub fn uniform(self, ctr: u64) -> f64 {
        (((self.word(ctr) >> 11) as f64) + 0.5) * (1.0 / 9007199254740992.0)
    }

    /// Standard Gumbel draw, for argmax sampling from unnormalized logits.
    #[inline]
    pub fn gumbel(self, ctr: u64) -> f64 {
        -(-self.uniform(ctr).ln()).ln()
    }

    /// Standard exponential draw.
    #[inline]
    pub fn exponential(self, ctr: u64) -> f64 {
        -self.uniform(ctr).ln()
    }

    /// Uniform integer in `0..m` (widening-multiply range map).
    #[inline]
    pub fn below(self, ctr: u64, m: u64) -> u64 {
        ((self.word(ctr) as u128 * m as u128) >> 64) as u64
    }
}
