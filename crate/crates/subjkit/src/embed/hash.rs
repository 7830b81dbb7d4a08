//! Seeded hashing embedder.
//!
//! The recipe is fixed and doubles as a cross-implementation contract:
//! clean the text, split on whitespace, hash each token with FNV-1a 64,
//! mix the seed in with SplitMix64, then use bit 0 for the sign and the
//! remaining bits for the bucket index. Signed counts are accumulated in
//! f64, L2-normalized, and only then narrowed to f32.

use crate::text::clean_text;

use super::EmbedError;

/// FNV-1a 64-bit hash.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// SplitMix64 finalizer, used to whiten the token hash after seeding.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(super) struct HashEmbedder {
    dim: usize,
    seed: u64,
}

impl HashEmbedder {
    pub(super) fn new(dim: usize, seed: u64) -> Self {
        Self { dim, seed }
    }

    pub(super) fn embed(&self, text: &str) -> Result<Vec<f32>, EmbedError> {
        let cleaned = clean_text(text);
        let mut acc = vec![0.0f64; self.dim];
        let mut tokens = 0usize;
        for token in cleaned.split_whitespace() {
            tokens += 1;
            let h = splitmix64(fnv1a64(token.as_bytes()) ^ self.seed);
            let idx = ((h >> 1) % self.dim as u64) as usize;
            acc[idx] += if h & 1 == 0 { 1.0 } else { -1.0 };
        }
        if tokens == 0 {
            return Err(EmbedError::EmptyText);
        }
        let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in &mut acc {
                *x /= norm;
            }
        }
        Ok(acc.iter().map(|&x| x as f32).collect())
    }
}
