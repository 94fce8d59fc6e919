//! Seedable Bloom filter over canonical flow strings.
//!
//! Sizing follows the classical formulas: the bit count is
//! `m = ceil(-n ln P / (ln 2)^2)` and the hash count is `k = round((m/n) ln 2)`
//! (at least one). Positions come from double hashing, `(h1 + i*h2) mod m`,
//! where `h1` and `h2` are two differently seeded xxh3 hashes of the item.
//!
//! Besides insert and query, the filter supports two operations needed when
//! a bit array is used as a learning state: [`BloomFilter::perturb`] inverts
//! an exact number of uniformly chosen bits, and [`BloomFilter::to_chunks`]
//! exports the array as big-endian 32-bit words with leading zero padding.

use std::f64::consts::LN_2;
use std::fmt;

use rand::seq::index;
use thiserror::Error;
use xxhash_rust::xxh3::xxh3_64_with_seed;

use crate::seed::rng_from_seed;

/// Mixed into the user seed to obtain the second hash of the double-hashing pair.
const SECOND_HASH_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BloomError {
    #[error("item count must be at least 1, got {0}")]
    InvalidItemCount(usize),
    #[error("target false-positive rate must lie strictly between 0 and 1, got {0}")]
    InvalidFpRate(f64),
    #[error("flip percentage must lie in [0, 100], got {0}")]
    InvalidFlipPct(f64),
    #[error("chunked state holds {got} bits but {expected} (m + padding) were expected")]
    ChunkLength { expected: usize, got: usize },
    #[error("padding bits of a chunked state must be zero")]
    NonZeroPadding,
}

/// Returns `(m, k)` for `n_items` insertions at target false-positive rate `target_fp`.
pub fn compute_size(n_items: usize, target_fp: f64) -> Result<(usize, usize), BloomError> {
    if n_items < 1 {
        return Err(BloomError::InvalidItemCount(n_items));
    }
    if !(target_fp > 0.0 && target_fp < 1.0) {
        return Err(BloomError::InvalidFpRate(target_fp));
    }
    let n = n_items as f64;
    let m = (-n * target_fp.ln() / (LN_2 * LN_2)).ceil().max(1.0) as usize;
    let k = ((m as f64 / n) * LN_2).round().max(1.0) as usize;
    Ok((m, k))
}

/// Number of bits inverted by a perturbation of `flip_pct` percent of `m` bits.
///
/// Rounds half up, so `m = 138, flip_pct = 25` flips 35 bits.
pub fn flip_count(m: usize, flip_pct: f64) -> usize {
    (flip_pct * m as f64 / 100.0 + 0.5).floor() as usize
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BloomParams {
    n_items: usize,
    target_fp: f64,
    seed: u64,
    num_bits: usize,
    num_hashes: usize,
}

impl BloomParams {
    pub fn new(n_items: usize, target_fp: f64, seed: u64) -> Result<Self, BloomError> {
        let (num_bits, num_hashes) = compute_size(n_items, target_fp)?;
        Ok(Self {
            n_items,
            target_fp,
            seed,
            num_bits,
            num_hashes,
        })
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn target_fp(&self) -> f64 {
        self.target_fp
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Bit count `m`.
    pub fn num_bits(&self) -> usize {
        self.num_bits
    }

    /// Hash count `k`.
    pub fn num_hashes(&self) -> usize {
        self.num_hashes
    }
}

/// Fixed-length bit array. Index 0 is the most significant position on export.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitArray {
    words: Vec<u64>,
    len: usize,
}

impl BitArray {
    pub fn zeros(len: usize) -> Self {
        Self {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    pub fn ones(len: usize) -> Self {
        let mut bits = Self {
            words: vec![u64::MAX; len.div_ceil(64)],
            len,
        };
        bits.clear_tail();
        bits
    }

    pub fn from_bools(values: &[bool]) -> Self {
        let mut bits = Self::zeros(values.len());
        for (i, &v) in values.iter().enumerate() {
            if v {
                bits.set(i);
            }
        }
        bits
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize) {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        self.words[i / 64] |= 1 << (i % 64);
    }

    #[inline]
    pub fn flip(&mut self, i: usize) {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        self.words[i / 64] ^= 1 << (i % 64);
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Number of positions where `self` and `other` differ.
    pub fn hamming(&self, other: &BitArray) -> usize {
        assert_eq!(self.len, other.len, "hamming distance needs equal lengths");
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum()
    }

    pub fn complement(&self) -> BitArray {
        let mut out = Self {
            words: self.words.iter().map(|w| !w).collect(),
            len: self.len,
        };
        out.clear_tail();
        out
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    fn clear_tail(&mut self) {
        let rem = self.len % 64;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }
}

impl fmt::Debug for BitArray {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitArray[{}](", self.len)?;
        for b in self.iter() {
            f.write_str(if b { "1" } else { "0" })?;
        }
        f.write_str(")")
    }
}

/// The bit array exported as 32-bit words, most significant bit first.
///
/// `pad_bits` zero bits are prepended so that `32 * chunks.len() == m + pad_bits`;
/// chunk 0 therefore carries the padding in its high bits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkedState {
    pub chunks: Vec<u32>,
    pub pad_bits: u32,
}

impl ChunkedState {
    pub fn from_bits(bits: &BitArray) -> Self {
        let m = bits.len();
        let pad = (32 - m % 32) % 32;
        let total = m + pad;
        let mut chunks = vec![0u32; total / 32];
        for i in 0..m {
            if bits.get(i) {
                let p = i + pad;
                chunks[p / 32] |= 1 << (31 - p % 32);
            }
        }
        Self {
            chunks,
            pad_bits: pad as u32,
        }
    }

    /// Strips the padding and recovers an `m`-bit array.
    pub fn to_bits(&self, m: usize) -> Result<BitArray, BloomError> {
        let total = self.chunks.len() * 32;
        let pad = self.pad_bits as usize;
        if total != m + pad || pad >= 32 {
            return Err(BloomError::ChunkLength {
                expected: m + (32 - m % 32) % 32,
                got: total,
            });
        }
        let bit_at = |p: usize| self.chunks[p / 32] >> (31 - p % 32) & 1 == 1;
        if (0..pad).any(bit_at) {
            return Err(BloomError::NonZeroPadding);
        }
        let mut bits = BitArray::zeros(m);
        for i in 0..m {
            if bit_at(i + pad) {
                bits.set(i);
            }
        }
        Ok(bits)
    }

    /// Chunk values scaled into `[0, 1)` by dividing by 2^32.
    pub fn normalized(&self) -> impl Iterator<Item = f64> + '_ {
        self.chunks.iter().map(|&c| c as f64 / 4_294_967_296.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BloomFilter {
    params: BloomParams,
    bits: BitArray,
    inserted: usize,
}

impl BloomFilter {
    pub fn new(params: BloomParams) -> Self {
        Self {
            bits: BitArray::zeros(params.num_bits),
            params,
            inserted: 0,
        }
    }

    /// Sizes and creates a filter in one step.
    pub fn with_rate(n_items: usize, target_fp: f64, seed: u64) -> Result<Self, BloomError> {
        Ok(Self::new(BloomParams::new(n_items, target_fp, seed)?))
    }

    /// Replaces the bit array, e.g. to build fixtures. Panics on a length mismatch.
    pub fn with_bits(params: BloomParams, bits: BitArray) -> Self {
        assert_eq!(bits.len(), params.num_bits, "bit array length must equal m");
        Self {
            params,
            bits,
            inserted: 0,
        }
    }

    pub fn params(&self) -> &BloomParams {
        &self.params
    }

    pub fn bits(&self) -> &BitArray {
        &self.bits
    }

    pub fn num_bits(&self) -> usize {
        self.params.num_bits
    }

    pub fn num_hashes(&self) -> usize {
        self.params.num_hashes
    }

    pub fn inserted_count(&self) -> usize {
        self.inserted
    }

    /// Insertions beyond the item count the filter was sized for.
    pub fn saturation_overflow(&self) -> usize {
        self.inserted.saturating_sub(self.params.n_items)
    }

    pub fn insert(&mut self, item: &str) {
        let m = self.params.num_bits as u128;
        let (h1, h2) = self.hash_pair(item);
        for i in 0..self.params.num_hashes as u128 {
            self.bits.set(((h1 + i * h2) % m) as usize);
        }
        self.inserted += 1;
    }

    pub fn query(&self, item: &str) -> bool {
        let m = self.params.num_bits as u128;
        let (h1, h2) = self.hash_pair(item);
        (0..self.params.num_hashes as u128).all(|i| self.bits.get(((h1 + i * h2) % m) as usize))
    }

    /// Bit positions probed for `item`, in probe order.
    pub fn positions(&self, item: &str) -> Vec<usize> {
        let m = self.params.num_bits as u128;
        let (h1, h2) = self.hash_pair(item);
        (0..self.params.num_hashes as u128)
            .map(|i| ((h1 + i * h2) % m) as usize)
            .collect()
    }

    /// Returns a copy with exactly `flip_count(m, flip_pct)` distinct bits inverted.
    ///
    /// The positions are a uniform sample without replacement driven by `rng_seed`.
    pub fn perturb(&self, flip_pct: f64, rng_seed: u64) -> Result<BloomFilter, BloomError> {
        if !(0.0..=100.0).contains(&flip_pct) {
            return Err(BloomError::InvalidFlipPct(flip_pct));
        }
        let m = self.params.num_bits;
        let flips = flip_count(m, flip_pct).min(m);
        let mut out = self.clone();
        let mut rng = rng_from_seed(rng_seed);
        for pos in index::sample(&mut rng, m, flips) {
            out.bits.flip(pos);
        }
        Ok(out)
    }

    pub fn to_chunks(&self) -> ChunkedState {
        ChunkedState::from_bits(&self.bits)
    }

    fn hash_pair(&self, item: &str) -> (u128, u128) {
        let seed = self.params.seed;
        let h1 = xxh3_64_with_seed(item.as_bytes(), seed);
        let h2 = xxh3_64_with_seed(item.as_bytes(), seed ^ SECOND_HASH_SALT);
        (h1 as u128, h2 as u128)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizing_examples() {
        assert_eq!(compute_size(55, 0.30).unwrap().0, 138);
        assert_eq!(compute_size(55, 0.05).unwrap().0, 343);
        assert_eq!(compute_size(32, 0.01).unwrap(), (307, 7));
        assert_eq!(compute_size(16, 0.01).unwrap().0, 154);
    }

    #[test]
    fn sizing_rejects_out_of_range_inputs() {
        assert_eq!(compute_size(0, 0.1), Err(BloomError::InvalidItemCount(0)));
        for p in [0.0, 1.0, -0.5, 1.5, f64::NAN] {
            assert!(matches!(compute_size(10, p), Err(BloomError::InvalidFpRate(_))));
        }
    }

    #[test]
    fn inserted_items_are_found() {
        let mut f = BloomFilter::with_rate(10, 0.01, 42).unwrap();
        f.insert("192.168.1.1.10.0.0.1");
        assert!(f.query("192.168.1.1.10.0.0.1"));
        assert_eq!(f.inserted_count(), 1);
    }

    #[test]
    fn empty_filter_rejects_everything() {
        let f = BloomFilter::with_rate(10, 0.01, 42).unwrap();
        assert!(!f.query("1.2.3.4.5.6.7.8"));
        assert_eq!(f.bits().count_ones(), 0);
    }

    #[test]
    fn reinserting_is_idempotent_on_bits() {
        let mut f = BloomFilter::with_rate(10, 0.01, 3).unwrap();
        f.insert("10.0.0.1.10.0.0.2");
        let after_first = f.bits().clone();
        f.insert("10.0.0.1.10.0.0.2");
        assert_eq!(f.bits(), &after_first);
        assert_eq!(f.inserted_count(), 2);
    }

    #[test]
    fn all_ones_matches_any_item() {
        let p = BloomParams::new(10, 0.01, 1).unwrap();
        let f = BloomFilter::with_bits(p, BitArray::ones(p.num_bits()));
        assert!(f.query("anything at all"));
        assert!(f.query("1.2.3.4.5.6.7.8"));
    }

    #[test]
    fn over_insertion_is_counted() {
        let mut f = BloomFilter::with_rate(2, 0.1, 0).unwrap();
        for i in 0..5 {
            f.insert(&format!("item-{i}"));
        }
        assert_eq!(f.saturation_overflow(), 3);
    }

    #[test]
    fn perturb_extremes() {
        let mut f = BloomFilter::with_rate(55, 0.05, 9).unwrap();
        for i in 0..55 {
            f.insert(&format!("10.0.0.{i}.10.0.1.{i}"));
        }
        assert_eq!(f.perturb(0.0, 1).unwrap().bits(), f.bits());
        assert_eq!(f.perturb(100.0, 1).unwrap().bits(), &f.bits().complement());
        let tenth = f.perturb(10.0, 5).unwrap();
        assert_eq!(f.num_bits(), 343);
        assert_eq!(tenth.bits().hamming(f.bits()), 34);
    }

    #[test]
    fn perturb_rejects_bad_percentages() {
        let f = BloomFilter::with_rate(5, 0.1, 0).unwrap();
        assert!(f.perturb(-1.0, 0).is_err());
        assert!(f.perturb(100.5, 0).is_err());
        assert!(f.perturb(f64::NAN, 0).is_err());
    }

    #[test]
    fn flip_count_rounds_half_up() {
        assert_eq!(flip_count(343, 10.0), 34);
        assert_eq!(flip_count(138, 25.0), 35);
        assert_eq!(flip_count(307, 30.0), 92);
        assert_eq!(flip_count(32, 100.0), 32);
    }

    #[test]
    fn chunk_layout() {
        let c = ChunkedState::from_bits(&BitArray::zeros(307));
        assert_eq!((c.chunks.len(), c.pad_bits), (10, 13));

        assert_eq!(ChunkedState::from_bits(&BitArray::zeros(64)).chunks, vec![0, 0]);

        let mut one = BitArray::zeros(32);
        one.set(0);
        let c = ChunkedState::from_bits(&one);
        assert_eq!((c.chunks, c.pad_bits), (vec![0x8000_0000], 0));

        // Padding goes in front: with m = 33 the first real bit is the
        // lowest bit of chunk 0, the last real bit the lowest bit of chunk 1.
        let mut bits = BitArray::zeros(33);
        bits.set(0);
        bits.set(32);
        let c = ChunkedState::from_bits(&bits);
        assert_eq!((c.chunks, c.pad_bits), (vec![1, 1], 31));
    }

    #[test]
    fn chunk_decoding_validates_shape() {
        let c = ChunkedState {
            chunks: vec![0x8000_0000, 0],
            pad_bits: 1,
        };
        assert_eq!(c.to_bits(63), Err(BloomError::NonZeroPadding));
        assert!(matches!(c.to_bits(40), Err(BloomError::ChunkLength { .. })));
    }
}
