//! Packed bipolar hypervectors and the HDC algebra over them.
//!
//! Bit convention: `+1` is stored as 1, `-1` as 0. Under this convention the
//! bipolar product is XNOR, so [`bind`] is XNOR rather than XOR. Bits past
//! `dim - 1` in the last word are always zero.

use std::io::{Read, Write};

use crate::error::{check_shape, Error, Result};
use crate::unary::masked_binarize_window;

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct PackedHypervector {
    dim: usize,
    words: Vec<u64>,
}

impl std::fmt::Debug for PackedHypervector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "PackedHypervector(dim={}, ones={})",
            self.dim,
            self.count_ones()
        )
    }
}

fn tail_mask(dim: usize) -> u64 {
    match dim % 64 {
        0 => u64::MAX,
        r => (1u64 << r) - 1,
    }
}

impl PackedHypervector {
    /// All `-1`.
    pub fn minus_ones(dim: usize) -> Self {
        PackedHypervector {
            dim,
            words: vec![0; dim.div_ceil(64)],
        }
    }

    /// All `+1`.
    pub fn plus_ones(dim: usize) -> Self {
        let mut v = PackedHypervector {
            dim,
            words: vec![u64::MAX; dim.div_ceil(64)],
        };
        v.clear_padding();
        v
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize) -> bool) -> Self {
        let mut v = Self::minus_ones(dim);
        for j in 0..dim {
            if f(j) {
                v.words[j / 64] |= 1 << (j % 64);
            }
        }
        v
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        Self::from_fn(bits.len(), |j| bits[j])
    }

    pub fn from_bipolar(values: &[i8]) -> Result<Self> {
        if let Some(bad) = values.iter().find(|&&x| x != 1 && x != -1) {
            return Err(Error::Domain(format!("bipolar entries must be ±1, got {bad}")));
        }
        Ok(Self::from_fn(values.len(), |j| values[j] == 1))
    }

    /// Wraps raw words, clearing any padding bits.
    pub fn from_words(dim: usize, words: Vec<u64>) -> Result<Self> {
        check_shape(dim.div_ceil(64), words.len())?;
        let mut v = PackedHypervector { dim, words };
        v.clear_padding();
        Ok(v)
    }

    fn clear_padding(&mut self) {
        if let Some(last) = self.words.last_mut() {
            *last &= tail_mask(self.dim);
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn bit(&self, j: usize) -> bool {
        (self.words[j / 64] >> (j % 64)) & 1 == 1
    }

    pub fn set(&mut self, j: usize, plus: bool) {
        assert!(j < self.dim, "bit {j} out of range for dimension {}", self.dim);
        if plus {
            self.words[j / 64] |= 1 << (j % 64);
        } else {
            self.words[j / 64] &= !(1 << (j % 64));
        }
    }

    /// Number of `+1` entries.
    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn to_bipolar(&self) -> Vec<i8> {
        (0..self.dim).map(|j| if self.bit(j) { 1 } else { -1 }).collect()
    }

    pub fn complement(&self) -> Self {
        let mut v = PackedHypervector {
            dim: self.dim,
            words: self.words.iter().map(|w| !w).collect(),
        };
        v.clear_padding();
        v
    }

    /// `+1` set of `self` is a subset of the `+1` set of `other`.
    pub fn is_subset_of(&self, other: &PackedHypervector) -> bool {
        self.dim == other.dim && self.words.iter().zip(&other.words).all(|(a, b)| a & !b == 0)
    }

    /// Little-endian `u32` dimension followed by the packed `u64` words.
    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let dim = u32::try_from(self.dim)
            .map_err(|_| std::io::Error::new(std::io::ErrorKind::InvalidInput, "dimension exceeds u32"))?;
        out.write_all(&dim.to_le_bytes())?;
        for w in &self.words {
            out.write_all(&w.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> std::io::Result<Self> {
        let mut dim = [0u8; 4];
        input.read_exact(&mut dim)?;
        let dim = u32::from_le_bytes(dim) as usize;
        let mut words = vec![0u64; dim.div_ceil(64)];
        let mut buf = [0u8; 8];
        for w in &mut words {
            input.read_exact(&mut buf)?;
            *w = u64::from_le_bytes(buf);
        }
        if words.last().is_some_and(|&w| w & !tail_mask(dim) != 0) {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                "non-zero padding bits",
            ));
        }
        Ok(PackedHypervector { dim, words })
    }
}

/// Bipolar element-wise product (XNOR under the `+1 <-> 1` convention).
pub fn bind(a: &PackedHypervector, b: &PackedHypervector) -> Result<PackedHypervector> {
    check_shape(a.dim, b.dim)?;
    let mut out = PackedHypervector {
        dim: a.dim,
        words: a.words.iter().zip(&b.words).map(|(x, y)| !(x ^ y)).collect(),
    };
    out.clear_padding();
    Ok(out)
}

pub fn hamming(a: &PackedHypervector, b: &PackedHypervector) -> Result<usize> {
    check_shape(a.dim, b.dim)?;
    Ok(a.words
        .iter()
        .zip(&b.words)
        .map(|(x, y)| (x ^ y).count_ones() as usize)
        .sum())
}

/// Per-bit reference for [`hamming`].
pub fn hamming_naive(a: &PackedHypervector, b: &PackedHypervector) -> Result<usize> {
    check_shape(a.dim, b.dim)?;
    Ok((0..a.dim).filter(|&j| a.bit(j) != b.bit(j)).count())
}

/// Cosine of two bipolar vectors, `(D - 2 * hamming) / D`.
pub fn cosine_similarity(a: &PackedHypervector, b: &PackedHypervector) -> Result<f64> {
    let h = hamming(a, b)?;
    if a.dim == 0 {
        return Err(Error::Domain("cosine of zero-dimensional vectors".into()));
    }
    Ok((a.dim as f64 - 2.0 * h as f64) / a.dim as f64)
}

/// Signed sums of bundled bipolar vectors.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AccumulatorVector {
    sums: Vec<i32>,
    contributions: u32,
}

impl AccumulatorVector {
    pub fn new(dim: usize) -> Self {
        AccumulatorVector {
            sums: vec![0; dim],
            contributions: 0,
        }
    }

    /// Validates the magnitude and parity invariants.
    pub fn from_sums(sums: Vec<i32>, contributions: u32) -> Result<Self> {
        for (j, &s) in sums.iter().enumerate() {
            if s.unsigned_abs() > contributions || (s - contributions as i32) % 2 != 0 {
                return Err(Error::Domain(format!(
                    "sum {s} at {j} is inconsistent with {contributions} contributions"
                )));
            }
        }
        Ok(AccumulatorVector { sums, contributions })
    }

    pub fn dim(&self) -> usize {
        self.sums.len()
    }

    pub fn sums(&self) -> &[i32] {
        &self.sums
    }

    pub fn contributions(&self) -> u32 {
        self.contributions
    }

    pub fn accumulate(&mut self, v: &PackedHypervector) -> Result<()> {
        check_shape(self.sums.len(), v.dim)?;
        for (chunk, &word) in self.sums.chunks_mut(64).zip(&v.words) {
            for (b, s) in chunk.iter_mut().enumerate() {
                *s += (((word >> b) & 1) as i32) * 2 - 1;
            }
        }
        self.contributions += 1;
        Ok(())
    }

    /// Per-bit reference for [`AccumulatorVector::accumulate`].
    pub fn accumulate_naive(&mut self, v: &PackedHypervector) -> Result<()> {
        check_shape(self.sums.len(), v.dim)?;
        for j in 0..v.dim {
            self.sums[j] += if v.bit(j) { 1 } else { -1 };
        }
        self.contributions += 1;
        Ok(())
    }

    /// Adds `contributions` vectors at once given how many of them were `+1`
    /// at each position.
    pub fn add_counts(&mut self, ones: &[u32], contributions: u32) -> Result<()> {
        check_shape(self.sums.len(), ones.len())?;
        if let Some(&bad) = ones.iter().find(|&&c| c > contributions) {
            return Err(Error::Domain(format!(
                "ones count {bad} exceeds {contributions} contributions"
            )));
        }
        let n = contributions as i32;
        for (s, &c) in self.sums.iter_mut().zip(ones) {
            *s += 2 * c as i32 - n;
        }
        self.contributions += contributions;
        Ok(())
    }

    /// Element-wise addition of another accumulator (per-worker merge).
    pub fn merge(&mut self, other: &AccumulatorVector) -> Result<()> {
        check_shape(self.sums.len(), other.sums.len())?;
        for (s, o) in self.sums.iter_mut().zip(&other.sums) {
            *s += o;
        }
        self.contributions += other.contributions;
        Ok(())
    }

    /// Sign with ties to `+1`: bit `j` is set iff `sums[j] >= 0`.
    pub fn binarize(&self) -> Result<PackedHypervector> {
        if self.contributions == 0 {
            return Err(Error::State("cannot binarize an empty accumulator".into()));
        }
        Ok(PackedHypervector::from_fn(self.sums.len(), |j| self.sums[j] >= 0))
    }
}

/// Vertical (bit-sliced) popcount across many packed vectors.
///
/// Low plane `p` holds bit `p` of every dimension's recent count; the planes
/// are drained into per-dimension totals before they can overflow.
#[derive(Debug, Clone)]
pub struct BitSlicedCounter {
    dim: usize,
    words: usize,
    planes: Vec<u64>,
    carry: Vec<u64>,
    pending: u32,
    totals: Vec<u32>,
    added: u32,
}

const LOW_PLANES: usize = 8;
const DRAIN_AT: u32 = (1 << LOW_PLANES) - 1;

impl BitSlicedCounter {
    pub fn new(dim: usize) -> Self {
        let words = dim.div_ceil(64);
        BitSlicedCounter {
            dim,
            words,
            planes: vec![0; LOW_PLANES * words],
            carry: vec![0; words],
            pending: 0,
            totals: vec![0; dim],
            added: 0,
        }
    }

    pub fn added(&self) -> u32 {
        self.added
    }

    pub fn add(&mut self, v: &PackedHypervector) -> Result<()> {
        check_shape(self.dim, v.dim)?;
        self.add_words(&v.words)
    }

    pub(crate) fn add_words(&mut self, words: &[u64]) -> Result<()> {
        if self.added == u32::MAX {
            return Err(Error::Logic("bit-sliced counter overflow".into()));
        }
        if self.pending == DRAIN_AT {
            self.drain();
        }
        self.carry.copy_from_slice(words);
        for plane in self.planes.chunks_exact_mut(self.words) {
            let mut live = 0;
            for (x, c) in plane.iter_mut().zip(&mut self.carry) {
                let next = *x & *c;
                *x ^= *c;
                *c = next;
                live |= next;
            }
            if live == 0 {
                break;
            }
        }
        self.pending += 1;
        self.added += 1;
        Ok(())
    }

    fn add_planes_to(&self, totals: &mut [u32]) {
        for (p, plane) in self.planes.chunks_exact(self.words).enumerate() {
            for (w, &word) in plane.iter().enumerate() {
                let mut bits = word;
                while bits != 0 {
                    totals[w * 64 + bits.trailing_zeros() as usize] += 1 << p;
                    bits &= bits - 1;
                }
            }
        }
    }

    fn drain(&mut self) {
        let mut totals = std::mem::take(&mut self.totals);
        self.add_planes_to(&mut totals);
        self.totals = totals;
        self.planes.fill(0);
        self.pending = 0;
    }

    /// Per-dimension count of `+1` bits.
    pub fn counts(&self) -> Vec<u32> {
        let mut counts = self.totals.clone();
        self.add_planes_to(&mut counts);
        counts
    }

    pub fn to_accumulator(&self) -> AccumulatorVector {
        let mut acc = AccumulatorVector::new(self.dim);
        acc.add_counts(&self.counts(), self.added)
            .expect("counts never exceed additions");
        acc
    }

    pub fn clear(&mut self) {
        self.planes.fill(0);
        self.totals.fill(0);
        self.pending = 0;
        self.added = 0;
    }
}

/// Sign of one dimension across a window of H vectors, computed with the
/// masked popcount latch.
pub fn popcount_window_binarize(vectors: &[PackedHypervector], j: usize) -> Result<bool> {
    let Some(first) = vectors.first() else {
        return Err(Error::Domain("empty binarization window".into()));
    };
    if j >= first.dim {
        return Err(Error::Domain(format!(
            "bit {j} out of range for dimension {}",
            first.dim
        )));
    }
    let mut bits = Vec::with_capacity(vectors.len());
    for v in vectors {
        check_shape(first.dim, v.dim)?;
        bits.push(v.bit(j));
    }
    masked_binarize_window(vectors.len(), &bits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_hv(rng: &mut ChaCha8Rng, dim: usize) -> PackedHypervector {
        PackedHypervector::from_fn(dim, |_| rng.gen())
    }

    #[test]
    fn padding_is_canonical() {
        let v = PackedHypervector::plus_ones(70);
        assert_eq!(v.words()[1], (1 << 6) - 1);
        assert_eq!(v.complement(), PackedHypervector::minus_ones(70));
        let w = PackedHypervector::from_words(70, vec![u64::MAX, u64::MAX]).unwrap();
        assert_eq!(w, v);
    }

    #[test]
    fn bind_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_hv(&mut rng, 100);
        let b = random_hv(&mut rng, 100);
        assert_eq!(bind(&a, &a).unwrap(), PackedHypervector::plus_ones(100));
        assert_eq!(bind(&a, &b).unwrap(), bind(&b, &a).unwrap());
        assert_eq!(bind(&a, &PackedHypervector::plus_ones(100)).unwrap(), a);
        assert!(matches!(
            bind(&a, &PackedHypervector::plus_ones(99)),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn bind_matches_bipolar_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_hv(&mut rng, 64);
        let b = random_hv(&mut rng, 64);
        let product: Vec<i8> = a
            .to_bipolar()
            .iter()
            .zip(b.to_bipolar())
            .map(|(x, y)| x * y)
            .collect();
        assert_eq!(bind(&a, &b).unwrap().to_bipolar(), product);
    }

    #[test]
    fn accumulate_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = random_hv(&mut rng, 77);
        let mut acc = AccumulatorVector::new(77);
        acc.accumulate(&v).unwrap();
        assert_eq!(acc.binarize().unwrap(), v);
        acc.accumulate(&v.complement()).unwrap();
        assert!(acc.sums().iter().all(|&s| s == 0));
        assert_eq!(acc.contributions(), 2);
    }

    #[test]
    fn accumulate_matches_dense_column_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rows: Vec<Vec<i8>> = (0..5)
            .map(|_| (0..32).map(|_| if rng.gen() { 1 } else { -1 }).collect())
            .collect();
        let mut acc = AccumulatorVector::new(32);
        for r in &rows {
            acc.accumulate(&PackedHypervector::from_bipolar(r).unwrap())
                .unwrap();
        }
        let expected: Vec<i32> = (0..32)
            .map(|j| rows.iter().map(|r| i32::from(r[j])).sum())
            .collect();
        assert_eq!(acc.sums(), expected.as_slice());
    }

    #[test]
    fn binarize_examples() {
        let acc = AccumulatorVector::from_sums(vec![3, -1, 0], 3).unwrap_err();
        assert!(
            matches!(acc, Error::Domain(_)),
            "parity violated for 0 with 3 contributions"
        );
        let acc = AccumulatorVector::from_sums(vec![3, -1, 1], 3).unwrap();
        assert_eq!(acc.binarize().unwrap().to_bipolar(), vec![1, -1, 1]);
        let acc = AccumulatorVector::from_sums(vec![4, -2, 0], 4).unwrap();
        assert_eq!(acc.binarize().unwrap().to_bipolar(), vec![1, -1, 1]);
        assert!(matches!(
            AccumulatorVector::new(3).binarize(),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn hamming_and_cosine_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = random_hv(&mut rng, 128);
        assert_eq!(hamming(&v, &v).unwrap(), 0);
        assert_eq!(hamming(&v, &v.complement()).unwrap(), 128);
        let w = random_hv(&mut rng, 128);
        assert_eq!(hamming(&v, &w).unwrap(), hamming_naive(&v, &w).unwrap());
        assert_eq!(cosine_similarity(&v, &v).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&v, &v.complement()).unwrap(), -1.0);
    }

    #[test]
    fn cosine_matches_float_dot_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random_hv(&mut rng, 256);
        let b = random_hv(&mut rng, 256);
        let (x, y) = (a.to_bipolar(), b.to_bipolar());
        let dot: f64 = x.iter().zip(&y).map(|(p, q)| f64::from(*p) * f64::from(*q)).sum();
        let norm = |v: &[i8]| v.iter().map(|p| f64::from(*p).powi(2)).sum::<f64>().sqrt();
        let expected = dot / (norm(&x) * norm(&y));
        assert!((cosine_similarity(&a, &b).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn window_binarize_examples() {
        let one = PackedHypervector::plus_ones(4);
        let zero = PackedHypervector::minus_ones(4);
        assert!(popcount_window_binarize(&[one.clone(), one.clone()], 2).unwrap());
        assert!(popcount_window_binarize(&[one.clone(), zero.clone()], 2).unwrap());
        assert!(!popcount_window_binarize(&[zero.clone(), zero.clone(), one.clone()], 0).unwrap());
        assert!(popcount_window_binarize(std::slice::from_ref(&one), 4).is_err());
        assert!(popcount_window_binarize(&[], 0).is_err());
    }

    #[test]
    fn window_binarize_agrees_with_accumulator_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let window: Vec<_> = (0..16).map(|_| random_hv(&mut rng, 200)).collect();
        let mut acc = AccumulatorVector::new(200);
        for v in &window {
            acc.accumulate(v).unwrap();
        }
        let bits = acc.binarize().unwrap();
        for j in 0..200 {
            assert_eq!(popcount_window_binarize(&window, j).unwrap(), bits.bit(j));
        }
    }

    #[test]
    fn bit_sliced_counter_matches_accumulator() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut counter = BitSlicedCounter::new(300);
        let mut acc = AccumulatorVector::new(300);
        for _ in 0..600 {
            let v = random_hv(&mut rng, 300);
            counter.add(&v).unwrap();
            acc.accumulate_naive(&v).unwrap();
        }
        assert_eq!(counter.to_accumulator(), acc);
        assert_eq!(counter.added(), 600);
        counter.clear();
        assert_eq!(counter.counts(), vec![0; 300]);
    }

    #[test]
    fn serialization_round_trip_and_padding_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v = random_hv(&mut rng, 131);
        let mut buf = Vec::new();
        v.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 4 + 3 * 8);
        assert_eq!(&buf[..4], &131u32.to_le_bytes());
        assert_eq!(PackedHypervector::read_from(buf.as_slice()).unwrap(), v);
        buf[4 + 2 * 8 + 7] = 0xff;
        assert!(PackedHypervector::read_from(buf.as_slice()).is_err());
        assert!(PackedHypervector::read_from(&buf[..10]).is_err());
    }
}
