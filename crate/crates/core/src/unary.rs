//! Thermometer bit-streams, the unary stream table, the gate-level unary
//! comparator and the masked binarization counter.
//!
//! Streams are right-aligned: a value `v` in a stream of length `N` sets bit
//! positions `0..v`, and is printed MSB-first, so `U(2, 7)` reads `0000011`.

use std::fmt;

use crate::error::{check_shape, Error, Result};

/// Longest stream supported (N = 2^16).
pub const MAX_STREAM_LEN: usize = 1 << 16;

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct UnaryStream {
    len: usize,
    words: Vec<u64>,
}

fn words_for(len: usize) -> usize {
    len.div_ceil(64)
}

impl UnaryStream {
    fn zeros(len: usize) -> Self {
        UnaryStream {
            len,
            words: vec![0; words_for(len)],
        }
    }

    /// Builds a stream from an MSB-first `0`/`1` string without checking the
    /// thermometer property.
    pub fn from_bit_string(s: &str) -> Result<Self> {
        let len = s.len();
        if len == 0 || len > MAX_STREAM_LEN {
            return Err(Error::Domain(format!("stream length {len} out of range")));
        }
        let mut stream = Self::zeros(len);
        for (k, c) in s.bytes().rev().enumerate() {
            match c {
                b'0' => {}
                b'1' => stream.words[k / 64] |= 1 << (k % 64),
                _ => return Err(Error::Domain(format!("invalid bit character {:?}", c as char))),
            }
        }
        Ok(stream)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bit(&self, k: usize) -> bool {
        (self.words[k / 64] >> (k % 64)) & 1 == 1
    }

    /// The encoded integer: number of 1s.
    pub fn value(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// All 1s contiguous from bit 0.
    pub fn is_thermometer(&self) -> bool {
        let v = self.value();
        self.words.iter().enumerate().all(|(w, &word)| {
            let lo = w * 64;
            let expect = if v >= lo + 64 {
                u64::MAX
            } else if v <= lo {
                0
            } else {
                (1u64 << (v - lo)) - 1
            };
            word == expect
        })
    }

    pub fn and(&self, other: &UnaryStream) -> Result<UnaryStream> {
        check_shape(self.len, other.len)?;
        Ok(UnaryStream {
            len: self.len,
            words: self.words.iter().zip(&other.words).map(|(a, b)| a & b).collect(),
        })
    }

    fn tail_mask(&self) -> u64 {
        match self.len % 64 {
            0 => u64::MAX,
            r => (1u64 << r) - 1,
        }
    }
}

impl fmt::Display for UnaryStream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for k in (0..self.len).rev() {
            f.write_str(if self.bit(k) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for UnaryStream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "UnaryStream({self})")
    }
}

fn check_length(length: usize) -> Result<()> {
    if length == 0 || length > MAX_STREAM_LEN {
        return Err(Error::Domain(format!(
            "stream length must be in 1..={MAX_STREAM_LEN}, got {length}"
        )));
    }
    Ok(())
}

fn check_value(value: usize, length: usize) -> Result<()> {
    check_length(length)?;
    if value > length {
        return Err(Error::Domain(format!(
            "value {value} exceeds stream length {length}"
        )));
    }
    Ok(())
}

/// Thermometer code of `value` in a stream of `length` bits.
pub fn encode_unary(value: usize, length: usize) -> Result<UnaryStream> {
    check_value(value, length)?;
    let mut stream = UnaryStream::zeros(length);
    for (w, word) in stream.words.iter_mut().enumerate() {
        let lo = w * 64;
        *word = if value >= lo + 64 {
            u64::MAX
        } else if value <= lo {
            0
        } else {
            (1u64 << (value - lo)) - 1
        };
    }
    Ok(stream)
}

/// Conventional generator: an M-bit counter swept for N cycles against the
/// value, emitting 1 on every cycle where `counter < value`.
pub fn counter_comparator_reference(value: usize, length: usize) -> Result<UnaryStream> {
    check_value(value, length)?;
    let mut stream = UnaryStream::zeros(length);
    for cycle in 0..length {
        if cycle < value {
            stream.words[cycle / 64] |= 1 << (cycle % 64);
        }
    }
    Ok(stream)
}

/// Gate-level comparator: `AND-reduce((data & sobol) | !sobol)`.
///
/// Returns `true` iff `value(data) >= value(sobol)`. Both inputs must be
/// thermometer streams of the same length.
pub fn unary_compare_ge(data: &UnaryStream, sobol: &UnaryStream) -> Result<bool> {
    check_shape(sobol.len, data.len)?;
    if !data.is_thermometer() || !sobol.is_thermometer() {
        return Err(Error::Precondition(
            "unary comparator inputs must be thermometer coded".into(),
        ));
    }
    Ok(compare_ge_unchecked(data, sobol))
}

#[inline]
pub(crate) fn compare_ge_unchecked(data: &UnaryStream, sobol: &UnaryStream) -> bool {
    let last = data.words.len() - 1;
    data.words
        .iter()
        .zip(&sobol.words)
        .enumerate()
        .all(|(w, (&d, &s))| {
            let minimum = d & s;
            let out = minimum | !s;
            let mask = if w == last { data.tail_mask() } else { u64::MAX };
            out & mask == mask
        })
}

/// Pre-stored thermometer streams indexed by M-bit value.
///
/// Only `2^M` entries (values `0..2^M`) are stored: an M-bit index cannot
/// address value `N = 2^M`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnaryStreamTable {
    bits: u32,
    entries: Vec<UnaryStream>,
}

impl UnaryStreamTable {
    pub fn new(bits: u32) -> Result<Self> {
        if !(1..=16).contains(&bits) {
            return Err(Error::Domain(format!(
                "UST width must be 1..=16 bits, got {bits}"
            )));
        }
        let n = 1usize << bits;
        let entries = (0..n).map(|v| encode_unary(v, n)).collect::<Result<Vec<_>>>()?;
        Ok(UnaryStreamTable { bits, entries })
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    /// Stream length N = 2^M.
    pub fn stream_len(&self) -> usize {
        1 << self.bits
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn fetch(&self, value: usize) -> Result<&UnaryStream> {
        self.entries
            .get(value)
            .ok_or_else(|| Error::Domain(format!("UST index {value} outside 0..{}", self.entries.len())))
    }

    /// One stream per line, MSB-first.
    pub fn dump_text(&self) -> String {
        let mut out = String::new();
        for entry in &self.entries {
            out.push_str(&entry.to_string());
            out.push('\n');
        }
        out
    }
}

/// Popcount counter with the hardwired threshold mask and sticky latch.
///
/// The latch fires when `(counter & mask) == mask`, with `mask = TOB =
/// ceil(H/2)`. Because the counter only ever grows by one, the first value
/// that covers every bit of the mask is TOB itself, so the latch reads
/// `popcount >= TOB`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedBinarizer {
    capacity: usize,
    threshold: usize,
    counter_width: u32,
    counter: usize,
    latch: bool,
}

impl MaskedBinarizer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Domain("binarizer capacity must be at least 1".into()));
        }
        let ceil_log2 = usize::BITS - (capacity - 1).leading_zeros();
        Ok(MaskedBinarizer {
            capacity,
            threshold: capacity.div_ceil(2),
            counter_width: ceil_log2 + 1,
            counter: 0,
            latch: false,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// TOB.
    pub fn threshold(&self) -> usize {
        self.threshold
    }

    pub fn mask(&self) -> usize {
        self.threshold
    }

    pub fn counter_width(&self) -> u32 {
        self.counter_width
    }

    pub fn counter(&self) -> usize {
        self.counter
    }

    pub fn latched(&self) -> bool {
        self.latch
    }

    pub fn step(&mut self, increment: bool) -> Result<()> {
        if increment {
            if self.counter == self.capacity {
                return Err(Error::Logic(format!(
                    "popcount overflow: counter already at capacity {}",
                    self.capacity
                )));
            }
            self.counter += 1;
        }
        let mask = self.mask();
        if self.counter & mask == mask {
            self.latch = true;
        }
        Ok(())
    }

    pub fn reset(&mut self) {
        self.counter = 0;
        self.latch = false;
    }
}

/// Sign bit of one H-bit window via the masked counter.
pub fn masked_binarize_window(capacity: usize, bits: &[bool]) -> Result<bool> {
    check_shape(capacity, bits.len())?;
    let mut binarizer = MaskedBinarizer::new(capacity)?;
    for &b in bits {
        binarizer.step(b)?;
    }
    Ok(binarizer.latched())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn u(v: usize, n: usize) -> UnaryStream {
        encode_unary(v, n).unwrap()
    }

    #[test]
    fn encode_examples() {
        assert_eq!(u(2, 7).to_string(), "0000011");
        assert_eq!(u(5, 7).to_string(), "0011111");
        assert_eq!(u(0, 16).to_string(), "0".repeat(16));
        assert!(encode_unary(8, 7).is_err());
        assert!(encode_unary(0, 0).is_err());
    }

    #[test]
    fn long_streams_cross_word_boundaries() {
        for v in [0, 1, 63, 64, 65, 127, 128, 200] {
            let s = u(v, 200);
            assert_eq!(s.value(), v);
            assert!(s.is_thermometer());
            assert_eq!(s, counter_comparator_reference(v, 200).unwrap());
        }
        assert!(unary_compare_ge(&u(130, 200), &u(129, 200)).unwrap());
        assert!(!unary_compare_ge(&u(64, 200), &u(65, 200)).unwrap());
    }

    #[test]
    fn fetch_examples() {
        let table = UnaryStreamTable::new(4).unwrap();
        assert_eq!(table.len(), 16);
        assert_eq!(table.fetch(8).unwrap().to_string(), "0000000011111111");
        assert_eq!(table.fetch(15).unwrap(), &u(15, 16));
        assert_eq!(table.fetch(0).unwrap().value(), 0);
        assert!(table.fetch(16).is_err());
    }

    #[test]
    fn counter_reference_examples() {
        assert_eq!(counter_comparator_reference(5, 7).unwrap().value(), 5);
        assert_eq!(counter_comparator_reference(7, 7).unwrap().to_string(), "1111111");
        assert!(counter_comparator_reference(8, 7).is_err());
    }

    #[test]
    fn ust_fidelity_exhaustive() {
        let table = UnaryStreamTable::new(4).unwrap();
        for v in 0..16 {
            let reference = counter_comparator_reference(v, 16).unwrap();
            assert_eq!(table.fetch(v).unwrap(), &reference);
            assert_eq!(reference, u(v, 16));
        }
        assert_eq!(counter_comparator_reference(16, 16).unwrap(), u(16, 16));
    }

    #[test]
    fn comparator_examples() {
        assert!(!unary_compare_ge(&u(2, 7), &u(5, 7)).unwrap());
        assert!(unary_compare_ge(&u(5, 7), &u(5, 7)).unwrap());
    }

    #[test]
    fn comparator_exhaustive() {
        for n in [7usize, 16] {
            for a in 0..=n {
                for b in 0..=n {
                    assert_eq!(unary_compare_ge(&u(a, n), &u(b, n)).unwrap(), a >= b, "{a} {b}");
                }
            }
        }
    }

    #[test]
    fn and_is_minimum() {
        for a in 0..=16 {
            for b in 0..=16 {
                let m = u(a, 16).and(&u(b, 16)).unwrap();
                assert_eq!(m.value(), a.min(b));
                assert!(m.is_thermometer());
            }
        }
    }

    #[test]
    fn comparator_rejects_bad_inputs() {
        let bad = UnaryStream::from_bit_string("0101011").unwrap();
        assert!(!bad.is_thermometer());
        assert!(matches!(
            unary_compare_ge(&bad, &u(2, 7)),
            Err(Error::Precondition(_))
        ));
        assert!(matches!(
            unary_compare_ge(&u(2, 7), &bad),
            Err(Error::Precondition(_))
        ));
        assert!(matches!(
            unary_compare_ge(&u(2, 7), &u(2, 16)),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn bit_string_round_trip() {
        let s = UnaryStream::from_bit_string("0011111").unwrap();
        assert_eq!(s, u(5, 7));
        assert!(UnaryStream::from_bit_string("01x").is_err());
        assert!(UnaryStream::from_bit_string("").is_err());
    }

    #[test]
    fn ust_dump_format() {
        let dump = UnaryStreamTable::new(2).unwrap().dump_text();
        assert_eq!(dump, "0000\n0001\n0011\n0111\n");
    }

    #[test]
    fn binarizer_examples() {
        let mut ones = vec![true; 392];
        ones.extend(vec![false; 392]);
        assert!(masked_binarize_window(784, &ones).unwrap());

        let mut b = MaskedBinarizer::new(784).unwrap();
        assert_eq!(b.threshold(), 392);
        assert_eq!(b.counter_width(), 11);
        for _ in 0..391 {
            b.step(true).unwrap();
        }
        assert!(!b.latched());

        let mut b = MaskedBinarizer::new(4).unwrap();
        assert_eq!(b.mask(), 0b10);
        b.step(true).unwrap();
        assert!(!b.latched());
        b.step(false).unwrap();
        assert!(!b.latched());
        b.step(true).unwrap();
        assert!(b.latched());
    }

    #[test]
    fn first_masked_match_is_threshold() {
        let b = MaskedBinarizer::new(784).unwrap();
        let first = (0..=784).find(|v| v & b.mask() == b.mask()).unwrap();
        assert_eq!(first, 392);
    }

    #[test]
    fn latch_is_sticky_and_overflow_detected() {
        let mut b = MaskedBinarizer::new(3).unwrap();
        assert_eq!(b.threshold(), 2);
        b.step(true).unwrap();
        b.step(true).unwrap();
        assert!(b.latched());
        b.step(true).unwrap();
        // counter 3 = 0b11 still covers mask 0b10; latch stays either way
        assert!(b.latched());
        assert!(matches!(b.step(true), Err(Error::Logic(_))));
        assert!(b.latched());
        b.reset();
        assert!(!b.latched());
    }

    #[test]
    fn window_examples() {
        let bits = |s: &str| s.bytes().map(|c| c == b'1').collect::<Vec<_>>();
        assert!(masked_binarize_window(8, &bits("11110000")).unwrap());
        assert!(!masked_binarize_window(8, &bits("11100000")).unwrap());
        assert!(masked_binarize_window(8, &bits("1110000")).is_err());
    }
}
