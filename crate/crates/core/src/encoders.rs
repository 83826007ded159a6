//! Image encoders: baseline position ⊗ level binding, and uHD Sobol-indexed
//! level-only encoding.
//!
//! Images arrive pre-quantized: one value in `[0, 2^M)` per feature position.
//! Both encoders produce the same thing, a signed bundle of one bipolar
//! vector per pixel. The per-pixel vector is called the pixel's
//! *contribution*; training and inference only ever need contributions.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_shape, Error, Result};
use crate::hypervector::{bind, AccumulatorVector, BitSlicedCounter, PackedHypervector};
use crate::model::OpCounters;
use crate::sobol::{build_sobol_table, SobolConfig, SobolTable};
use crate::unary::{compare_ge_unchecked, UnaryStreamTable};

/// Default memory budget for a precomputed level bank.
pub const DEFAULT_BANK_BUDGET: u64 = 512 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EncoderKind {
    Baseline,
    Uhd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GeneratorKind {
    /// ChaCha8, a seeded general-purpose generator.
    Prng,
    /// Fibonacci LFSR with maximal-length taps for the configured width.
    Lfsr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ComparatorPath {
    /// Thermometer streams through the AND-reduce comparator.
    GateLevelUnary,
    /// Integer `pixel >= scalar`.
    ScalarFast,
}

text_enum!(EncoderKind { Baseline => "baseline", Uhd => "uhd" });
text_enum!(GeneratorKind { Prng => "prng", Lfsr => "lfsr" });
text_enum!(ComparatorPath { GateLevelUnary => "gate-level-unary", ScalarFast => "scalar-fast" });

/// Everything needed to rebuild an encoder, apart from the feature count.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    /// Hypervector dimension D.
    pub dim: usize,
    /// Quantization bits M (uHD) and level precision n (baseline).
    pub bits: u32,
    pub seed: u64,
    pub generator: GeneratorKind,
    pub lfsr_width: u32,
    pub comparator_path: ComparatorPath,
    pub use_level_bank: bool,
    pub bank_budget_bytes: u64,
    pub skip_initial_zero: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            kind: EncoderKind::Uhd,
            dim: 1024,
            bits: 4,
            seed: 0,
            generator: GeneratorKind::Prng,
            lfsr_width: 32,
            comparator_path: ComparatorPath::ScalarFast,
            use_level_bank: true,
            bank_budget_bytes: DEFAULT_BANK_BUDGET,
            // Keeping the zero point makes every D = 2^k row exactly
            // level-balanced, which the level-similarity law depends on.
            skip_initial_zero: false,
        }
    }
}

impl EncoderConfig {
    pub fn uhd(dim: usize) -> Self {
        EncoderConfig {
            dim,
            ..Default::default()
        }
    }

    pub fn baseline(dim: usize, seed: u64) -> Self {
        EncoderConfig {
            kind: EncoderKind::Baseline,
            dim,
            seed,
            ..Default::default()
        }
    }

    pub fn levels(&self) -> usize {
        1 << self.bits
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("dimension must be at least 1".into()));
        }
        if !(1..=8).contains(&self.bits) {
            return Err(Error::Config(format!(
                "quantization bits must be in 1..=8, got {}",
                self.bits
            )));
        }
        if self.kind == EncoderKind::Baseline && self.dim < self.levels() {
            return Err(Error::Config(format!(
                "baseline needs dimension >= 2^n = {}, got {}",
                self.levels(),
                self.dim
            )));
        }
        if self.generator == GeneratorKind::Lfsr {
            maximal_taps(self.lfsr_width)?;
        }
        Ok(())
    }

    /// Canonical `key=value` lines in fixed key order.
    pub fn to_kv_text(&self) -> String {
        format!(
            "encoder={}\ndim={}\nbits={}\nseed={}\ngenerator={}\nlfsr_width={}\n\
             comparator_path={}\nuse_level_bank={}\nbank_budget_bytes={}\nskip_initial_zero={}\n",
            self.kind,
            self.dim,
            self.bits,
            self.seed,
            self.generator,
            self.lfsr_width,
            self.comparator_path,
            self.use_level_bank,
            self.bank_budget_bytes,
            self.skip_initial_zero,
        )
    }

    /// Parses `key=value` lines. Missing keys keep their defaults; unknown
    /// keys are rejected.
    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut cfg = EncoderConfig::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    /// Sets one field from its textual key and value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("invalid value '{value}' for {key}")))
        }
        match key {
            "encoder" => self.kind = value.parse()?,
            "dim" => self.dim = num(key, value)?,
            "bits" => self.bits = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "generator" => self.generator = value.parse()?,
            "lfsr_width" => self.lfsr_width = num(key, value)?,
            "comparator_path" => self.comparator_path = value.parse()?,
            "use_level_bank" => self.use_level_bank = num(key, value)?,
            "bank_budget_bytes" => self.bank_budget_bytes = num(key, value)?,
            "skip_initial_zero" => self.skip_initial_zero = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown encoder key '{key}'"))),
        }
        Ok(())
    }
}

/// Uniform reals in `[0, 1)`.
pub trait UniformSource {
    fn next_unit(&mut self) -> f64;
}

impl UniformSource for ChaCha8Rng {
    fn next_unit(&mut self) -> f64 {
        self.gen()
    }
}

/// Fibonacci LFSR. Each output real is built from 32 consecutive output bits.
#[derive(Debug, Clone)]
pub struct Lfsr {
    state: u64,
    width: u32,
    taps: u64,
}

/// Maximal-length tap positions (1-based, XNOR-free Fibonacci form).
fn maximal_taps(width: u32) -> Result<&'static [u32]> {
    Ok(match width {
        16 => &[16, 15, 13, 4],
        24 => &[24, 23, 22, 17],
        32 => &[32, 22, 2, 1],
        48 => &[48, 47, 21, 20],
        64 => &[64, 63, 61, 60],
        _ => {
            return Err(Error::Config(format!(
                "no built-in taps for LFSR width {width}; use 16, 24, 32, 48 or 64"
            )))
        }
    })
}

impl Lfsr {
    /// `taps` are 1-based bit positions; the highest must equal `width`.
    pub fn new(width: u32, taps: &[u32], seed: u64) -> Result<Self> {
        if !(2..=64).contains(&width) || taps.iter().all(|&t| t != width) {
            return Err(Error::Config(format!(
                "invalid LFSR width {width} or taps {taps:?}"
            )));
        }
        if let Some(t) = taps.iter().find(|&&t| t == 0 || t > width) {
            return Err(Error::Config(format!("tap {t} outside 1..={width}")));
        }
        let mask = if width == 64 { u64::MAX } else { (1 << width) - 1 };
        // Tap t reads the bit that will leave the register in width - t steps.
        let tap_mask = taps.iter().fold(0u64, |m, &t| m | 1 << (width - t));
        // Splitmix the seed so neighbouring seeds start far apart.
        let mut z = seed.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
        let state = match z & mask {
            0 => 1,
            s => s,
        };
        Ok(Lfsr {
            state,
            width,
            taps: tap_mask,
        })
    }

    pub fn with_width(width: u32, seed: u64) -> Result<Self> {
        Lfsr::new(width, maximal_taps(width)?, seed)
    }

    pub fn next_bit(&mut self) -> bool {
        let out = self.state & 1 == 1;
        let feedback = u64::from((self.state & self.taps).count_ones() & 1);
        self.state = (self.state >> 1) | (feedback << (self.width - 1));
        out
    }

    pub fn state(&self) -> u64 {
        self.state
    }
}

impl UniformSource for Lfsr {
    fn next_unit(&mut self) -> f64 {
        let word = (0..32).fold(0u32, |w, _| (w << 1) | u32::from(self.next_bit()));
        f64::from(word) / 4_294_967_296.0
    }
}

fn make_source(config: &EncoderConfig, stream: u64) -> Result<Box<dyn UniformSource>> {
    Ok(match config.generator {
        GeneratorKind::Prng => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(stream);
            Box::new(rng)
        }
        GeneratorKind::Lfsr => Box::new(Lfsr::with_width(
            config.lfsr_width,
            config.seed ^ stream.wrapping_mul(0xa076_1d64_78bd_642f),
        )?),
    })
}

/// Position vector: bit `j` is `+1` iff the j-th uniform draw is `<= 0.5`.
pub fn generate_position_hypervector(source: &mut dyn UniformSource, dim: usize) -> PackedHypervector {
    PackedHypervector::from_fn(dim, |_| source.next_unit() <= 0.5)
}

#[derive(Debug, Clone)]
pub struct BaselineEncoder {
    config: EncoderConfig,
    positions: Vec<PackedHypervector>,
    level_base: Vec<f64>,
    levels: Vec<PackedHypervector>,
}

const POSITION_STREAM: u64 = 0;
const LEVEL_STREAM: u64 = 1;

impl BaselineEncoder {
    pub fn new(config: EncoderConfig, features: usize) -> Result<Self> {
        config.validate()?;
        let dim = config.dim;
        let mut source = make_source(&config, POSITION_STREAM)?;
        let positions = (0..features)
            .map(|_| generate_position_hypervector(source.as_mut(), dim))
            .collect();
        // R in (0, D]: level 0 is all -1 and level 2^n all +1 with certainty.
        let mut source = make_source(&config, LEVEL_STREAM)?;
        let level_base: Vec<f64> = (0..dim)
            .map(|_| (1.0 - source.next_unit()) * dim as f64)
            .collect();
        let mut encoder = BaselineEncoder {
            config,
            positions,
            level_base,
            levels: Vec::new(),
        };
        encoder.levels = (0..=encoder.config.levels())
            .map(|k| encoder.generate_level_hypervector(k))
            .collect::<Result<_>>()?;
        Ok(encoder)
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn features(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self) -> &[PackedHypervector] {
        &self.positions
    }

    pub fn level_base(&self) -> &[f64] {
        &self.level_base
    }

    /// Bit `j` is `+1` iff `level_base[j] <= k * D / 2^n`.
    pub fn generate_level_hypervector(&self, k: usize) -> Result<PackedHypervector> {
        let top = self.config.levels();
        if k > top {
            return Err(Error::Domain(format!("level {k} outside 0..={top}")));
        }
        let t = k as f64 * self.config.dim as f64 / top as f64;
        Ok(PackedHypervector::from_fn(self.config.dim, |j| {
            self.level_base[j] <= t
        }))
    }

    pub fn level(&self, k: usize) -> &PackedHypervector {
        &self.levels[k]
    }

    /// `bind(L(value), P_position)`.
    pub fn contribution(&self, position: usize, value: u8) -> PackedHypervector {
        bind(&self.levels[usize::from(value)], &self.positions[position])
            .expect("encoder vectors share one dimension")
    }
}

/// Level-only uHD encoder: one Sobol dimension per pixel position.
#[derive(Debug, Clone)]
pub struct UhdEncoder {
    config: EncoderConfig,
    table: SobolTable,
    ust: UnaryStreamTable,
    bank: Option<LevelBank>,
}

impl UhdEncoder {
    pub fn new(config: EncoderConfig, features: usize) -> Result<Self> {
        config.validate()?;
        let sobol = SobolConfig::new(features, config.dim)
            .with_quantization_bits(config.bits)
            .with_skip_initial_zero(config.skip_initial_zero);
        let table = build_sobol_table(sobol)?;
        let ust = UnaryStreamTable::new(config.bits)?;
        let mut encoder = UhdEncoder {
            config,
            table,
            ust,
            bank: None,
        };
        if encoder.config.use_level_bank {
            encoder.bank = Some(encoder.precompute_level_bank()?);
        }
        Ok(encoder)
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn features(&self) -> usize {
        self.table.dimensions()
    }

    pub fn table(&self) -> &SobolTable {
        &self.table
    }

    pub fn ust(&self) -> &UnaryStreamTable {
        &self.ust
    }

    pub fn bank(&self) -> Option<&LevelBank> {
        self.bank.as_ref()
    }

    /// Level vector of `value` at `position`, computed on the configured
    /// comparator path.
    pub fn level_vector(&self, position: usize, value: u8) -> PackedHypervector {
        let row = self.table.row(position);
        match self.config.comparator_path {
            ComparatorPath::ScalarFast => {
                let v = u16::from(value);
                PackedHypervector::from_fn(row.len(), |j| v >= row[j])
            }
            ComparatorPath::GateLevelUnary => {
                let data = self
                    .ust
                    .fetch(usize::from(value))
                    .expect("value checked against 2^M");
                PackedHypervector::from_fn(row.len(), |j| {
                    let sobol = self
                        .ust
                        .fetch(usize::from(row[j]))
                        .expect("table values are M-bit");
                    compare_ge_unchecked(data, sobol)
                })
            }
        }
    }

    /// Bank of every level vector, `H * 2^M` packed vectors.
    pub fn precompute_level_bank(&self) -> Result<LevelBank> {
        let levels = self.config.levels();
        let words = self.config.dim.div_ceil(64);
        let required = (self.features() * levels * words * 8) as u64;
        if required > self.config.bank_budget_bytes {
            return Err(Error::Resource {
                what: "level bank",
                required,
                budget: self.config.bank_budget_bytes,
            });
        }
        let mut data = Vec::with_capacity(self.features() * levels * words);
        for i in 0..self.features() {
            for v in 0..levels {
                data.extend_from_slice(self.level_vector(i, v as u8).words());
            }
        }
        Ok(LevelBank {
            dim: self.config.dim,
            levels,
            words,
            data,
        })
    }
}

/// Flat store of packed level vectors indexed by `(position, value)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelBank {
    dim: usize,
    levels: usize,
    words: usize,
    data: Vec<u64>,
}

impl LevelBank {
    pub fn size_bytes(&self) -> usize {
        self.data.len() * 8
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.words.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn words(&self, position: usize, value: usize) -> &[u64] {
        let start = (position * self.levels + value) * self.words;
        &self.data[start..start + self.words]
    }

    pub fn get(&self, position: usize, value: usize) -> PackedHypervector {
        PackedHypervector::from_words(self.dim, self.words(position, value).to_vec())
            .expect("bank rows have the packed length")
    }
}

#[derive(Debug, Clone)]
pub enum Encoder {
    Baseline(BaselineEncoder),
    Uhd(UhdEncoder),
}

impl Encoder {
    pub fn new(config: EncoderConfig, features: usize) -> Result<Self> {
        Ok(match config.kind {
            EncoderKind::Baseline => Encoder::Baseline(BaselineEncoder::new(config, features)?),
            EncoderKind::Uhd => Encoder::Uhd(UhdEncoder::new(config, features)?),
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        match self {
            Encoder::Baseline(e) => e.config(),
            Encoder::Uhd(e) => e.config(),
        }
    }

    pub fn kind(&self) -> EncoderKind {
        self.config().kind
    }

    pub fn dim(&self) -> usize {
        self.config().dim
    }

    pub fn features(&self) -> usize {
        match self {
            Encoder::Baseline(e) => e.features(),
            Encoder::Uhd(e) => e.features(),
        }
    }

    pub fn check_image(&self, image: &[u8]) -> Result<()> {
        check_shape(self.features(), image.len())?;
        let levels = self.config().levels();
        if let Some((i, &v)) = image.iter().enumerate().find(|(_, &v)| usize::from(v) >= levels) {
            return Err(Error::Domain(format!(
                "pixel {i} has value {v}, outside the {}-bit range",
                self.config().bits
            )));
        }
        Ok(())
    }

    /// The bipolar vector one pixel adds to the image bundle.
    pub fn contribution(&self, position: usize, value: u8) -> PackedHypervector {
        match self {
            Encoder::Baseline(e) => e.contribution(position, value),
            Encoder::Uhd(e) => match &e.bank {
                Some(bank) => bank.get(position, usize::from(value)),
                None => e.level_vector(position, value),
            },
        }
    }

    /// Adds every pixel contribution of `image` to `counter`. The image must
    /// already have passed [`Encoder::check_image`].
    pub(crate) fn encode_into(
        &self,
        image: &[u8],
        counter: &mut BitSlicedCounter,
        ops: &mut OpCounters,
    ) -> Result<()> {
        let h = image.len() as u64;
        let d = self.dim() as u64;
        match self {
            Encoder::Baseline(e) => {
                let mut bound = vec![0u64; self.dim().div_ceil(64)];
                let tail = match self.dim() % 64 {
                    0 => u64::MAX,
                    r => (1 << r) - 1,
                };
                for (i, &v) in image.iter().enumerate() {
                    let level = e.levels[usize::from(v)].words();
                    let position = e.positions[i].words();
                    for ((b, l), p) in bound.iter_mut().zip(level).zip(position) {
                        *b = !(l ^ p);
                    }
                    if let Some(last) = bound.last_mut() {
                        *last &= tail;
                    }
                    counter.add_words(&bound)?;
                }
                ops.bind_ops += h;
                ops.memory_fetches += 2 * h;
            }
            Encoder::Uhd(e) => match &e.bank {
                Some(bank) => {
                    for (i, &v) in image.iter().enumerate() {
                        counter.add_words(bank.words(i, usize::from(v)))?;
                    }
                    ops.memory_fetches += h;
                }
                None => {
                    for (i, &v) in image.iter().enumerate() {
                        counter.add(&e.level_vector(i, v))?;
                    }
                    ops.comparisons += h * d;
                }
            },
        }
        ops.accumulator_updates += h;
        Ok(())
    }

    /// Bundle of all pixel contributions of one image.
    pub fn encode(&self, image: &[u8], ops: &mut OpCounters) -> Result<AccumulatorVector> {
        self.check_image(image)?;
        let mut counter = BitSlicedCounter::new(self.dim());
        self.encode_into(image, &mut counter, ops)?;
        Ok(counter.to_accumulator())
    }
}

/// `Σ_i bind(L(image[i]), P_i)` as bipolar sums.
pub fn encode_image_baseline(encoder: &BaselineEncoder, image: &[u8]) -> Result<AccumulatorVector> {
    Encoder::Baseline(encoder.clone()).encode(image, &mut OpCounters::default())
}

/// `Σ_i L_i(image[i])` as bipolar sums, with no binding.
pub fn encode_image_uhd(encoder: &UhdEncoder, image: &[u8]) -> Result<AccumulatorVector> {
    Encoder::Uhd(encoder.clone()).encode(image, &mut OpCounters::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypervector::hamming;

    fn uhd(dim: usize, features: usize, bank: bool, path: ComparatorPath) -> UhdEncoder {
        let config = EncoderConfig {
            use_level_bank: bank,
            comparator_path: path,
            ..EncoderConfig::uhd(dim)
        };
        UhdEncoder::new(config, features).unwrap()
    }

    #[test]
    fn config_text_round_trip() {
        let cfg = EncoderConfig {
            generator: GeneratorKind::Lfsr,
            lfsr_width: 16,
            ..EncoderConfig::baseline(2048, 77)
        };
        let text = cfg.to_kv_text();
        assert_eq!(EncoderConfig::from_kv_text(&text).unwrap(), cfg);
        assert!(EncoderConfig::from_kv_text("dim=abc").is_err());
        assert!(EncoderConfig::from_kv_text("colour=red").is_err());
        assert!(EncoderConfig::from_kv_text("encoder=mlp").is_err());
    }

    #[test]
    fn position_vectors_are_deterministic_and_balanced() {
        let cfg = EncoderConfig {
            bits: 3,
            ..EncoderConfig::baseline(8, 3)
        };
        let a = BaselineEncoder::new(cfg.clone(), 2).unwrap();
        let b = BaselineEncoder::new(cfg, 2).unwrap();
        assert_eq!(a.positions(), b.positions());

        let d = 10_000usize;
        let sigma = (d as f64).sqrt() / 2.0;
        for kind in [GeneratorKind::Prng, GeneratorKind::Lfsr] {
            let cfg = |seed| EncoderConfig {
                generator: kind,
                ..EncoderConfig::baseline(d, seed)
            };
            let x = BaselineEncoder::new(cfg(1), 1).unwrap();
            let y = BaselineEncoder::new(cfg(2), 1).unwrap();
            let ones = x.positions()[0].count_ones() as f64;
            assert!((ones - d as f64 / 2.0).abs() <= 3.0 * sigma, "{kind}: {ones}");
            let h = hamming(&x.positions()[0], &y.positions()[0]).unwrap() as f64;
            assert!((h - d as f64 / 2.0).abs() <= 3.0 * sigma, "{kind}: {h}");
        }
    }

    #[test]
    fn level_vectors_saturate_and_nest() {
        let enc = BaselineEncoder::new(EncoderConfig::baseline(512, 9), 1).unwrap();
        assert_eq!(enc.level(0), &PackedHypervector::minus_ones(512));
        assert_eq!(enc.level(16), &PackedHypervector::plus_ones(512));
        for k in 0..16 {
            assert!(enc.level(k).is_subset_of(enc.level(k + 1)));
        }
        assert!(matches!(
            enc.generate_level_hypervector(17),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn baseline_matches_dense_arithmetic() {
        let enc = BaselineEncoder::new(EncoderConfig::baseline(16, 4), 2).unwrap();
        let image = [3u8, 12];
        let got = encode_image_baseline(&enc, &image).unwrap();
        let expected: Vec<i32> = (0..16)
            .map(|j| {
                image
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| {
                        let l = enc.level(usize::from(v)).to_bipolar()[j];
                        let p = enc.positions()[i].to_bipolar()[j];
                        i32::from(l * p)
                    })
                    .sum()
            })
            .collect();
        assert_eq!(got.sums(), expected.as_slice());
    }

    #[test]
    fn baseline_zero_image_is_sum_of_complemented_positions() {
        let enc = BaselineEncoder::new(EncoderConfig::baseline(64, 5), 3).unwrap();
        let got = encode_image_baseline(&enc, &[0, 0, 0]).unwrap();
        let mut expected = AccumulatorVector::new(64);
        for p in enc.positions() {
            expected.accumulate(&p.complement()).unwrap();
        }
        assert_eq!(got, expected);
    }

    #[test]
    fn encode_rejects_bad_images() {
        let enc = uhd(64, 4, true, ComparatorPath::ScalarFast);
        assert!(matches!(
            encode_image_uhd(&enc, &[1, 2, 3]),
            Err(Error::Shape { .. })
        ));
        assert!(matches!(
            encode_image_uhd(&enc, &[1, 2, 3, 16]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn uhd_saturation_and_zero_level_counts() {
        let enc = uhd(1024, 8, false, ComparatorPath::ScalarFast);
        for i in 0..8 {
            assert_eq!(enc.level_vector(i, 15), PackedHypervector::plus_ones(1024));
            assert_eq!(enc.level_vector(i, 0).count_ones(), 64);
        }
    }

    #[test]
    fn uhd_paths_agree() {
        let scalar = uhd(256, 20, false, ComparatorPath::ScalarFast);
        let gate = uhd(256, 20, false, ComparatorPath::GateLevelUnary);
        let bank = uhd(256, 20, true, ComparatorPath::ScalarFast);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let image: Vec<u8> = (0..20).map(|_| rng.gen_range(0..16)).collect();
            let a = encode_image_uhd(&scalar, &image).unwrap();
            assert_eq!(a, encode_image_uhd(&gate, &image).unwrap());
            assert_eq!(a, encode_image_uhd(&bank, &image).unwrap());
        }
    }

    #[test]
    fn uhd_level_similarity_law() {
        let enc = uhd(1024, 32, true, ComparatorPath::ScalarFast);
        let bank = enc.bank().unwrap();
        for i in 0..32 {
            for a in 0..16 {
                for b in a..16 {
                    let h = hamming(&bank.get(i, a), &bank.get(i, b)).unwrap();
                    assert_eq!(h, (b - a) * 64, "position {i}, levels {a}, {b}");
                }
                if a > 0 {
                    assert!(bank.get(i, a - 1).is_subset_of(&bank.get(i, a)));
                }
            }
        }
    }

    #[test]
    fn level_bank_size_and_budget() {
        let enc = uhd(1024, 784, true, ComparatorPath::ScalarFast);
        assert_eq!(enc.bank().unwrap().size_bytes(), 784 * 16 * 1024 / 8);
        let config = EncoderConfig {
            bank_budget_bytes: 1000,
            ..EncoderConfig::uhd(1024)
        };
        match UhdEncoder::new(config, 784) {
            Err(Error::Resource { required, budget, .. }) => {
                assert_eq!(required, 1_605_632);
                assert_eq!(budget, 1000);
            }
            other => panic!("expected resource error, got {other:?}"),
        }
    }

    #[test]
    fn counters_track_the_multiplier_less_path() {
        let image = [5u8; 10];
        let mut ops = OpCounters::default();
        Encoder::new(EncoderConfig::uhd(128), 10)
            .unwrap()
            .encode(&image, &mut ops)
            .unwrap();
        assert_eq!((ops.bind_ops, ops.memory_fetches, ops.comparisons), (0, 10, 0));

        let mut ops = OpCounters::default();
        let cfg = EncoderConfig {
            use_level_bank: false,
            ..EncoderConfig::uhd(128)
        };
        Encoder::new(cfg, 10).unwrap().encode(&image, &mut ops).unwrap();
        assert_eq!((ops.bind_ops, ops.comparisons), (0, 10 * 128));

        let mut ops = OpCounters::default();
        Encoder::new(EncoderConfig::baseline(128, 1), 10)
            .unwrap()
            .encode(&image, &mut ops)
            .unwrap();
        assert_eq!(ops.bind_ops, 10);
    }

    #[test]
    fn lfsr_has_full_period_at_width_16() {
        let mut lfsr = Lfsr::with_width(16, 1).unwrap();
        let start = lfsr.state();
        let mut period = 0u64;
        loop {
            lfsr.next_bit();
            period += 1;
            if lfsr.state() == start {
                break;
            }
        }
        assert_eq!(period, (1 << 16) - 1);
        assert!(Lfsr::with_width(17, 1).is_err());
        assert!(Lfsr::new(8, &[9], 1).is_err());
    }
}
