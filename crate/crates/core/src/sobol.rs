//! Sobol low-discrepancy sequences and the quantized per-position table.
//!
//! Each feature position `i` (row-major pixel order, 0-based) reads Sobol
//! dimension `i + 1`. Points are produced in Gray-code order from Joe–Kuo
//! direction numbers; the table bundled with the crate covers dimensions
//! 1..=4096. Values are kept as 32-bit binary fractions, so a point index can
//! go up to `2^32 - 1` and quantizing to `M` bits is an exact right shift.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::OnceLock;

use rayon::prelude::*;

use crate::error::{Error, Result};

/// First 4096 dimensions of the `new-joe-kuo-6.21201` direction-number file.
pub const BUNDLED_DIRECTION_NUMBERS: &str = include_str!("../data/new-joe-kuo-6.4096");

/// Bits of precision in every generated point.
pub const POINT_BITS: u32 = 32;

/// Largest supported quantization width.
pub const MAX_QUANTIZATION_BITS: u32 = 16;

#[derive(Debug, Clone, PartialEq, Eq)]
struct PrimitivePolynomial {
    degree: u32,
    /// Interior coefficients `a` as packed in the Joe–Kuo file.
    coefficients: u32,
    initial: Vec<u32>,
}

/// Parsed direction-number table. Entry `k` describes Sobol dimension `k + 2`;
/// dimension 1 is implicit (all `m_i = 1`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectionNumbers {
    polynomials: Vec<PrimitivePolynomial>,
}

impl DirectionNumbers {
    /// The table shipped with the crate, parsed once.
    pub fn bundled() -> &'static DirectionNumbers {
        static TABLE: OnceLock<DirectionNumbers> = OnceLock::new();
        TABLE.get_or_init(|| {
            DirectionNumbers::parse(BUNDLED_DIRECTION_NUMBERS)
                .expect("bundled direction numbers are well formed")
        })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Parses the published text format: a header line, then
    /// `d s a m_1 .. m_s` per dimension starting at `d = 2`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut polynomials = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if line_no == 0 && fields[0].parse::<u64>().is_err() {
                continue;
            }
            let location = format!("line {}", line_no + 1);
            let parse = |s: &str| -> Result<u32> {
                s.parse::<u32>().map_err(|_| {
                    Error::format("direction numbers", &location, format!("not an integer: {s:?}"))
                })
            };
            if fields.len() < 3 {
                return Err(Error::format(
                    "direction numbers",
                    &location,
                    "expected `d s a m_1 .. m_s`",
                ));
            }
            let dimension = parse(fields[0])? as usize;
            let degree = parse(fields[1])?;
            let coefficients = parse(fields[2])?;
            if dimension != polynomials.len() + 2 {
                return Err(Error::format(
                    "direction numbers",
                    &location,
                    format!("expected dimension {}, found {dimension}", polynomials.len() + 2),
                ));
            }
            if degree == 0 || fields.len() != 3 + degree as usize {
                return Err(Error::format(
                    "direction numbers",
                    &location,
                    format!(
                        "degree {degree} does not match {} initial values",
                        fields.len() - 3
                    ),
                ));
            }
            let initial = fields[3..].iter().map(|s| parse(s)).collect::<Result<Vec<_>>>()?;
            for (k, &m) in initial.iter().enumerate() {
                if m % 2 == 0 || u64::from(m) >= 1u64 << (k + 1) {
                    return Err(Error::format(
                        "direction numbers",
                        &location,
                        format!("m_{} = {m} must be odd and below 2^{}", k + 1, k + 1),
                    ));
                }
            }
            polynomials.push(PrimitivePolynomial {
                degree,
                coefficients,
                initial,
            });
        }
        Ok(DirectionNumbers { polynomials })
    }

    /// Number of Sobol dimensions this table can generate.
    pub fn capacity(&self) -> usize {
        self.polynomials.len() + 1
    }

    /// Direction integers `V_1..V_32` for a 1-based dimension, scaled so that
    /// `V_k = m_k * 2^(32-k)`.
    pub fn direction_integers(&self, dimension: usize) -> Result<[u32; POINT_BITS as usize]> {
        if dimension == 0 || dimension > self.capacity() {
            return Err(Error::Capacity {
                requested: dimension,
                capacity: self.capacity(),
            });
        }
        let bits = POINT_BITS as usize;
        let mut v = [0u32; POINT_BITS as usize];
        if dimension == 1 {
            for (k, slot) in v.iter_mut().enumerate() {
                *slot = 1u32 << (bits - 1 - k);
            }
            return Ok(v);
        }
        let poly = &self.polynomials[dimension - 2];
        let s = poly.degree as usize;
        for (k, vk) in v.iter_mut().enumerate().take(s.min(bits)) {
            *vk = poly.initial[k] << (bits - 1 - k);
        }
        for k in s..bits {
            let mut next = v[k - s] ^ (v[k - s] >> s);
            for j in 1..s {
                if (poly.coefficients >> (s - 1 - j)) & 1 == 1 {
                    next ^= v[k - j];
                }
            }
            v[k] = next;
        }
        Ok(v)
    }
}

/// Gray-code iterator over the 32-bit fractions of one Sobol dimension,
/// starting at the all-zero point.
#[derive(Debug, Clone)]
pub struct SobolPoints {
    directions: [u32; POINT_BITS as usize],
    index: u64,
    current: u32,
}

impl SobolPoints {
    pub fn new(directions: &DirectionNumbers, dimension: usize) -> Result<Self> {
        Ok(SobolPoints {
            directions: directions.direction_integers(dimension)?,
            index: 0,
            current: 0,
        })
    }
}

impl Iterator for SobolPoints {
    type Item = u32;

    fn next(&mut self) -> Option<u32> {
        if self.index > u64::from(u32::MAX) {
            return None;
        }
        let out = self.current;
        let flip = (self.index as u32).trailing_ones() as usize;
        if flip < POINT_BITS as usize {
            self.current ^= self.directions[flip];
        }
        self.index += 1;
        Some(out)
    }
}

fn fraction_to_f64(x: u32) -> f64 {
    f64::from(x) / 4_294_967_296.0
}

fn points_fixed(
    directions: &DirectionNumbers,
    dimension: usize,
    num_points: usize,
    skip_initial_zero: bool,
) -> Result<impl Iterator<Item = u32>> {
    if num_points == 0 {
        return Err(Error::Domain("num_points must be at least 1".into()));
    }
    let last = num_points as u64 - u64::from(!skip_initial_zero);
    if last > u64::from(u32::MAX) {
        return Err(Error::Domain(format!(
            "{num_points} points exceed the 2^32 - 1 point limit"
        )));
    }
    let points = SobolPoints::new(directions, dimension)?;
    Ok(points.skip(usize::from(skip_initial_zero)).take(num_points))
}

/// First `num_points` points of a 1-based Sobol dimension as reals in [0, 1).
pub fn generate_sobol_dimension(
    directions: &DirectionNumbers,
    dimension_index: usize,
    num_points: usize,
    skip_initial_zero: bool,
) -> Result<Vec<f64>> {
    Ok(
        points_fixed(directions, dimension_index, num_points, skip_initial_zero)?
            .map(fraction_to_f64)
            .collect(),
    )
}

fn validate_levels(levels: u32) -> Result<u32> {
    if levels < 2 || !levels.is_power_of_two() || levels > 1 << MAX_QUANTIZATION_BITS {
        return Err(Error::Domain(format!(
            "levels must be 2^M with 1 <= M <= {MAX_QUANTIZATION_BITS}, got {levels}"
        )));
    }
    Ok(levels.trailing_zeros())
}

/// `floor(x * levels)` clamped to `levels - 1`, for `x` in [0, 1).
pub fn quantize_scalar(x: f64, levels: u32) -> Result<u16> {
    validate_levels(levels)?;
    if !(0.0..1.0).contains(&x) {
        return Err(Error::Domain(format!("{x} is outside [0, 1)")));
    }
    let level = (x * f64::from(levels)).floor() as u32;
    Ok(level.min(levels - 1) as u16)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SobolConfig {
    /// One Sobol dimension per feature position (H).
    pub dimensions: usize,
    /// Points per dimension (the hypervector length D).
    pub points_per_dimension: usize,
    /// Quantization width M; values land in [0, 2^M - 1].
    pub quantization_bits: u32,
    pub skip_initial_zero: bool,
}

impl SobolConfig {
    pub fn new(dimensions: usize, points_per_dimension: usize) -> Self {
        SobolConfig {
            dimensions,
            points_per_dimension,
            quantization_bits: 4,
            skip_initial_zero: true,
        }
    }

    pub fn with_quantization_bits(mut self, bits: u32) -> Self {
        self.quantization_bits = bits;
        self
    }

    pub fn with_skip_initial_zero(mut self, skip: bool) -> Self {
        self.skip_initial_zero = skip;
        self
    }

    pub fn levels(&self) -> u32 {
        1 << self.quantization_bits
    }

    pub fn validate(&self, capacity: usize) -> Result<()> {
        if self.dimensions == 0 {
            return Err(Error::Domain("at least one Sobol dimension is required".into()));
        }
        if self.dimensions > capacity {
            return Err(Error::Capacity {
                requested: self.dimensions,
                capacity,
            });
        }
        if self.points_per_dimension == 0 {
            return Err(Error::Domain("points_per_dimension must be at least 1".into()));
        }
        if !(1..=MAX_QUANTIZATION_BITS).contains(&self.quantization_bits) {
            return Err(Error::Domain(format!(
                "quantization_bits must be in 1..={MAX_QUANTIZATION_BITS}, got {}",
                self.quantization_bits
            )));
        }
        Ok(())
    }
}

/// Quantized Sobol scalars, one row of D values per feature position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SobolTable {
    config: SobolConfig,
    values: Vec<u16>,
}

/// Builds the table from the bundled direction numbers.
pub fn build_sobol_table(config: SobolConfig) -> Result<SobolTable> {
    build_sobol_table_with(DirectionNumbers::bundled(), config)
}

pub fn build_sobol_table_with(directions: &DirectionNumbers, config: SobolConfig) -> Result<SobolTable> {
    config.validate(directions.capacity())?;
    let d = config.points_per_dimension;
    let shift = POINT_BITS - config.quantization_bits;
    let mut values = vec![0u16; config.dimensions * d];
    values
        .par_chunks_mut(d)
        .enumerate()
        .try_for_each(|(row, out)| -> Result<()> {
            let points = points_fixed(directions, row + 1, d, config.skip_initial_zero)?;
            // floor(x * 2^M) of a 32-bit fraction is its top M bits.
            for (slot, x) in out.iter_mut().zip(points) {
                *slot = (x >> shift) as u16;
            }
            Ok(())
        })?;
    Ok(SobolTable { config, values })
}

impl SobolTable {
    pub fn config(&self) -> &SobolConfig {
        &self.config
    }

    pub fn dimensions(&self) -> usize {
        self.config.dimensions
    }

    pub fn points_per_dimension(&self) -> usize {
        self.config.points_per_dimension
    }

    pub fn quantization_bits(&self) -> u32 {
        self.config.quantization_bits
    }

    /// Quantized sequence for feature position `position` (0-based).
    pub fn row(&self, position: usize) -> &[u16] {
        let d = self.config.points_per_dimension;
        &self.values[position * d..(position + 1) * d]
    }

    pub fn get(&self, position: usize, point: usize) -> u16 {
        self.values[position * self.config.points_per_dimension + point]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u16]> {
        self.values.chunks(self.config.points_per_dimension)
    }

    /// Occurrence count of every quantized level in one row.
    pub fn level_counts(&self, position: usize) -> Vec<u64> {
        let mut counts = vec![0u64; self.config.levels() as usize];
        for &v in self.row(position) {
            counts[v as usize] += 1;
        }
        counts
    }

    /// Flat binary export: `H, D, M` as little-endian `u32`, then one byte per
    /// scalar in row-major order. Only defined for `M <= 8`.
    pub fn write_binary<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        if self.config.quantization_bits > 8 {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidInput,
                "byte export requires quantization_bits <= 8",
            ));
        }
        out.write_all(&(self.config.dimensions as u32).to_le_bytes())?;
        out.write_all(&(self.config.points_per_dimension as u32).to_le_bytes())?;
        out.write_all(&self.config.quantization_bits.to_le_bytes())?;
        let bytes: Vec<u8> = self.values.iter().map(|&v| v as u8).collect();
        out.write_all(&bytes)
    }

    pub fn to_binary(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::with_capacity(12 + self.values.len());
        self.write_binary(&mut buf)
            .map_err(|e| Error::Domain(e.to_string()))?;
        Ok(buf)
    }

    /// Reads a table written by [`SobolTable::write_binary`]. The skip flag is
    /// not part of the format and is reported as `true`.
    pub fn read_binary<R: Read>(mut input: R) -> Result<SobolTable> {
        let mut header = [0u8; 12];
        input
            .read_exact(&mut header)
            .map_err(|_| Error::format("sobol table", "byte 0", "truncated header"))?;
        let word = |k: usize| u32::from_le_bytes(header[4 * k..4 * k + 4].try_into().unwrap());
        let (h, d, m) = (word(0) as usize, word(1) as usize, word(2));
        if !(1..=8).contains(&m) {
            return Err(Error::format("sobol table", "byte 8", format!("bad M = {m}")));
        }
        let mut bytes = vec![0u8; h * d];
        input.read_exact(&mut bytes).map_err(|_| {
            Error::format(
                "sobol table",
                "byte 12",
                format!("expected {} payload bytes", h * d),
            )
        })?;
        if let Some(pos) = bytes.iter().position(|&b| u32::from(b) >> m != 0) {
            return Err(Error::format(
                "sobol table",
                format!("byte {}", 12 + pos),
                format!("value exceeds {m} bits"),
            ));
        }
        Ok(SobolTable {
            config: SobolConfig {
                dimensions: h,
                points_per_dimension: d,
                quantization_bits: m,
                skip_initial_zero: true,
            },
            values: bytes.into_iter().map(u16::from).collect(),
        })
    }
}
