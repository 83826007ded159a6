//! Labeled image datasets: IDX and CSV ingestion, quantization, subsampling.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Flat row-major images with one label each.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    name: String,
    features: usize,
    classes: usize,
    /// Significant bits per pixel: 8 for raw data, M after quantization.
    bits: u32,
    pixels: Vec<u8>,
    labels: Vec<u16>,
}

impl Dataset {
    /// `classes` of `None` infers `max(label) + 1`.
    pub fn new(
        name: impl Into<String>,
        features: usize,
        classes: Option<usize>,
        pixels: Vec<u8>,
        labels: Vec<u16>,
    ) -> Result<Self> {
        let name = name.into();
        if features == 0 && !labels.is_empty() {
            return Err(Error::Domain(format!(
                "{name}: images must have at least one pixel"
            )));
        }
        if pixels.len() != features * labels.len() {
            return Err(Error::Shape {
                expected: features * labels.len(),
                actual: pixels.len(),
            });
        }
        let seen = labels.iter().map(|&l| usize::from(l) + 1).max().unwrap_or(0);
        let classes = classes.unwrap_or(seen);
        if seen > classes {
            return Err(Error::Domain(format!(
                "{name}: label {} outside 0..{classes}",
                seen - 1
            )));
        }
        Ok(Dataset {
            name,
            features,
            classes,
            bits: 8,
            pixels,
            labels,
        })
    }

    pub fn from_images(name: impl Into<String>, images: &[Vec<u8>], labels: &[u16]) -> Result<Self> {
        let features = images.first().map_or(0, Vec::len);
        if let Some(bad) = images.iter().find(|im| im.len() != features) {
            return Err(Error::Shape {
                expected: features,
                actual: bad.len(),
            });
        }
        if images.len() != labels.len() {
            return Err(Error::Shape {
                expected: images.len(),
                actual: labels.len(),
            });
        }
        Dataset::new(name, features, None, images.concat(), labels.to_vec())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        &self.pixels[i * self.features..(i + 1) * self.features]
    }

    pub fn label(&self, i: usize) -> usize {
        usize::from(self.labels[i])
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = (&[u8], usize)> + '_ {
        (0..self.len()).map(|i| (self.image(i), self.label(i)))
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[usize::from(l)] += 1;
        }
        counts
    }

    /// Images at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            features: self.features,
            classes: self.classes,
            bits: self.bits,
            pixels: indices.iter().flat_map(|&i| self.image(i)).copied().collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// First `n` images (or all if fewer).
    pub fn take(&self, n: usize) -> Dataset {
        self.select(&(0..n.min(self.len())).collect::<Vec<_>>())
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}

/// Keeps the top `bits` of an 8-bit intensity.
pub fn quantize_pixel(pixel: u8, bits: u32) -> u8 {
    pixel >> (8 - bits)
}

/// Truncates every pixel to `bits` significant bits. Quantizing an already
/// quantized dataset to the same width returns it unchanged.
pub fn quantize_dataset(ds: &Dataset, bits: u32) -> Result<Dataset> {
    if !(1..=8).contains(&bits) {
        return Err(Error::Domain(format!(
            "quantization bits must be in 1..=8, got {bits}"
        )));
    }
    if bits > ds.bits {
        return Err(Error::Domain(format!(
            "{} is already quantized to {} bits, cannot widen to {bits}",
            ds.name, ds.bits
        )));
    }
    let shift = ds.bits - bits;
    Ok(Dataset {
        pixels: ds.pixels.iter().map(|&p| p >> shift).collect(),
        bits,
        ..ds.clone()
    })
}

/// Integer luminance `(299 R + 587 G + 114 B) / 1000` used to flatten color
/// datasets before CSV export.
pub fn luminance(r: u8, g: u8, b: u8) -> u8 {
    ((299 * u32::from(r) + 587 * u32::from(g) + 114 * u32::from(b)) / 1000) as u8
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

struct IdxReader<'a> {
    name: &'a str,
    bytes: &'a [u8],
    offset: usize,
}

impl IdxReader<'_> {
    fn u32(&mut self, what: &str) -> Result<u32> {
        let Some(chunk) = self.bytes.get(self.offset..self.offset + 4) else {
            return Err(self.error(format!("truncated while reading {what}")));
        };
        self.offset += 4;
        Ok(u32::from_be_bytes(chunk.try_into().expect("four bytes")))
    }

    fn payload(&mut self, len: usize) -> Result<&[u8]> {
        let end = self.offset.checked_add(len);
        match end.and_then(|end| self.bytes.get(self.offset..end)) {
            Some(data) => {
                let end = self.offset + len;
                if end != self.bytes.len() {
                    return Err(Error::format(
                        self.name,
                        format!("byte {end}"),
                        format!("{} trailing bytes after payload", self.bytes.len() - end),
                    ));
                }
                self.offset = end;
                Ok(data)
            }
            None => Err(self.error(format!(
                "payload needs {len} bytes, file has {}",
                self.bytes.len() - self.offset
            ))),
        }
    }

    fn error(&self, message: String) -> Error {
        Error::format(self.name, format!("byte {}", self.offset), message)
    }
}

/// Parses an IDX image file and label file already read into memory.
pub fn parse_idx(images: &[u8], images_name: &str, labels: &[u8], labels_name: &str) -> Result<Dataset> {
    let mut r = IdxReader {
        name: images_name,
        bytes: images,
        offset: 0,
    };
    let magic = r.u32("magic")?;
    if magic != IDX_IMAGES_MAGIC {
        r.offset = 0;
        return Err(r.error(format!(
            "bad image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"
        )));
    }
    let n = r.u32("image count")? as usize;
    let rows = r.u32("row count")? as usize;
    let cols = r.u32("column count")? as usize;
    let features = rows * cols;
    let pixels = r.payload(n * features)?.to_vec();

    let mut r = IdxReader {
        name: labels_name,
        bytes: labels,
        offset: 0,
    };
    let magic = r.u32("magic")?;
    if magic != IDX_LABELS_MAGIC {
        r.offset = 0;
        return Err(r.error(format!(
            "bad label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"
        )));
    }
    let count_offset = r.offset;
    let m = r.u32("label count")? as usize;
    if m != n {
        r.offset = count_offset;
        return Err(r.error(format!("{m} labels for {n} images")));
    }
    let labels = r.payload(m)?.iter().map(|&l| u16::from(l)).collect();
    let name = Path::new(images_name)
        .file_name()
        .map_or_else(|| images_name.to_string(), |f| f.to_string_lossy().into_owned());
    Dataset::new(name, features, None, pixels, labels)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads a big-endian IDX image/label file pair.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    parse_idx(
        &read_file(ip)?,
        &ip.display().to_string(),
        &read_file(lp)?,
        &lp.display().to_string(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Locates a split's IDX pair in `dir`, accepting both the hyphenated
/// (`train-images-idx3-ubyte`) and dotted (`train-images.idx3-ubyte`) names.
pub fn find_idx_pair(dir: impl AsRef<Path>, split: Split) -> Result<(PathBuf, PathBuf)> {
    let dir = dir.as_ref();
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    let find = |kind: &str, idx: &str| -> Result<PathBuf> {
        for sep in ['-', '.'] {
            let path = dir.join(format!("{prefix}-{kind}{sep}{idx}-ubyte"));
            if path.is_file() {
                return Ok(path);
            }
        }
        Err(Error::io(
            dir.join(format!("{prefix}-{kind}-{idx}-ubyte")),
            std::io::Error::new(std::io::ErrorKind::NotFound, "IDX file not found"),
        ))
    };
    Ok((find("images", "idx3")?, find("labels", "idx1")?))
}

/// Train and test splits of an MNIST-layout directory.
pub fn load_mnist_dir(dir: impl AsRef<Path>) -> Result<(Dataset, Dataset)> {
    let (ti, tl) = find_idx_pair(&dir, Split::Train)?;
    let (si, sl) = find_idx_pair(&dir, Split::Test)?;
    Ok((load_idx(ti, tl)?, load_idx(si, sl)?))
}

/// Parses `label,p0,...,p{H-1}` rows. A first row whose label cell is not
/// numeric is treated as a header. H is taken from the first data row.
pub fn parse_csv<R: std::io::Read>(input: R, name: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut features = None;
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for (index, record) in reader.records().enumerate() {
        let row = index + 1;
        let record = record.map_err(|e| Error::format(name, format!("row {row}"), e.to_string()))?;
        let Some(label_cell) = record.get(0) else {
            continue;
        };
        if index == 0 && label_cell.parse::<u16>().is_err() {
            continue;
        }
        let cell = |col: usize, text: &str, max: u32| -> Result<u32> {
            text.parse::<u32>().ok().filter(|&v| v <= max).ok_or_else(|| {
                Error::format(
                    name,
                    format!("row {row}, column {}", col + 1),
                    format!("expected an integer in 0..={max}, got '{text}'"),
                )
            })
        };
        let width = record.len() - 1;
        let h = *features.get_or_insert(width);
        if width != h || h == 0 {
            return Err(Error::format(
                name,
                format!("row {row}"),
                format!("expected {h} pixels, found {width}"),
            ));
        }
        labels.push(cell(0, label_cell, u32::from(u16::MAX))? as u16);
        for (col, text) in record.iter().enumerate().skip(1) {
            pixels.push(cell(col, text, 255)? as u8);
        }
    }
    Dataset::new(name, features.unwrap_or(0), None, pixels, labels)
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_csv(std::io::BufReader::new(file), &path.display().to_string())
}

/// Stratified subsample of at most `per_class_limit` images per class,
/// kept in original order. Selection depends only on `seed`.
pub fn subsample(ds: &Dataset, per_class_limit: usize, seed: u64) -> Result<Dataset> {
    if per_class_limit == 0 {
        return Err(Error::Domain("per-class limit must be at least 1".into()));
    }
    let mut by_class = vec![Vec::new(); ds.classes()];
    for i in 0..ds.len() {
        by_class[ds.label(i)].push(i);
    }
    if let Some(class) = by_class.iter().position(Vec::is_empty) {
        return Err(Error::EmptyClass { class });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::new();
    for mut members in by_class {
        if members.len() > per_class_limit {
            members.shuffle(&mut rng);
            members.truncate(per_class_limit);
        }
        keep.extend(members);
    }
    keep.sort_unstable();
    Ok(ds.select(&keep))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_images(n: u32, rows: u32, cols: u32, data: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        for v in [IDX_IMAGES_MAGIC, n, rows, cols] {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out.extend_from_slice(data);
        out
    }

    fn idx_labels(n: u32, data: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        for v in [IDX_LABELS_MAGIC, n] {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out.extend_from_slice(data);
        out
    }

    #[test]
    fn idx_parses_row_major() {
        let images = idx_images(2, 2, 2, &[1, 2, 3, 4, 5, 6, 7, 8]);
        let labels = idx_labels(2, &[3, 1]);
        let ds = parse_idx(&images, "img", &labels, "lbl").unwrap();
        assert_eq!((ds.len(), ds.features(), ds.classes()), (2, 4, 4));
        assert_eq!(ds.image(1), &[5, 6, 7, 8]);
        assert_eq!(ds.label(0), 3);
    }

    #[test]
    fn idx_empty_is_valid() {
        let ds = parse_idx(&idx_images(0, 28, 28, &[]), "i", &idx_labels(0, &[]), "l").unwrap();
        assert!(ds.is_empty());
        assert_eq!(ds.features(), 784);
    }

    #[test]
    fn idx_errors_name_offsets() {
        let labels = idx_labels(2, &[0, 1]);
        let mut bad = idx_images(2, 1, 1, &[0, 0]);
        bad[3] = 0x02;
        let err = parse_idx(&bad, "i", &labels, "l").unwrap_err().to_string();
        assert!(err.contains("byte 0") && err.contains("magic"), "{err}");

        let short = idx_images(2, 1, 1, &[0]);
        let err = parse_idx(&short, "i", &labels, "l").unwrap_err().to_string();
        assert!(err.contains("byte 16"), "{err}");

        let err = parse_idx(
            &idx_images(2, 1, 1, &[0, 0]),
            "i",
            &idx_labels(3, &[0, 1, 2]),
            "l",
        )
        .unwrap_err()
        .to_string();
        assert!(
            err.contains("byte 4") && err.contains("3 labels for 2 images"),
            "{err}"
        );

        let err = parse_idx(&idx_images(1, 1, 1, &[0]), "i", &idx_labels(1, &[0, 9]), "l")
            .unwrap_err()
            .to_string();
        assert!(err.contains("trailing"), "{err}");
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize_pixel(255, 4), 15);
        assert_eq!(quantize_pixel(0, 4), 0);
        assert_eq!(quantize_pixel(0x7f, 4), 7);
        let ds = Dataset::from_images("q", &[vec![255, 0x7f, 16]], &[0]).unwrap();
        let q = quantize_dataset(&ds, 4).unwrap();
        assert_eq!(q.image(0), &[15, 7, 1]);
        assert_eq!(quantize_dataset(&q, 4).unwrap(), q);
        assert_eq!(quantize_dataset(&q, 2).unwrap().image(0), &[3, 1, 0]);
        assert!(quantize_dataset(&q, 5).is_err());
        assert!(quantize_dataset(&ds, 0).is_err());
    }

    #[test]
    fn luminance_weights() {
        assert_eq!(luminance(255, 255, 255), 255);
        assert_eq!(luminance(0, 0, 0), 0);
        assert_eq!(luminance(255, 0, 0), 76);
        assert_eq!(luminance(0, 255, 0), 149);
        assert_eq!(luminance(0, 0, 255), 29);
    }

    #[test]
    fn csv_rows_and_errors() {
        let ds = parse_csv("label,p0,p1\n1,0,255\n0,10,20\n".as_bytes(), "toy").unwrap();
        assert_eq!((ds.len(), ds.features()), (2, 2));
        assert_eq!(ds.image(0), &[0, 255]);

        let err = parse_csv("1,0,255\n0,10\n".as_bytes(), "toy")
            .unwrap_err()
            .to_string();
        assert!(err.contains("row 2"), "{err}");
        let err = parse_csv("1,0,256\n".as_bytes(), "toy").unwrap_err().to_string();
        assert!(err.contains("row 1, column 3"), "{err}");
        let err = parse_csv("1,0,x\n".as_bytes(), "toy").unwrap_err().to_string();
        assert!(err.contains("'x'"), "{err}");
    }

    #[test]
    fn subsample_examples() {
        let images: Vec<Vec<u8>> = (0..30u8).map(|i| vec![i]).collect();
        let labels: Vec<u16> = (0..30).map(|i| i % 3).collect();
        let ds = Dataset::from_images("s", &images, &labels).unwrap();
        assert_eq!(subsample(&ds, 10, 1).unwrap(), ds);
        assert_eq!(subsample(&ds, 100, 1).unwrap(), ds);
        let one = subsample(&ds, 1, 1).unwrap();
        assert_eq!(one.class_counts(), vec![1, 1, 1]);
        let a = subsample(&ds, 4, 7).unwrap();
        assert_eq!(a, subsample(&ds, 4, 7).unwrap());
        assert_eq!(a.class_counts(), vec![4, 4, 4]);
        assert!(subsample(&ds, 0, 1).is_err());

        let gap = Dataset::new("g", 1, Some(3), vec![0, 0], vec![0, 2]).unwrap();
        assert!(matches!(
            subsample(&gap, 1, 0),
            Err(Error::EmptyClass { class: 1 })
        ));
    }
}
