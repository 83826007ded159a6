//! Single-pass class-hypervector training, similarity inference, evaluation
//! and model files.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::data::Dataset;
use crate::encoders::{Encoder, EncoderConfig, EncoderKind};
use crate::error::{check_shape, Error, Result};
use crate::hypervector::{cosine_similarity, AccumulatorVector, BitSlicedCounter, PackedHypervector};

/// Software proxy for hardware cost: how many primitive operations a run
/// performed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct OpCounters {
    /// Scalar or unary magnitude comparisons.
    pub comparisons: u64,
    /// Bipolar multiplications of whole hypervectors.
    pub bind_ops: u64,
    /// Hypervectors added into an accumulator.
    pub accumulator_updates: u64,
    /// Hypervector reads from a precomputed store.
    pub memory_fetches: u64,
    /// Accumulators reduced to a bipolar vector.
    pub binarize_windows: u64,
}

impl OpCounters {
    pub fn merge(&mut self, other: &OpCounters) {
        self.comparisons += other.comparisons;
        self.bind_ops += other.bind_ops;
        self.accumulator_updates += other.accumulator_updates;
        self.memory_fetches += other.memory_fetches;
        self.binarize_windows += other.binarize_windows;
    }
}

/// How a test bundle is compared with the class bundles.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub enum InferenceMode {
    /// Both sides binarized at sign (ties to +1), compared by Hamming cosine.
    Binarized,
    /// Cosine of the raw integer sums.
    RawCosine,
    /// Cosine of the raw sums after subtracting each vector's own mean.
    #[default]
    CenteredCosine,
}

text_enum!(InferenceMode {
    Binarized => "binarized",
    RawCosine => "raw-cosine",
    CenteredCosine => "centered-cosine",
});

/// Images per work unit. Fixed so that work partitioning, and therefore
/// every intermediate value, is independent of the worker count.
const CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Worker threads; 0 means available parallelism.
    pub workers: usize,
}

impl RunOptions {
    pub fn with_workers(workers: usize) -> Self {
        RunOptions { workers }
    }

    pub fn resolved_workers(&self) -> usize {
        match self.workers {
            0 => std::thread::available_parallelism().map_or(1, usize::from),
            n => n,
        }
    }

    fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> Result<R> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.resolved_workers())
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
        Ok(pool.install(f))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassModel {
    config: EncoderConfig,
    features: usize,
    inference: InferenceMode,
    classes: Vec<PackedHypervector>,
    sums: Vec<AccumulatorVector>,
}

impl ClassModel {
    /// Builds a model from per-class bundles, binarizing each.
    pub fn from_sums(config: EncoderConfig, features: usize, sums: Vec<AccumulatorVector>) -> Result<Self> {
        if sums.len() < 2 {
            return Err(Error::Domain(format!(
                "a model needs at least 2 classes, got {}",
                sums.len()
            )));
        }
        for s in &sums {
            check_shape(config.dim, s.dim())?;
        }
        let classes = sums
            .iter()
            .enumerate()
            .map(|(class, s)| match s.binarize() {
                Err(Error::State(_)) => Err(Error::EmptyClass { class }),
                other => other,
            })
            .collect::<Result<_>>()?;
        Ok(ClassModel {
            config,
            features,
            inference: InferenceMode::default(),
            classes,
            sums,
        })
    }

    pub fn with_inference(mut self, mode: InferenceMode) -> Self {
        self.inference = mode;
        self
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn inference(&self) -> InferenceMode {
        self.inference
    }

    /// Binarized class hypervectors; class `c` is label `c`.
    pub fn classes(&self) -> &[PackedHypervector] {
        &self.classes
    }

    pub fn sums(&self) -> &[AccumulatorVector] {
        &self.sums
    }

    /// Rebuilds the encoder this model was trained with.
    pub fn encoder(&self) -> Result<Encoder> {
        Encoder::new(self.config.clone(), self.features)
    }

    fn check_encoder(&self, encoder: &Encoder) -> Result<()> {
        if encoder.config() != &self.config || encoder.features() != self.features {
            return Err(Error::Config(
                "encoder configuration does not match the model".into(),
            ));
        }
        Ok(())
    }
}

fn check_dataset(ds: &Dataset, encoder: &Encoder) -> Result<()> {
    if ds.features() != encoder.features() {
        return Err(Error::Config(format!(
            "{} has {} features, encoder expects {}",
            ds.name(),
            ds.features(),
            encoder.features()
        )));
    }
    if ds.bits() != encoder.config().bits {
        return Err(Error::Config(format!(
            "{} holds {}-bit pixels, encoder expects {}-bit",
            ds.name(),
            ds.bits(),
            encoder.config().bits
        )));
    }
    Ok(())
}

fn check_training_set(ds: &Dataset, encoder: &Encoder) -> Result<()> {
    check_dataset(ds, encoder)?;
    if ds.is_empty() {
        return Err(Error::Domain(format!("{} is empty", ds.name())));
    }
    if let Some(class) = ds.class_counts().iter().position(|&n| n == 0) {
        return Err(Error::EmptyClass { class });
    }
    Ok(())
}

/// Bundles every pixel contribution of every image into its class and
/// binarizes each class. One pass, no refinement.
pub fn train(ds: &Dataset, encoder: &Encoder, opts: &RunOptions) -> Result<(ClassModel, OpCounters)> {
    train_chunked(ds, encoder, opts, |image, counter, ops| {
        encoder.encode_into(image, counter, ops)
    })
}

/// Variant of [`train`] that binarizes each encoded image first, so a class
/// sum counts image votes rather than pixel contributions.
pub fn train_image_majority(
    ds: &Dataset,
    encoder: &Encoder,
    opts: &RunOptions,
) -> Result<(ClassModel, OpCounters)> {
    train_chunked(ds, encoder, opts, |image, counter, ops| {
        let vote = encoder.encode(image, ops)?.binarize()?;
        ops.binarize_windows += 1;
        counter.add(&vote)
    })
}

fn train_chunked(
    ds: &Dataset,
    encoder: &Encoder,
    opts: &RunOptions,
    add: impl Fn(&[u8], &mut BitSlicedCounter, &mut OpCounters) -> Result<()> + Sync,
) -> Result<(ClassModel, OpCounters)> {
    check_training_set(ds, encoder)?;
    for (image, _) in ds.iter() {
        encoder.check_image(image)?;
    }
    let (q, dim, h) = (ds.classes(), encoder.dim(), ds.features());
    let chunks: Vec<usize> = (0..ds.len()).step_by(CHUNK).collect();
    let partial = opts.install(|| {
        chunks
            .par_iter()
            .map(|&start| -> Result<(Vec<AccumulatorVector>, OpCounters)> {
                let end = (start + CHUNK).min(ds.len());
                let mut counters: Vec<Option<BitSlicedCounter>> = vec![None; q];
                let mut ops = OpCounters::default();
                for i in start..end {
                    let counter = counters[ds.label(i)].get_or_insert_with(|| BitSlicedCounter::new(dim));
                    add(ds.image(i), counter, &mut ops)?;
                }
                let sums = counters
                    .iter()
                    .map(|c| {
                        c.as_ref()
                            .map_or_else(|| AccumulatorVector::new(dim), BitSlicedCounter::to_accumulator)
                    })
                    .collect();
                Ok((sums, ops))
            })
            .collect::<Result<Vec<_>>>()
    })??;

    let mut sums = vec![AccumulatorVector::new(dim); q];
    let mut ops = OpCounters::default();
    for (chunk_sums, chunk_ops) in &partial {
        for (total, s) in sums.iter_mut().zip(chunk_sums) {
            total.merge(s)?;
        }
        ops.merge(chunk_ops);
    }
    ops.binarize_windows += q as u64;
    Ok((ClassModel::from_sums(encoder.config().clone(), h, sums)?, ops))
}

/// Same model as [`train`], computed from per-class pixel histograms.
///
/// Class sums are linear in the per-(position, value) image counts, so each
/// distinct contribution is visited once per class instead of once per
/// image. For uHD the contribution at `(i, v)` is `+1` exactly where
/// `v >= table[i][j]`, so the number of `+1` votes at dimension `j` is the
/// count of class images whose pixel `i` reaches `table[i][j]`.
pub fn train_fast_histogram(
    ds: &Dataset,
    encoder: &Encoder,
    opts: &RunOptions,
) -> Result<(ClassModel, OpCounters)> {
    check_training_set(ds, encoder)?;
    for (image, _) in ds.iter() {
        encoder.check_image(image)?;
    }
    let (q, dim, h) = (ds.classes(), encoder.dim(), ds.features());
    let levels = encoder.config().levels();
    let mut hist = vec![0u32; q * h * levels];
    for (image, label) in ds.iter() {
        let base = label * h * levels;
        for (i, &v) in image.iter().enumerate() {
            hist[base + i * levels + usize::from(v)] += 1;
        }
    }
    let class_counts = ds.class_counts();

    let per_class = opts.install(|| {
        (0..q)
            .into_par_iter()
            .map(|c| -> Result<(AccumulatorVector, OpCounters)> {
                let hist = &hist[c * h * levels..(c + 1) * h * levels];
                let mut ones = vec![0u32; dim];
                let mut ops = OpCounters::default();
                match encoder {
                    Encoder::Uhd(e) => {
                        let mut reach = vec![0u32; levels + 1];
                        for i in 0..h {
                            let counts = &hist[i * levels..(i + 1) * levels];
                            for v in (0..levels).rev() {
                                reach[v] = reach[v + 1] + counts[v];
                            }
                            for (o, &t) in ones.iter_mut().zip(e.table().row(i)) {
                                *o += reach[usize::from(t)];
                            }
                        }
                        ops.comparisons += (h * dim) as u64;
                    }
                    Encoder::Baseline(_) => {
                        for i in 0..h {
                            for v in 0..levels {
                                let n = hist[i * levels + v];
                                if n == 0 {
                                    continue;
                                }
                                let contribution = encoder.contribution(i, v as u8);
                                ops.bind_ops += 1;
                                for (w, &word) in contribution.words().iter().enumerate() {
                                    let mut bits = word;
                                    while bits != 0 {
                                        ones[w * 64 + bits.trailing_zeros() as usize] += n;
                                        bits &= bits - 1;
                                    }
                                }
                            }
                        }
                    }
                }
                let total = u32::try_from(class_counts[c] * h)
                    .map_err(|_| Error::Domain("class too large for 32-bit sums".into()))?;
                ops.accumulator_updates += u64::from(total);
                let mut acc = AccumulatorVector::new(dim);
                acc.add_counts(&ones, total)?;
                Ok((acc, ops))
            })
            .collect::<Result<Vec<_>>>()
    })??;

    let mut ops = OpCounters::default();
    let mut sums = Vec::with_capacity(q);
    for (acc, class_ops) in per_class {
        ops.merge(&class_ops);
        sums.push(acc);
    }
    ops.binarize_windows += q as u64;
    Ok((ClassModel::from_sums(encoder.config().clone(), h, sums)?, ops))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub scores: Vec<f64>,
}

/// Lowest index among the maxima.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (c, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = c;
        }
    }
    best
}

fn centered(sums: &[i32]) -> (Vec<f64>, f64) {
    let mean = sums.iter().map(|&s| f64::from(s)).sum::<f64>() / sums.len() as f64;
    let v: Vec<f64> = sums.iter().map(|&s| f64::from(s) - mean).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (v, norm)
}

fn raw(sums: &[i32]) -> (Vec<f64>, f64) {
    let v: Vec<f64> = sums.iter().map(|&s| f64::from(s)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (v, norm)
}

fn float_cosine(a: &(Vec<f64>, f64), b: &(Vec<f64>, f64)) -> f64 {
    if a.1 == 0.0 || b.1 == 0.0 {
        return 0.0;
    }
    a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum::<f64>() / (a.1 * b.1)
}

/// A model paired with its encoder and any per-class data the inference
/// mode needs.
pub struct Classifier<'a> {
    model: &'a ClassModel,
    encoder: &'a Encoder,
    prepared: Vec<(Vec<f64>, f64)>,
}

impl<'a> Classifier<'a> {
    pub fn new(model: &'a ClassModel, encoder: &'a Encoder) -> Result<Self> {
        model.check_encoder(encoder)?;
        let prepared = match model.inference {
            InferenceMode::Binarized => Vec::new(),
            InferenceMode::RawCosine => model.sums.iter().map(|s| raw(s.sums())).collect(),
            InferenceMode::CenteredCosine => model.sums.iter().map(|s| centered(s.sums())).collect(),
        };
        Ok(Classifier {
            model,
            encoder,
            prepared,
        })
    }

    pub fn predict(&self, image: &[u8], ops: &mut OpCounters) -> Result<Prediction> {
        if image.len() != self.model.features {
            return Err(Error::Config(format!(
                "image has {} pixels, model expects {}",
                image.len(),
                self.model.features
            )));
        }
        let bundle = self.encoder.encode(image, ops)?;
        let scores = match self.model.inference {
            InferenceMode::Binarized => {
                let test = bundle.binarize()?;
                ops.binarize_windows += 1;
                self.model
                    .classes
                    .iter()
                    .map(|c| cosine_similarity(&test, c))
                    .collect::<Result<Vec<_>>>()?
            }
            InferenceMode::RawCosine => {
                let test = raw(bundle.sums());
                self.prepared.iter().map(|c| float_cosine(&test, c)).collect()
            }
            InferenceMode::CenteredCosine => {
                let test = centered(bundle.sums());
                self.prepared.iter().map(|c| float_cosine(&test, c)).collect()
            }
        };
        Ok(Prediction {
            label: argmax(&scores),
            scores,
        })
    }
}

/// Encodes `image` and scores it against every class.
pub fn predict(model: &ClassModel, encoder: &Encoder, image: &[u8]) -> Result<Prediction> {
    Classifier::new(model, encoder)?.predict(image, &mut OpCounters::default())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    pub counters: OpCounters,
}

pub fn evaluate(
    model: &ClassModel,
    encoder: &Encoder,
    test: &Dataset,
    opts: &RunOptions,
) -> Result<EvalReport> {
    let classifier = Classifier::new(model, encoder)?;
    check_dataset(test, encoder)?;
    if test.is_empty() {
        return Err(Error::Domain(format!("{} is empty", test.name())));
    }
    let q = model.num_classes();
    if test.classes() > q {
        return Err(Error::Config(format!(
            "{} has {} classes, model has {q}",
            test.name(),
            test.classes()
        )));
    }
    let chunks: Vec<usize> = (0..test.len()).step_by(CHUNK).collect();
    let partial = opts.install(|| {
        chunks
            .par_iter()
            .map(|&start| -> Result<(Vec<Vec<u64>>, OpCounters)> {
                let mut confusion = vec![vec![0u64; q]; q];
                let mut ops = OpCounters::default();
                for i in start..(start + CHUNK).min(test.len()) {
                    let p = classifier.predict(test.image(i), &mut ops)?;
                    confusion[test.label(i)][p.label] += 1;
                }
                Ok((confusion, ops))
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let mut confusion = vec![vec![0u64; q]; q];
    let mut counters = OpCounters::default();
    for (part, ops) in &partial {
        for (row, prow) in confusion.iter_mut().zip(part) {
            for (x, y) in row.iter_mut().zip(prow) {
                *x += y;
            }
        }
        counters.merge(ops);
    }
    let correct = (0..q).map(|c| confusion[c][c] as usize).sum();
    Ok(EvalReport {
        accuracy: correct as f64 * 100.0 / test.len() as f64,
        correct,
        total: test.len(),
        confusion,
        counters,
    })
}

/// Iterations at which running averages are reported.
pub const SWEEP_CHECKPOINTS: [usize; 6] = [1, 5, 20, 50, 75, 100];

#[derive(Debug, Clone, PartialEq)]
pub struct IterationResult {
    pub iteration: usize,
    pub seed: u64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub trace: Vec<IterationResult>,
    /// `(i, mean accuracy over iterations 1..=i)` for each checkpoint `i <= i_max`.
    pub checkpoints: Vec<(usize, f64)>,
    pub counters: OpCounters,
}

impl SweepReport {
    pub fn mean(&self) -> f64 {
        self.trace.iter().map(|r| r.accuracy).sum::<f64>() / self.trace.len() as f64
    }

    /// Sample standard deviation of the per-iteration accuracies.
    pub fn std_dev(&self) -> f64 {
        let n = self.trace.len();
        if n < 2 {
            return 0.0;
        }
        let mean = self.mean();
        let var = self
            .trace
            .iter()
            .map(|r| (r.accuracy - mean).powi(2))
            .sum::<f64>()
            / (n - 1) as f64;
        var.sqrt()
    }
}

/// Trains and evaluates `i_max` times. Iteration `i` uses seed
/// `config.seed + i`, so baseline vectors are redrawn each time while uHD,
/// which ignores the seed, repeats itself.
pub fn iteration_sweep(
    train_set: &Dataset,
    test_set: &Dataset,
    config: &EncoderConfig,
    inference: InferenceMode,
    i_max: usize,
    opts: &RunOptions,
) -> Result<SweepReport> {
    if i_max == 0 {
        return Err(Error::Domain("a sweep needs at least one iteration".into()));
    }
    let mut trace = Vec::with_capacity(i_max);
    let mut counters = OpCounters::default();
    let mut cached: Option<f64> = None;
    for i in 1..=i_max {
        let seed = config.seed.wrapping_add(i as u64);
        let accuracy = match (config.kind, cached) {
            (EncoderKind::Uhd, Some(a)) => a,
            _ => {
                let cfg = EncoderConfig {
                    seed,
                    ..config.clone()
                };
                let encoder = Encoder::new(cfg, train_set.features())?;
                let (model, train_ops) = train_fast_histogram(train_set, &encoder, opts)?;
                let report = evaluate(&model.with_inference(inference), &encoder, test_set, opts)?;
                counters.merge(&train_ops);
                counters.merge(&report.counters);
                if config.kind == EncoderKind::Uhd {
                    cached = Some(report.accuracy);
                }
                report.accuracy
            }
        };
        trace.push(IterationResult {
            iteration: i,
            seed,
            accuracy,
        });
    }
    let checkpoints = SWEEP_CHECKPOINTS
        .iter()
        .filter(|&&c| c <= i_max)
        .map(|&c| (c, trace[..c].iter().map(|r| r.accuracy).sum::<f64>() / c as f64))
        .collect();
    Ok(SweepReport {
        trace,
        checkpoints,
        counters,
    })
}

const MAGIC: &[u8; 4] = b"UHD1";
pub const MODEL_FORMAT_VERSION: u32 = 1;

impl ClassModel {
    /// Config block: the encoder's canonical lines followed by model keys.
    fn config_block(&self) -> String {
        format!(
            "{}features={}\ninference={}\n",
            self.config.to_kv_text(),
            self.features,
            self.inference
        )
    }

    /// Layout, all integers little-endian:
    /// `"UHD1"`, u32 version, u32 config length, config text, u32 q, u32 D,
    /// q packed hypervectors, then per class u32 contributions and D i32 sums.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let block = self.config_block();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(block.len() as u32).to_le_bytes());
        out.extend_from_slice(block.as_bytes());
        out.extend_from_slice(&(self.classes.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.config.dim as u32).to_le_bytes());
        for c in &self.classes {
            c.write_to(&mut out).expect("writing to memory");
        }
        for s in &self.sums {
            out.extend_from_slice(&s.contributions().to_le_bytes());
            for &x in s.sums() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], source: &str) -> Result<Self> {
        let mut r = ByteReader {
            bytes,
            offset: 0,
            source,
        };
        if r.take(4, "magic")? != MAGIC {
            return Err(r.error_at(0, "not a model file (bad magic)"));
        }
        let version = r.u32("version")?;
        if version != MODEL_FORMAT_VERSION {
            return Err(r.error_at(4, &format!("unsupported model version {version}")));
        }
        let len = r.u32("config length")? as usize;
        let block_at = r.offset;
        let block = std::str::from_utf8(r.take(len, "config block")?)
            .map_err(|_| r.error_at(block_at, "config block is not UTF-8"))?;
        let (config, features, inference) =
            parse_config_block(block).map_err(|e| r.error_at(block_at, &e.to_string()))?;
        let q = r.u32("class count")? as usize;
        let dim_at = r.offset;
        let dim = r.u32("dimension")? as usize;
        if dim != config.dim {
            return Err(r.error_at(dim_at, "dimension disagrees with the config block"));
        }
        if q < 2 {
            return Err(r.error_at(dim_at - 4, "a model needs at least 2 classes"));
        }
        let mut classes = Vec::with_capacity(q);
        for c in 0..q {
            let at = r.offset;
            let words = dim.div_ceil(64);
            let chunk = r.take(4 + words * 8, "class hypervector")?;
            let hv = PackedHypervector::read_from(chunk)
                .map_err(|e| r.error_at(at, &format!("class {c}: {e}")))?;
            if hv.dim() != dim {
                return Err(r.error_at(at, &format!("class {c} has dimension {}", hv.dim())));
            }
            classes.push(hv);
        }
        let mut sums = Vec::with_capacity(q);
        for (c, class) in classes.iter().enumerate() {
            let at = r.offset;
            let contributions = r.u32("contributions")?;
            let data = r.take(dim * 4, "class sums")?;
            let values = data
                .chunks_exact(4)
                .map(|b| i32::from_le_bytes(b.try_into().expect("four bytes")))
                .collect();
            let acc = AccumulatorVector::from_sums(values, contributions)
                .map_err(|e| r.error_at(at, &format!("class {c}: {e}")))?;
            if acc.binarize().ok().as_ref() != Some(class) {
                return Err(r.error_at(at, &format!("class {c} sums disagree with its hypervector")));
            }
            sums.push(acc);
        }
        if r.offset != bytes.len() {
            return Err(r.error_at(r.offset, "trailing bytes"));
        }
        Ok(ClassModel {
            config,
            features,
            inference,
            classes,
            sums,
        })
    }

    /// Writes via a temporary file and rename, so readers never see a
    /// partial model.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("partial");
        let write = || -> std::io::Result<()> {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
            std::fs::rename(&tmp, path)
        };
        write().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        ClassModel::from_bytes(&bytes, &path.display().to_string())
    }
}

pub fn save_model(model: &ClassModel, path: impl AsRef<Path>) -> Result<()> {
    model.save(path)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ClassModel> {
    ClassModel::load(path)
}

fn parse_config_block(block: &str) -> Result<(EncoderConfig, usize, InferenceMode)> {
    let mut config = EncoderConfig::default();
    let mut features = None;
    let mut inference = InferenceMode::default();
    for line in block.lines().filter(|l| !l.trim().is_empty()) {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got '{line}'")))?;
        match key {
            "features" => {
                features = Some(
                    value
                        .parse()
                        .map_err(|_| Error::Config(format!("invalid feature count '{value}'")))?,
                )
            }
            "inference" => inference = value.parse()?,
            _ => config.set(key, value)?,
        }
    }
    let features = features.ok_or_else(|| Error::Config("missing features key".into()))?;
    config.validate()?;
    Ok((config, features, inference))
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    offset: usize,
    source: &'a str,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        match self
            .offset
            .checked_add(n)
            .and_then(|end| self.bytes.get(self.offset..end))
        {
            Some(chunk) => {
                self.offset += n;
                Ok(chunk)
            }
            None => Err(self.error_at(self.offset, &format!("truncated while reading {what}"))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("four bytes"),
        ))
    }

    fn error_at(&self, offset: usize, message: &str) -> Error {
        Error::format(self.source, format!("byte {offset}"), message)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::quantize_dataset;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy(n: usize, features: usize, q: u16, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let images: Vec<Vec<u8>> = (0..n)
            .map(|_| (0..features).map(|_| rng.gen()).collect())
            .collect();
        let labels: Vec<u16> = (0..n).map(|i| i as u16 % q).collect();
        quantize_dataset(&Dataset::from_images("toy", &images, &labels).unwrap(), 4).unwrap()
    }

    fn configs(dim: usize) -> Vec<EncoderConfig> {
        vec![
            EncoderConfig::uhd(dim),
            EncoderConfig {
                use_level_bank: false,
                ..EncoderConfig::uhd(dim)
            },
            EncoderConfig::baseline(dim, 3),
        ]
    }

    #[test]
    fn image_majority_counts_binarized_votes() {
        let ds = toy(40, 10, 3, 8);
        for cfg in configs(80) {
            let enc = Encoder::new(cfg, 10).unwrap();
            let (model, ops) = train_image_majority(&ds, &enc, &RunOptions::with_workers(2)).unwrap();
            let mut votes = vec![vec![0i32; 80]; 3];
            for (image, label) in ds.iter() {
                let bits = enc
                    .encode(image, &mut OpCounters::default())
                    .unwrap()
                    .binarize()
                    .unwrap();
                for (s, b) in votes[label].iter_mut().zip(bits.to_bipolar()) {
                    *s += i32::from(b);
                }
            }
            for (c, (acc, expected)) in model.sums().iter().zip(&votes).enumerate() {
                assert_eq!(acc.sums(), expected.as_slice());
                assert_eq!(acc.contributions() as usize, ds.class_counts()[c]);
            }
            assert_eq!(ops.binarize_windows, 40 + 3);
        }
    }

    #[test]
    fn single_image_classes() {
        let ds = toy(3, 12, 3, 1);
        for cfg in configs(96) {
            let enc = Encoder::new(cfg, 12).unwrap();
            let (model, _) = train(&ds, &enc, &RunOptions::default()).unwrap();
            for (c, (image, _)) in ds.iter().enumerate() {
                let mut ops = OpCounters::default();
                assert_eq!(
                    model.classes()[c],
                    enc.encode(image, &mut ops).unwrap().binarize().unwrap()
                );
                for mode in [
                    InferenceMode::Binarized,
                    InferenceMode::RawCosine,
                    InferenceMode::CenteredCosine,
                ] {
                    let m = model.clone().with_inference(mode);
                    let p = predict(&m, &enc, image).unwrap();
                    assert_eq!(p.label, c, "{mode}");
                    assert!((p.scores[c] - 1.0).abs() < 1e-12, "{mode}: {:?}", p.scores);
                }
            }
        }
    }

    #[test]
    fn histogram_training_matches_direct_training() {
        let ds = toy(40, 20, 4, 2);
        for cfg in configs(200) {
            let enc = Encoder::new(cfg, 20).unwrap();
            let a = train(&ds, &enc, &RunOptions::default()).unwrap().0;
            let b = train_fast_histogram(&ds, &enc, &RunOptions::default()).unwrap().0;
            assert_eq!(a, b);
        }
    }

    #[test]
    fn training_matches_dense_reference() {
        let ds = toy(10, 6, 2, 3);
        for cfg in configs(16) {
            let enc = Encoder::new(cfg, 6).unwrap();
            let (model, _) = train(&ds, &enc, &RunOptions::default()).unwrap();
            for c in 0..2 {
                let mut dense = vec![0i32; 16];
                for (image, label) in ds.iter().filter(|(_, l)| *l == c) {
                    let _ = label;
                    for (i, &v) in image.iter().enumerate() {
                        for (d, b) in dense.iter_mut().zip(enc.contribution(i, v).to_bipolar()) {
                            *d += i32::from(b);
                        }
                    }
                }
                assert_eq!(model.sums()[c].sums(), dense.as_slice());
            }
        }
    }

    #[test]
    fn duplicated_data_gives_same_classes() {
        let ds = toy(12, 10, 3, 4);
        let doubled = ds.select(&(0..24).map(|i| i % 12).collect::<Vec<_>>());
        let enc = Encoder::new(EncoderConfig::baseline(128, 1), 10).unwrap();
        let a = train(&ds, &enc, &RunOptions::default()).unwrap().0;
        let b = train(&doubled, &enc, &RunOptions::default()).unwrap().0;
        assert_eq!(a.classes(), b.classes());
    }

    #[test]
    fn empty_class_is_named() {
        let ds = Dataset::new("gap", 2, Some(3), vec![0, 1, 2, 3], vec![0, 2]).unwrap();
        let ds = quantize_dataset(&ds, 4).unwrap();
        let enc = Encoder::new(EncoderConfig::uhd(64), 2).unwrap();
        assert!(matches!(
            train(&ds, &enc, &RunOptions::default()),
            Err(Error::EmptyClass { class: 1 })
        ));
        assert!(matches!(
            train_fast_histogram(&ds, &enc, &RunOptions::default()),
            Err(Error::EmptyClass { class: 1 })
        ));
    }

    #[test]
    fn unquantized_data_is_rejected() {
        let ds = Dataset::from_images("raw", &[vec![1, 2], vec![3, 4]], &[0, 1]).unwrap();
        let enc = Encoder::new(EncoderConfig::uhd(64), 2).unwrap();
        assert!(matches!(
            train(&ds, &enc, &RunOptions::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn ties_go_to_lowest_index() {
        assert_eq!(argmax(&[0.5, 0.9, 0.9, 0.1]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
        let ds = toy(1, 8, 1, 5);
        let enc = Encoder::new(EncoderConfig::uhd(64), 8).unwrap();
        let mut ops = OpCounters::default();
        let acc = enc.encode(ds.image(0), &mut ops).unwrap();
        let model = ClassModel::from_sums(enc.config().clone(), 8, vec![acc.clone(), acc]).unwrap();
        for mode in [InferenceMode::Binarized, InferenceMode::CenteredCosine] {
            assert_eq!(
                predict(&model.clone().with_inference(mode), &enc, ds.image(0))
                    .unwrap()
                    .label,
                0
            );
        }
    }

    #[test]
    fn scores_match_dense_cosine() {
        let ds = toy(30, 16, 3, 6);
        let enc = Encoder::new(EncoderConfig::uhd(128), 16).unwrap();
        let (model, _) = train(&ds, &enc, &RunOptions::default()).unwrap();
        let probe = ds.image(7);
        let mut ops = OpCounters::default();
        let test = enc.encode(probe, &mut ops).unwrap();
        let dense_cos = |a: &[f64], b: &[f64]| {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            dot / (a.iter().map(|x| x * x).sum::<f64>().sqrt() * b.iter().map(|x| x * x).sum::<f64>().sqrt())
        };
        let bipolar =
            |v: &PackedHypervector| v.to_bipolar().iter().map(|&x| f64::from(x)).collect::<Vec<_>>();
        let as_f = |s: &[i32]| s.iter().map(|&x| f64::from(x)).collect::<Vec<_>>();
        let center = |v: Vec<f64>| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.into_iter().map(|x| x - m).collect::<Vec<_>>()
        };

        let p = predict(
            &model.clone().with_inference(InferenceMode::Binarized),
            &enc,
            probe,
        )
        .unwrap();
        let t = bipolar(&test.binarize().unwrap());
        for c in 0..3 {
            assert!((p.scores[c] - dense_cos(&t, &bipolar(&model.classes()[c]))).abs() < 1e-12);
        }
        let p = predict(
            &model.clone().with_inference(InferenceMode::RawCosine),
            &enc,
            probe,
        )
        .unwrap();
        for c in 0..3 {
            let want = dense_cos(&as_f(test.sums()), &as_f(model.sums()[c].sums()));
            assert!((p.scores[c] - want).abs() < 1e-12);
        }
        let p = predict(
            &model.clone().with_inference(InferenceMode::CenteredCosine),
            &enc,
            probe,
        )
        .unwrap();
        for c in 0..3 {
            let want = dense_cos(&center(as_f(test.sums())), &center(as_f(model.sums()[c].sums())));
            assert!((p.scores[c] - want).abs() < 1e-12);
            assert_eq!(p.label, argmax(&p.scores));
        }
    }

    #[test]
    fn evaluate_on_training_singletons_is_perfect() {
        let ds = toy(4, 30, 4, 7);
        let enc = Encoder::new(EncoderConfig::uhd(512), 30).unwrap();
        let (model, _) = train(&ds, &enc, &RunOptions::default()).unwrap();
        let report = evaluate(&model, &enc, &ds, &RunOptions::default()).unwrap();
        assert_eq!(report.accuracy, 100.0);
        assert_eq!(report.confusion[2], vec![0, 0, 1, 0]);
        assert_eq!(report.counters.bind_ops, 0);
        assert_eq!(report.counters.memory_fetches, 4 * 30);
    }

    #[test]
    fn sweep_structure() {
        let ds = toy(20, 10, 2, 8);
        let mode = InferenceMode::CenteredCosine;
        let one = iteration_sweep(
            &ds,
            &ds,
            &EncoderConfig::baseline(64, 0),
            mode,
            1,
            &RunOptions::default(),
        )
        .unwrap();
        assert_eq!(one.trace.len(), 1);
        assert_eq!(one.checkpoints, vec![(1, one.trace[0].accuracy)]);
        assert_eq!(one.trace[0].seed, 1);

        let u = iteration_sweep(&ds, &ds, &EncoderConfig::uhd(64), mode, 5, &RunOptions::default()).unwrap();
        assert!(u.trace.iter().all(|r| r.accuracy == u.trace[0].accuracy));
        assert_eq!(u.checkpoints.iter().map(|c| c.0).collect::<Vec<_>>(), vec![1, 5]);
        assert_eq!(u.std_dev(), 0.0);
        assert!(iteration_sweep(&ds, &ds, &EncoderConfig::uhd(64), mode, 0, &RunOptions::default()).is_err());
    }

    #[test]
    fn model_bytes_round_trip_and_reject_damage() {
        let ds = toy(9, 5, 3, 9);
        let enc = Encoder::new(EncoderConfig::baseline(70, 4), 5).unwrap();
        let (model, _) = train(&ds, &enc, &RunOptions::default()).unwrap();
        let model = model.with_inference(InferenceMode::RawCosine);
        let bytes = model.to_bytes();
        assert_eq!(&bytes[..4], b"UHD1");
        assert_eq!(ClassModel::from_bytes(&bytes, "m").unwrap(), model);
        for cut in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(
                ClassModel::from_bytes(&bytes[..cut], "m"),
                Err(Error::Format { .. })
            ));
        }
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(ClassModel::from_bytes(&bad, "m")
            .unwrap_err()
            .to_string()
            .contains("version"));
        let mut extra = bytes;
        extra.push(0);
        assert!(ClassModel::from_bytes(&extra, "m").is_err());
    }
}
