//! Run configuration: a sectioned TOML file, overridden by command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use uhd::data::{load_csv, load_mnist_dir, quantize_dataset, subsample, Dataset};
use uhd::encoders::{EncoderConfig, DEFAULT_BANK_BUDGET};
use uhd::model::{InferenceMode, RunOptions};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSection,
    pub encoder: EncoderSection,
    pub model: ModelSection,
    pub run: RunSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    /// `idx` (a directory holding the train and t10k file pairs) or `csv`.
    pub format: String,
    /// IDX directory.
    pub path: Option<PathBuf>,
    /// CSV training file.
    pub train: Option<PathBuf>,
    /// CSV test file.
    pub test: Option<PathBuf>,
    /// Per-class cap on training images; 0 keeps everything.
    pub train_limit: usize,
    /// Cap on test images, taken from the front; 0 keeps everything.
    pub test_limit: usize,
    pub subsample_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSection {
    pub kind: String,
    pub dim: usize,
    pub bits: u32,
    pub seed: u64,
    pub generator: String,
    pub lfsr_width: u32,
    pub comparator_path: String,
    pub use_level_bank: bool,
    pub bank_budget_bytes: u64,
    pub skip_initial_zero: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub inference: String,
    /// `direct` bundles every encoded image; `histogram` uses per-class
    /// pixel histograms and yields the same model; `image-majority`
    /// binarizes each image before bundling.
    pub training: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// 0 means available parallelism.
    pub workers: usize,
    pub iters: usize,
    pub dims: Vec<usize>,
    pub out: PathBuf,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            format: "idx".into(),
            path: None,
            train: None,
            test: None,
            train_limit: 0,
            test_limit: 0,
            subsample_seed: 0,
        }
    }
}

impl Default for EncoderSection {
    fn default() -> Self {
        let d = EncoderConfig::default();
        EncoderSection {
            kind: d.kind.to_string(),
            dim: d.dim,
            bits: d.bits,
            seed: d.seed,
            generator: d.generator.to_string(),
            lfsr_width: d.lfsr_width,
            comparator_path: d.comparator_path.to_string(),
            use_level_bank: d.use_level_bank,
            bank_budget_bytes: DEFAULT_BANK_BUDGET,
            skip_initial_zero: d.skip_initial_zero,
        }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            inference: InferenceMode::default().to_string(),
            training: "direct".into(),
        }
    }
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            workers: 0,
            iters: 1,
            dims: vec![1024, 2048, 8192],
            out: PathBuf::from("runs"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Training {
    Direct,
    Histogram,
    ImageMajority,
}

/// Loaded and quantized splits.
pub struct Splits {
    pub train: Option<Dataset>,
    pub test: Option<Dataset>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Points the dataset at `spec`: a directory selects IDX, a file (or a
    /// comma-separated `train,test` pair) selects CSV.
    pub fn set_dataset(&mut self, spec: &str) {
        let mut parts = spec.splitn(2, ',');
        let first = PathBuf::from(parts.next().unwrap_or_default());
        let second = parts.next().map(PathBuf::from);
        if second.is_none() && (first.is_dir() || first.extension().is_none()) {
            self.dataset.format = "idx".into();
            self.dataset.path = Some(first);
            self.dataset.train = None;
            self.dataset.test = None;
        } else {
            self.dataset.format = "csv".into();
            self.dataset.path = None;
            self.dataset.train = Some(first);
            self.dataset.test = second;
        }
    }

    pub fn encoder_config(&self) -> Result<EncoderConfig, CliError> {
        let e = &self.encoder;
        let parse = |r: uhd::Result<()>| r.map_err(|err| CliError::usage(err.to_string()));
        let mut cfg = EncoderConfig::default();
        parse(cfg.set("encoder", &e.kind))?;
        parse(cfg.set("generator", &e.generator))?;
        parse(cfg.set("comparator_path", &e.comparator_path))?;
        cfg.dim = e.dim;
        cfg.bits = e.bits;
        cfg.seed = e.seed;
        cfg.lfsr_width = e.lfsr_width;
        cfg.use_level_bank = e.use_level_bank;
        cfg.bank_budget_bytes = e.bank_budget_bytes;
        cfg.skip_initial_zero = e.skip_initial_zero;
        cfg.validate().map_err(|err| CliError::usage(err.to_string()))?;
        Ok(cfg)
    }

    pub fn inference(&self) -> Result<InferenceMode, CliError> {
        self.model
            .inference
            .parse()
            .map_err(|e: uhd::Error| CliError::usage(e.to_string()))
    }

    pub fn training(&self) -> Result<Training, CliError> {
        match self.model.training.as_str() {
            "direct" => Ok(Training::Direct),
            "histogram" => Ok(Training::Histogram),
            "image-majority" => Ok(Training::ImageMajority),
            other => Err(CliError::usage(format!(
                "unknown training '{other}', expected direct, histogram or image-majority"
            ))),
        }
    }

    pub fn run_options(&self) -> RunOptions {
        RunOptions::with_workers(self.run.workers)
    }

    /// Checks every field that can be checked without touching the disk.
    pub fn validate(&self) -> Result<(), CliError> {
        self.encoder_config()?;
        self.inference()?;
        self.training()?;
        if !matches!(self.dataset.format.as_str(), "idx" | "csv") {
            return Err(CliError::usage(format!(
                "unknown dataset format '{}', expected idx or csv",
                self.dataset.format
            )));
        }
        if self.run.iters == 0 {
            return Err(CliError::usage("iters must be at least 1"));
        }
        if self.run.dims.is_empty() {
            return Err(CliError::usage("dims must list at least one dimension"));
        }
        Ok(())
    }

    pub fn load_splits(&self) -> Result<Splits, CliError> {
        let (train, test) = match self.dataset.format.as_str() {
            "idx" => {
                let dir = self
                    .dataset
                    .path
                    .as_ref()
                    .ok_or_else(|| CliError::usage("dataset.path (or --dataset) is required"))?;
                let (train, test) = load_mnist_dir(dir)?;
                (Some(train), Some(test))
            }
            _ => {
                let train = self.dataset.train.as_ref().map(load_csv).transpose()?;
                let test = self.dataset.test.as_ref().map(load_csv).transpose()?;
                if train.is_none() && test.is_none() {
                    return Err(CliError::usage(
                        "dataset.train or dataset.test is required for csv",
                    ));
                }
                (train, test)
            }
        };
        let bits = self.encoder.bits;
        let train = match train {
            Some(ds) => {
                let ds = quantize_dataset(&ds, bits)?;
                Some(match self.dataset.train_limit {
                    0 => ds,
                    limit => subsample(&ds, limit, self.dataset.subsample_seed)?,
                })
            }
            None => None,
        };
        let test = match test {
            Some(ds) => {
                let ds = quantize_dataset(&ds, bits)?;
                Some(match self.dataset.test_limit {
                    0 => ds,
                    limit => ds.take(limit),
                })
            }
            None => None,
        };
        Ok(Splits { train, test })
    }
}
