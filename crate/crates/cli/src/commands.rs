//! Command implementations. Each writes its detail to a JSON report under
//! the output directory and prints one `key=value` summary line.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Value};
use uhd::encoders::{ComparatorPath, Encoder, EncoderConfig, EncoderKind};
use uhd::model::{
    evaluate, iteration_sweep, load_model, train_fast_histogram, train_image_majority, EvalReport,
    OpCounters, SweepReport,
};
use uhd::sobol::{build_sobol_table, SobolConfig};
use uhd::unary::{
    counter_comparator_reference, encode_unary, masked_binarize_window, unary_compare_ge, UnaryStreamTable,
};

use crate::config::{RunConfig, Training};
use crate::CliError;

fn counters_json(ops: &OpCounters) -> Value {
    json!({
        "comparisons": ops.comparisons,
        "bind_ops": ops.bind_ops,
        "accumulator_updates": ops.accumulator_updates,
        "memory_fetches": ops.memory_fetches,
        "binarize_windows": ops.binarize_windows,
    })
}

fn eval_json(report: &EvalReport) -> Value {
    json!({
        "accuracy": report.accuracy,
        "correct": report.correct,
        "total": report.total,
        "confusion": report.confusion,
        "counters": counters_json(&report.counters),
    })
}

fn sweep_json(report: &SweepReport) -> Value {
    json!({
        "trace": report.trace.iter().map(|r| json!({
            "iteration": r.iteration,
            "seed": r.seed,
            "accuracy": r.accuracy,
        })).collect::<Vec<_>>(),
        "checkpoints": report.checkpoints.iter().map(|&(i, a)| json!({"iteration": i, "mean_accuracy": a})).collect::<Vec<_>>(),
        "mean": report.mean(),
        "std_dev": report.std_dev(),
        "counters": counters_json(&report.counters),
    })
}

/// Fields shared by every report: enough to replay the run.
fn envelope(command: &str, cfg: &RunConfig, start: Instant) -> serde_json::Map<String, Value> {
    let mut map = serde_json::Map::new();
    map.insert("command".into(), json!(command));
    map.insert("config".into(), json!(cfg.to_toml()));
    map.insert(
        "seeds".into(),
        json!({"encoder": cfg.encoder.seed, "subsample": cfg.dataset.subsample_seed}),
    );
    map.insert("workers".into(), json!(cfg.run_options().resolved_workers()));
    map.insert("wall_clock_seconds".into(), json!(start.elapsed().as_secs_f64()));
    map
}

fn out_dir(cfg: &RunConfig) -> Result<&Path, CliError> {
    let dir = cfg.run.out.as_path();
    fs::create_dir_all(dir).map_err(|e| CliError::data(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}

fn write_report(
    cfg: &RunConfig,
    name: &str,
    report: serde_json::Map<String, Value>,
) -> Result<PathBuf, CliError> {
    let path = out_dir(cfg)?.join(name);
    let text = serde_json::to_string_pretty(&Value::Object(report)).expect("report serializes");
    write_file(&path, format!("{text}\n").as_bytes())?;
    Ok(path)
}

fn dim_label(dim: usize) -> String {
    if dim.is_multiple_of(1024) {
        format!("{}K", dim / 1024)
    } else {
        dim.to_string()
    }
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let start = Instant::now();
    let opts = cfg.run_options();
    let splits = cfg.load_splits()?;
    let train_set = splits
        .train
        .ok_or_else(|| CliError::usage("train needs a training split (dataset.train)"))?;
    let encoder = Encoder::new(cfg.encoder_config()?, train_set.features())?;
    let (model, train_ops) = match cfg.training()? {
        Training::Direct => uhd::model::train(&train_set, &encoder, &opts)?,
        Training::Histogram => train_fast_histogram(&train_set, &encoder, &opts)?,
        Training::ImageMajority => train_image_majority(&train_set, &encoder, &opts)?,
    };
    let model = model.with_inference(cfg.inference()?);
    let model_path = out_dir(cfg)?.join("model.uhd");
    model.save(&model_path)?;
    let eval = splits
        .test
        .as_ref()
        .map(|test| evaluate(&model, &encoder, test, &opts))
        .transpose()?;

    let mut report = envelope("train", cfg, start);
    report.insert("model".into(), json!(model_path));
    report.insert("train_images".into(), json!(train_set.len()));
    report.insert("classes".into(), json!(model.num_classes()));
    report.insert("train_counters".into(), counters_json(&train_ops));
    report.insert("eval".into(), eval.as_ref().map_or(Value::Null, eval_json));
    let report_path = write_report(cfg, "train-report.json", report)?;
    let accuracy = eval.map_or("n/a".to_string(), |e| format!("{:.2}", e.accuracy));
    println!(
        "train encoder={} dim={} images={} classes={} accuracy={accuracy} model={} report={}",
        cfg.encoder.kind,
        model.dim(),
        train_set.len(),
        model.num_classes(),
        model_path.display(),
        report_path.display()
    );
    Ok(())
}

/// Evaluates on the test split, or on the training split when only that is
/// configured. The model's stored inference mode applies unless
/// `override_inference` is set.
pub fn eval(cfg: &RunConfig, model_path: &Path, override_inference: bool) -> Result<(), CliError> {
    let start = Instant::now();
    let mut model = load_model(model_path)?;
    if override_inference {
        model = model.with_inference(cfg.inference()?);
    }
    let mut cfg = cfg.clone();
    cfg.encoder.bits = model.config().bits;
    let splits = cfg.load_splits()?;
    let test = splits
        .test
        .or(splits.train)
        .ok_or_else(|| CliError::usage("eval needs a dataset"))?;
    let encoder = model.encoder()?;
    let report = evaluate(&model, &encoder, &test, &cfg.run_options())?;

    let mut json = envelope("eval", &cfg, start);
    json.insert("model".into(), json!(model_path));
    json.insert("inference".into(), json!(model.inference().as_str()));
    json.insert("eval".into(), eval_json(&report));
    let report_path = write_report(&cfg, "eval-report.json", json)?;
    println!(
        "eval accuracy={:.2} correct={} total={} report={}",
        report.accuracy,
        report.correct,
        report.total,
        report_path.display()
    );
    Ok(())
}

pub fn sweep(cfg: &RunConfig) -> Result<(), CliError> {
    let start = Instant::now();
    let splits = cfg.load_splits()?;
    let (train_set, test) = match (splits.train, splits.test) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(CliError::usage("sweep needs both a training and a test split")),
    };
    let sweep = iteration_sweep(
        &train_set,
        &test,
        &cfg.encoder_config()?,
        cfg.inference()?,
        cfg.run.iters,
        &cfg.run_options(),
    )?;
    let mut json = envelope("sweep", cfg, start);
    json.insert("sweep".into(), sweep_json(&sweep));
    let report_path = write_report(cfg, "sweep-report.json", json)?;
    println!(
        "sweep encoder={} dim={} iters={} mean={:.2} std_dev={:.2} report={}",
        cfg.encoder.kind,
        cfg.encoder.dim,
        cfg.run.iters,
        sweep.mean(),
        sweep.std_dev(),
        report_path.display()
    );
    Ok(())
}

fn per_iteration(ops: &OpCounters, iterations: usize) -> [f64; 5] {
    let n = iterations as f64;
    [
        ops.comparisons as f64 / n,
        ops.bind_ops as f64 / n,
        ops.accumulator_updates as f64 / n,
        ops.memory_fetches as f64 / n,
        ops.binarize_windows as f64 / n,
    ]
}

const COUNTER_NAMES: [&str; 5] = [
    "comparisons",
    "bind_ops",
    "accumulator_updates",
    "memory_fetches",
    "binarize_windows",
];

pub fn compare(cfg: &RunConfig) -> Result<(), CliError> {
    let start = Instant::now();
    let splits = cfg.load_splits()?;
    let (train_set, test) = match (splits.train, splits.test) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(CliError::usage("compare needs both a training and a test split")),
    };
    let base = cfg.encoder_config()?;
    let inference = cfg.inference()?;
    let opts = cfg.run_options();
    let iters = cfg.run.iters;

    let mut rows = Vec::new();
    let mut table = Vec::new();
    let mut columns: Vec<usize> = Vec::new();
    for &dim in &cfg.run.dims {
        let with = |kind| EncoderConfig {
            kind,
            dim,
            ..base.clone()
        };
        let baseline_cfg = with(EncoderKind::Baseline);
        baseline_cfg
            .validate()
            .map_err(|e| CliError::usage(e.to_string()))?;
        let baseline = iteration_sweep(&train_set, &test, &baseline_cfg, inference, iters, &opts)?;
        let uhd = iteration_sweep(&train_set, &test, &with(EncoderKind::Uhd), inference, 1, &opts)?;
        let uhd_accuracy = uhd.trace[0].accuracy;

        let b_ops = per_iteration(&baseline.counters, iters);
        let u_ops = per_iteration(&uhd.counters, 1);
        let mut ratios = serde_json::Map::new();
        for (k, name) in COUNTER_NAMES.iter().enumerate() {
            let ratio = if u_ops[k] == 0.0 {
                Value::Null
            } else {
                json!(b_ops[k] / u_ops[k])
            };
            ratios.insert((*name).into(), ratio);
        }
        columns = baseline.checkpoints.iter().map(|&(i, _)| i).collect();
        let cells: Vec<String> = baseline
            .checkpoints
            .iter()
            .map(|&(_, a)| format!("{a:.2}"))
            .collect();
        table.push(format!(
            "| {} | {} | {uhd_accuracy:.2} |",
            dim_label(dim),
            cells.join(" | ")
        ));
        rows.push(json!({
            "dim": dim,
            "label": dim_label(dim),
            "baseline": sweep_json(&baseline),
            "uhd_accuracy": uhd_accuracy,
            "uhd_counters": counters_json(&uhd.counters),
            "counter_ratio_baseline_over_uhd": ratios,
        }));
    }

    let header: Vec<String> = columns.iter().map(|i| format!("baseline i={i}")).collect();
    let mut text = format!(
        "| D | {} | uHD i=1 |\n|---|{}---|\n",
        header.join(" | "),
        "---|".repeat(columns.len())
    );
    for line in &table {
        text.push_str(line);
        text.push('\n');
    }
    let table_path = out_dir(cfg)?.join("compare-table.md");
    write_file(&table_path, text.as_bytes())?;

    let mut json = envelope("compare", cfg, start);
    json.insert("checkpoints".into(), json!(columns));
    json.insert("rows".into(), json!(rows));
    let report_path = write_report(cfg, "compare-report.json", json)?;
    println!(
        "compare rows={} checkpoints={} table={} report={}",
        rows.len(),
        columns.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
        table_path.display(),
        report_path.display()
    );
    Ok(())
}

pub fn sobol_dump(cfg: &RunConfig, features: usize) -> Result<(), CliError> {
    let start = Instant::now();
    let (dim, bits) = (cfg.encoder.dim, cfg.encoder.bits);
    let config = SobolConfig::new(features, dim)
        .with_quantization_bits(bits)
        .with_skip_initial_zero(cfg.encoder.skip_initial_zero);
    let table = build_sobol_table(config)?;
    let bytes = table.to_binary()?;
    let path = out_dir(cfg)?.join(format!("sobol-h{features}-d{dim}-m{bits}.bin"));
    write_file(&path, &bytes)?;

    let levels = 1usize << bits;
    let mut min = vec![u64::MAX; levels];
    let mut max = vec![0u64; levels];
    for i in 0..features {
        for (l, c) in table.level_counts(i).into_iter().enumerate() {
            min[l] = min[l].min(c);
            max[l] = max[l].max(c);
        }
    }
    let expected = (dim % levels == 0).then(|| (dim / levels) as u64);
    let balanced = expected.is_some_and(|e| min.iter().chain(&max).all(|&c| c == e));

    let mut json = envelope("sobol-dump", cfg, start);
    json.insert("file".into(), json!(path));
    json.insert("bytes".into(), json!(bytes.len()));
    json.insert("positions".into(), json!(features));
    json.insert("level_count_min".into(), json!(min));
    json.insert("level_count_max".into(), json!(max));
    json.insert("expected_per_level".into(), json!(expected));
    json.insert("balanced".into(), json!(balanced));
    let report_path = write_report(cfg, "sobol-report.json", json)?;
    println!(
        "sobol-dump positions={features} points={dim} bits={bits} bytes={} level_count_min={} level_count_max={} balanced={balanced} file={} report={}",
        bytes.len(),
        min.iter().min().unwrap_or(&0),
        max.iter().max().unwrap_or(&0),
        path.display(),
        report_path.display()
    );
    Ok(())
}

/// Stream lengths covered exhaustively by the comparator check.
const MAX_SELFTEST_LENGTH: usize = 64;
/// Window capacities whose every bit pattern is checked.
const MAX_SELFTEST_WINDOW: usize = 16;

pub fn selftest() -> Result<(), CliError> {
    let start = Instant::now();
    let mut failures = Vec::new();

    let mut pairs = 0u64;
    for n in 1..=MAX_SELFTEST_LENGTH {
        for a in 0..=n {
            let data = encode_unary(a, n)?;
            if data != counter_comparator_reference(a, n)? {
                failures.push(format!(
                    "encode_unary({a}, {n}) differs from the counter reference"
                ));
            }
            for b in 0..=n {
                if unary_compare_ge(&data, &encode_unary(b, n)?)? != (a >= b) {
                    failures.push(format!("comparator wrong for a={a}, b={b}, N={n}"));
                }
                pairs += 1;
            }
        }
    }

    for bits in 1..=8 {
        let ust = UnaryStreamTable::new(bits)?;
        for v in 0..ust.len() {
            let s = ust.fetch(v)?;
            if !s.is_thermometer() || s.value() != v {
                failures.push(format!("stream table M={bits} entry {v} is not thermometer({v})"));
            }
        }
    }

    let mut windows = 0u64;
    for h in 1..=MAX_SELFTEST_WINDOW {
        for pattern in 0u32..1 << h {
            let bits: Vec<bool> = (0..h).map(|k| pattern >> k & 1 == 1).collect();
            let expected = pattern.count_ones() as usize >= h.div_ceil(2);
            if masked_binarize_window(h, &bits)? != expected {
                failures.push(format!("masked latch wrong for H={h}, pattern {pattern:#b}"));
            }
            windows += 1;
        }
    }

    let mut vectors = 0u64;
    for bits in [1u32, 2, 4, 8] {
        let config = |path| EncoderConfig {
            bits,
            comparator_path: path,
            use_level_bank: false,
            ..EncoderConfig::uhd(320)
        };
        let gate = Encoder::new(config(ComparatorPath::GateLevelUnary), 8)?;
        let scalar = Encoder::new(config(ComparatorPath::ScalarFast), 8)?;
        for i in 0..8 {
            for v in 0..1u16 << bits {
                if gate.contribution(i, v as u8) != scalar.contribution(i, v as u8) {
                    failures.push(format!(
                        "comparator paths differ at M={bits}, position {i}, value {v}"
                    ));
                }
                vectors += 1;
            }
        }
    }

    let status = if failures.is_empty() { "pass" } else { "fail" };
    println!(
        "selftest comparator_pairs={pairs} windows={windows} level_vectors={vectors} failures={} status={status} seconds={:.3}",
        failures.len(),
        start.elapsed().as_secs_f64()
    );
    match failures.first() {
        None => Ok(()),
        Some(first) => Err(CliError::data(format!(
            "{} selftest failures, first: {first}",
            failures.len()
        ))),
    }
}
