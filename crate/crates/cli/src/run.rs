//! Resolved invocations, run manifests and command execution.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tsnn::dataset::{ingest_with_manifest, Split};
use tsnn::eval::{self, EvalOptions, GridValue, SweepAxis};
use tsnn::interpret::{self, WEEKDAYS};
use tsnn::predictor::Query;
use tsnn::synthetic::{periodic_series, SyntheticSpec};
use tsnn::{
    build_bank, load_bank, make_windows, near_zero_ratio, predict_batch, save_bank, Manifest, MemoryBank, ModelConfig,
    RawSeries, SplitSpec, Strategy, TsnnError,
};

use crate::error::CliError;

pub const RUN_MANIFEST: &str = "run_manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub data: PathBuf,
    pub manifest: PathBuf,
    pub split: SplitSpec,
}

/// A command with every default filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Invocation {
    Validate {
        dataset: Dataset,
    },
    Build {
        dataset: Dataset,
        config: ModelConfig,
        sensors: Vec<usize>,
    },
    Predict {
        dataset: Dataset,
        config: ModelConfig,
        sensors: Vec<usize>,
        banks: Option<PathBuf>,
        strategy: Strategy,
        queries: Vec<usize>,
        trace: bool,
    },
    Evaluate {
        dataset: Dataset,
        config: ModelConfig,
        options: EvalOptions,
        baseline: bool,
    },
    Sweep {
        dataset: Dataset,
        config: ModelConfig,
        options: EvalOptions,
        axis: SweepAxis,
        grid: Vec<GridValue>,
    },
    Explain {
        dataset: Dataset,
        config: ModelConfig,
        sensor: usize,
        queries: Vec<usize>,
        banks: Option<PathBuf>,
    },
    Synth {
        spec: SyntheticSpec,
        name: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    /// SHA-256 of `blob <len>\0<content>`.
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub invocation: Invocation,
    pub out: PathBuf,
    pub seed: u64,
    pub threads: Option<u64>,
    pub inputs: Vec<InputDigest>,
}

impl RunManifest {
    pub fn new(invocation: Invocation, out: PathBuf, seed: u64, threads: Option<u64>) -> Result<Self, CliError> {
        let inputs = invocation.input_paths().iter().map(|p| digest(p)).collect::<Result<_, _>>()?;
        Ok(RunManifest { tool_version: env!("CARGO_PKG_VERSION").into(), invocation, out, seed, threads, inputs })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| TsnnError::Io { path: path.into(), source: e })?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Core(TsnnError::Manifest { path: path.into(), message: e.to_string() }))
    }

    /// Fail when any recorded input has changed since the manifest was written.
    pub fn check_inputs(&self) -> Result<(), CliError> {
        for input in &self.inputs {
            let now = digest(&input.path)?;
            if now.sha256 != input.sha256 {
                return Err(CliError::Core(TsnnError::Manifest {
                    path: input.path.clone(),
                    message: format!("content changed (recorded {}, found {})", input.sha256, now.sha256),
                }));
            }
        }
        Ok(())
    }
}

pub fn digest(path: &Path) -> Result<InputDigest, CliError> {
    let bytes = fs::read(path).map_err(|e| TsnnError::Io { path: path.into(), source: e })?;
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(&bytes);
    let sha256 = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
    Ok(InputDigest { path: path.into(), sha256 })
}

pub fn bank_path(dir: &Path, sensor: usize) -> PathBuf {
    dir.join(format!("sensor_{sensor}.bank"))
}

impl Invocation {
    fn input_paths(&self) -> Vec<PathBuf> {
        let mut paths = Vec::new();
        let dataset = match self {
            Invocation::Validate { dataset }
            | Invocation::Build { dataset, .. }
            | Invocation::Predict { dataset, .. }
            | Invocation::Evaluate { dataset, .. }
            | Invocation::Sweep { dataset, .. }
            | Invocation::Explain { dataset, .. } => Some(dataset),
            Invocation::Synth { .. } => None,
        };
        if let Some(d) = dataset {
            paths.push(d.data.clone());
            paths.push(d.manifest.clone());
        }
        match self {
            Invocation::Predict { banks: Some(dir), sensors, .. } => {
                paths.extend(sensors.iter().map(|&s| bank_path(dir, s)));
            }
            Invocation::Explain { banks: Some(dir), sensor, .. } => paths.push(bank_path(dir, *sensor)),
            _ => {}
        }
        paths
    }
}

pub fn load_series(dataset: &Dataset) -> Result<RawSeries, CliError> {
    let manifest = Manifest::load(&dataset.manifest)?;
    Ok(ingest_with_manifest(&dataset.data, &manifest)?)
}

/// Number of test-split windows per sensor.
pub fn test_window_count(series: &RawSeries, split: &SplitSpec, config: &ModelConfig) -> Result<usize, CliError> {
    let range = split.range(series.n_steps(), Split::Test)?;
    let need = config.history_len + config.horizon_len;
    if range.len() < need {
        return Err(TsnnError::SplitTooShort { available: range.len(), required: need }.into());
    }
    Ok(range.len() - need + 1)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| TsnnError::Io { path: path.into(), source: e }.into())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("serialisable");
    text.push('\n');
    write_file(path, text.as_bytes())
}

/// Write the run manifest, then execute. Returns a summary for stdout.
pub fn execute(manifest: &RunManifest) -> Result<Value, CliError> {
    let out = &manifest.out;
    fs::create_dir_all(out).map_err(|e| TsnnError::Io { path: out.clone(), source: e })?;
    write_json(&out.join(RUN_MANIFEST), manifest)?;
    match &manifest.invocation {
        Invocation::Validate { dataset } => validate(dataset, out),
        Invocation::Build { dataset, config, sensors } => build(dataset, config, sensors, out),
        Invocation::Predict { dataset, config, sensors, banks, strategy, queries, trace } => {
            predict(dataset, config, sensors, banks.as_deref(), *strategy, queries, *trace, out)
        }
        Invocation::Evaluate { dataset, config, options, baseline } => {
            evaluate(dataset, config, options, *baseline, &manifest.inputs, out)
        }
        Invocation::Sweep { dataset, config, options, axis, grid } => {
            sweep(dataset, config, options, *axis, grid, &manifest.inputs, out)
        }
        Invocation::Explain { dataset, config, sensor, queries, banks } => {
            explain(dataset, config, *sensor, queries, banks.as_deref(), out)
        }
        Invocation::Synth { spec, name } => synth(spec, name, out),
    }
}

fn validate(dataset: &Dataset, out: &Path) -> Result<Value, CliError> {
    let series = load_series(dataset)?;
    let ranges = dataset.split.ranges(series.n_steps())?;
    let nz = near_zero_ratio(&series);
    let summary = json!({
        "n_steps": series.n_steps(),
        "n_sensors": series.n_sensors(),
        "steps_per_period": series.steps_per_period,
        "split_steps": ranges.iter().map(|r| [r.start, r.end]).collect::<Vec<_>>(),
        "near_zero_ratio": nz.average,
        "has_timestamp": series.start.is_some(),
    });
    write_json(&out.join("validate.json"), &summary)?;
    Ok(summary)
}

fn sensor_bank(
    series: &RawSeries,
    dataset: &Dataset,
    config: &ModelConfig,
    sensor: usize,
    banks: Option<&Path>,
    strategy: Strategy,
) -> Result<MemoryBank, CliError> {
    match banks {
        Some(dir) => {
            let bank = load_bank(bank_path(dir, sensor))?;
            let c = bank.config();
            if (c.history_len, c.horizon_len, c.steps_per_period)
                != (config.history_len, config.horizon_len, config.steps_per_period)
            {
                return Err(CliError::Usage(format!(
                    "bank for sensor {sensor} was built with T={}, T'={}, t={}",
                    c.history_len, c.horizon_len, c.steps_per_period
                )));
            }
            Ok(bank)
        }
        None => {
            let train =
                make_windows(series, sensor, config.history_len, config.horizon_len, &dataset.split, Split::Train)?;
            Ok(match strategy {
                Strategy::Standard => build_bank(&train, config, sensor as u32)?,
                Strategy::MemoryEfficient => MemoryBank::from_windows(&train, config, sensor as u32)?,
            })
        }
    }
}

fn build(dataset: &Dataset, config: &ModelConfig, sensors: &[usize], out: &Path) -> Result<Value, CliError> {
    let series = load_series(dataset)?;
    let mut entries = 0;
    for &s in sensors {
        let bank = sensor_bank(&series, dataset, config, s, None, Strategy::Standard)?;
        entries += bank.n_entries();
        save_bank(&bank, bank_path(out, s))?;
    }
    Ok(json!({ "banks": sensors.len(), "entries": entries, "layers": config.layers }))
}

#[allow(clippy::too_many_arguments)]
fn predict(
    dataset: &Dataset,
    config: &ModelConfig,
    sensors: &[usize],
    banks: Option<&Path>,
    strategy: Strategy,
    queries: &[usize],
    trace: bool,
    out: &Path,
) -> Result<Value, CliError> {
    let series = load_series(dataset)?;
    let mut peak = 0;
    for &s in sensors {
        let bank = sensor_bank(&series, dataset, config, s, banks, strategy)?;
        let test = make_windows(&series, s, config.history_len, config.horizon_len, &dataset.split, Split::Test)?;
        let q: Vec<Query<'_>> = queries.iter().map(|&i| Query::from(&test[i])).collect();
        let batch = predict_batch(&bank, &q, config.layers, strategy, trace)?;
        peak = peak.max(batch.peak_residual_bytes);

        let mut csv = String::from("query,index");
        for h in 1..=config.horizon_len {
            csv.push_str(&format!(",y{h}"));
        }
        csv.push('\n');
        for (&i, f) in queries.iter().zip(&batch.forecasts) {
            csv.push_str(&format!("{i},{}", test[i].index));
            for v in &f.prediction {
                csv.push_str(&format!(",{v}"));
            }
            csv.push('\n');
        }
        write_file(&out.join(format!("predictions_sensor_{s}.csv")), csv.as_bytes())?;

        if trace {
            let traces: Vec<Value> = queries
                .iter()
                .zip(&batch.forecasts)
                .map(|(&i, f)| json!({ "query": i, "index": test[i].index, "trace": f.trace }))
                .collect();
            write_json(&out.join(format!("trace_sensor_{s}.json")), &traces)?;
        }
    }
    Ok(json!({ "sensors": sensors.len(), "queries": queries.len(), "peak_residual_bytes": peak }))
}

fn evaluate(
    dataset: &Dataset,
    config: &ModelConfig,
    options: &EvalOptions,
    baseline: bool,
    inputs: &[InputDigest],
    out: &Path,
) -> Result<Value, CliError> {
    let series = load_series(dataset)?;
    let report = eval::evaluate(&series, config, options)?;
    write_csv(&out.join("metrics.csv"), |w| report.write_csv(w))?;
    let hi = if baseline {
        let hi = eval::evaluate_historical_inertia(&series, config.history_len, config.horizon_len, options)?;
        write_csv(&out.join("hi_metrics.csv"), |w| hi.write_csv(w))?;
        Some(hi)
    } else {
        None
    };
    let summary = json!({
        "config": config,
        "inputs": inputs,
        "metrics": report,
        "historical_inertia": hi,
    });
    write_json(&out.join("summary.json"), &summary)?;
    Ok(json!({ "average": report.average, "historical_inertia": hi.map(|h| h.average) }))
}

fn sweep(
    dataset: &Dataset,
    config: &ModelConfig,
    options: &EvalOptions,
    axis: SweepAxis,
    grid: &[GridValue],
    inputs: &[InputDigest],
    out: &Path,
) -> Result<Value, CliError> {
    let series = load_series(dataset)?;
    let result = eval::run_sweep(&series, config, options, axis, grid)?;
    let name = serde_json::to_value(axis).expect("serialisable");
    let name = name.as_str().expect("axis is a string");
    write_csv(&out.join(format!("sweep_{name}.csv")), |w| result.write_csv(w))?;
    write_json(&out.join(format!("sweep_{name}.json")), &result)?;
    write_json(&out.join("summary.json"), &json!({ "config": config, "inputs": inputs, "sweep": result }))?;
    Ok(json!({
        "axis": name,
        "points": result.points.iter().map(|p| json!({ "value": p.value.to_string(), "average": p.report.average })).collect::<Vec<_>>(),
    }))
}

fn explain(
    dataset: &Dataset,
    config: &ModelConfig,
    sensor: usize,
    queries: &[usize],
    banks: Option<&Path>,
    out: &Path,
) -> Result<Value, CliError> {
    let series = load_series(dataset)?;
    let bank = sensor_bank(&series, dataset, config, sensor, banks, Strategy::Standard)?;
    let test = make_windows(&series, sensor, config.history_len, config.horizon_len, &dataset.split, Split::Test)?;
    let q: Vec<Query<'_>> = queries.iter().map(|&i| Query::from(&test[i])).collect();
    let batch = predict_batch(&bank, &q, config.layers, Strategy::Standard, true)?;
    let mut report: Option<interpret::ContributionReport> = None;
    for (&i, f) in queries.iter().zip(&batch.forecasts) {
        let r = interpret::contributions(i, f, &bank)?;
        match report.as_mut() {
            Some(total) => total.accumulate(&r)?,
            None => report = Some(r),
        }
    }
    let report = interpret::with_aggregations(report.expect("queries are non-empty"), &series);
    write_json(&out.join(format!("explain_sensor_{sensor}.json")), &report)?;
    write_csv(&out.join(format!("explain_sensor_{sensor}.csv")), |w| report.write_csv(w, series.steps_per_period))?;
    let dominant = report.by_weekday.as_ref().map(|w| WEEKDAYS[interpret::dominant_weekday(w)]);
    Ok(json!({
        "sensor": sensor,
        "queries": queries.len(),
        "total": report.total(),
        "by_weekday": report.by_weekday,
        "dominant_weekday": dominant,
    }))
}

fn synth(spec: &SyntheticSpec, name: &str, out: &Path) -> Result<Value, CliError> {
    let series = periodic_series(spec)?;
    let mut csv = String::new();
    for i in 0..series.n_steps() {
        let row: Vec<String> = (0..series.n_sensors()).map(|s| series.value(i, s).to_string()).collect();
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    let data = out.join(format!("{name}.csv"));
    let manifest_path = out.join(format!("{name}.json"));
    write_file(&data, csv.as_bytes())?;
    let manifest = Manifest {
        steps_per_period: spec.steps_per_period,
        step_interval_minutes: 1440.0 / spec.steps_per_period as f64,
        start_timestamp: Some("2024-01-01 00:00:00".into()),
        has_header: false,
        num_steps: Some(spec.n_steps),
        num_sensors: Some(spec.n_sensors),
    };
    write_json(&manifest_path, &manifest)?;
    Ok(json!({ "data": data, "manifest": manifest_path, "n_steps": spec.n_steps, "n_sensors": spec.n_sensors }))
}

fn write_csv(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> tsnn::Result<()>) -> Result<(), CliError> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    buf.flush().expect("in-memory buffer");
    write_file(path, &buf)
}
