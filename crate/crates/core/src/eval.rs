//! Metrics, the historical-inertia baseline, evaluation and sweeps.

use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bank::{build_bank, MemoryBank};
use crate::config::ModelConfig;
use crate::dataset::{make_windows, RawSeries, Split, SplitSpec};
use crate::error::{Result, TsnnError};
use crate::kernel::Scaling;
use crate::predictor::{predict_batch, Query, Strategy};

/// MAE, RMSE and MAPE (in percent) over a set of points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub mae: f64,
    pub rmse: f64,
    /// Absent when every ground-truth value was masked.
    pub mape: Option<f64>,
    pub points: usize,
    /// Points excluded from MAPE because `|y| <= threshold`.
    pub masked_points: usize,
}

/// Running sums behind a [`MetricSet`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MetricAccumulator {
    points: usize,
    abs_sum: f64,
    sq_sum: f64,
    ape_sum: f64,
    ape_points: usize,
}

impl MetricAccumulator {
    /// Add points given prediction errors and ground truth.
    pub fn add_errors(&mut self, errors: &[f64], truth: &[f64], mape_threshold: f64) {
        for (&e, &y) in errors.iter().zip(truth) {
            self.points += 1;
            self.abs_sum += e.abs();
            self.sq_sum += e * e;
            if y.abs() > mape_threshold {
                self.ape_sum += (e / y).abs();
                self.ape_points += 1;
            }
        }
    }

    pub fn add(&mut self, prediction: &[f64], truth: &[f64], mape_threshold: f64) {
        let errors: Vec<f64> = prediction.iter().zip(truth).map(|(p, y)| y - p).collect();
        self.add_errors(&errors, truth, mape_threshold);
    }

    pub fn merge(&mut self, other: &MetricAccumulator) {
        self.points += other.points;
        self.abs_sum += other.abs_sum;
        self.sq_sum += other.sq_sum;
        self.ape_sum += other.ape_sum;
        self.ape_points += other.ape_points;
    }

    pub fn finish(&self) -> MetricSet {
        let n = self.points.max(1) as f64;
        MetricSet {
            mae: self.abs_sum / n,
            rmse: (self.sq_sum / n).sqrt(),
            mape: (self.ape_points > 0).then(|| 100.0 * self.ape_sum / self.ape_points as f64),
            points: self.points,
            masked_points: self.points - self.ape_points,
        }
    }
}

/// Metrics of `prediction` against `truth`. MAPE skips `|y| <= mape_threshold`.
pub fn metrics(prediction: &[f64], truth: &[f64], mape_threshold: f64) -> Result<MetricSet> {
    if prediction.len() != truth.len() {
        return Err(TsnnError::LengthMismatch { expected: truth.len(), actual: prediction.len() });
    }
    let mut acc = MetricAccumulator::default();
    acc.add(prediction, truth, mape_threshold);
    Ok(acc.finish())
}

/// The last `horizon` values of the history, in order.
pub fn historical_inertia(x: &[f64], horizon: usize) -> Result<Vec<f64>> {
    if horizon > x.len() {
        return Err(TsnnError::Config(format!("horizon {horizon} exceeds history length {}", x.len())));
    }
    Ok(x[x.len() - horizon..].to_vec())
}

/// How per-sensor metrics are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    /// Metric per sensor, then the unweighted mean.
    Macro,
    /// All errors of all sensors in one pool.
    Pooled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub split: SplitSpec,
    pub strategy: Strategy,
    pub averaging: Averaging,
    pub mape_threshold: f64,
    /// Sensors to evaluate; all when `None`.
    pub sensors: Option<Vec<usize>>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            split: SplitSpec::default(),
            strategy: Strategy::Standard,
            averaging: Averaging::Macro,
            mape_threshold: 0.0,
            sensors: None,
        }
    }
}

impl EvalOptions {
    fn sensors(&self, series: &RawSeries) -> Result<Vec<usize>> {
        let sensors = self.sensors.clone().unwrap_or_else(|| (0..series.n_sensors()).collect());
        if sensors.is_empty() {
            return Err(TsnnError::Config("no sensors selected".into()));
        }
        if let Some(&bad) = sensors.iter().find(|&&s| s >= series.n_sensors()) {
            return Err(TsnnError::Dimension(format!("sensor {bad} out of range ({} sensors)", series.n_sensors())));
        }
        Ok(sensors)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorMetrics {
    pub sensor: usize,
    pub metrics: MetricSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_sensor: Vec<SensorMetrics>,
    pub average: MetricSet,
}

impl EvalReport {
    fn from_accumulators(sensors: &[usize], accs: &[MetricAccumulator], averaging: Averaging) -> Self {
        let per_sensor: Vec<SensorMetrics> =
            sensors.iter().zip(accs).map(|(&sensor, a)| SensorMetrics { sensor, metrics: a.finish() }).collect();
        let average = match averaging {
            Averaging::Pooled => {
                let mut total = MetricAccumulator::default();
                accs.iter().for_each(|a| total.merge(a));
                total.finish()
            }
            Averaging::Macro => {
                let n = per_sensor.len() as f64;
                let mapes: Vec<f64> = per_sensor.iter().filter_map(|s| s.metrics.mape).collect();
                MetricSet {
                    mae: per_sensor.iter().map(|s| s.metrics.mae).sum::<f64>() / n,
                    rmse: per_sensor.iter().map(|s| s.metrics.rmse).sum::<f64>() / n,
                    mape: (!mapes.is_empty()).then(|| mapes.iter().sum::<f64>() / mapes.len() as f64),
                    points: per_sensor.iter().map(|s| s.metrics.points).sum(),
                    masked_points: per_sensor.iter().map(|s| s.metrics.masked_points).sum(),
                }
            }
        };
        EvalReport { per_sensor, average }
    }

    /// One CSV row per sensor plus an `average` row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| TsnnError::Csv { path: "<metrics>".into(), message: e.to_string() };
        w.write_record(["sensor", "mae", "rmse", "mape", "points", "masked_points"]).map_err(err)?;
        let row = |label: String, m: &MetricSet| {
            vec![
                label,
                m.mae.to_string(),
                m.rmse.to_string(),
                m.mape.map_or_else(String::new, |v| v.to_string()),
                m.points.to_string(),
                m.masked_points.to_string(),
            ]
        };
        for s in &self.per_sensor {
            w.write_record(row(s.sensor.to_string(), &s.metrics)).map_err(err)?;
        }
        w.write_record(row("average".into(), &self.average)).map_err(err)?;
        w.flush().map_err(|e| TsnnError::io("<metrics>", e))
    }
}

/// Test-split accumulators of one sensor at each requested depth.
fn sensor_depth_accumulators(
    series: &RawSeries,
    sensor: usize,
    config: &ModelConfig,
    opts: &EvalOptions,
    depths: &[usize],
) -> Result<Vec<MetricAccumulator>> {
    let max_depth = depths.iter().copied().max().unwrap_or(0);
    let train = make_windows(series, sensor, config.history_len, config.horizon_len, &opts.split, Split::Train)?;
    let test = make_windows(series, sensor, config.history_len, config.horizon_len, &opts.split, Split::Test)?;
    let depth_config = ModelConfig { layers: max_depth, ..*config };
    let bank = match opts.strategy {
        Strategy::Standard => build_bank(&train, &depth_config, sensor as u32)?,
        Strategy::MemoryEfficient => MemoryBank::from_windows(&train, &depth_config, sensor as u32)?,
    };
    let queries: Vec<Query<'_>> = test.iter().map(Query::from).collect();
    let out = predict_batch(&bank, &queries, max_depth, opts.strategy, false)?;
    let mut accs = vec![MetricAccumulator::default(); depths.len()];
    for (f, w) in out.forecasts.iter().zip(&test) {
        for (acc, &k) in accs.iter_mut().zip(depths) {
            acc.add(&f.truncated(k)?, &w.y, opts.mape_threshold);
        }
    }
    Ok(accs)
}

/// Metrics at several depths from one bank per sensor (built to the deepest).
pub fn evaluate_depths(series: &RawSeries, config: &ModelConfig, opts: &EvalOptions, depths: &[usize]) -> Result<Vec<EvalReport>> {
    config.validate()?;
    if depths.is_empty() || depths.contains(&0) {
        return Err(TsnnError::Config("depths must be non-empty and positive".into()));
    }
    if series.steps_per_period != config.steps_per_period {
        return Err(TsnnError::Config(format!(
            "series period {} differs from model period {}",
            series.steps_per_period, config.steps_per_period
        )));
    }
    let sensors = opts.sensors(series)?;
    let per_sensor: Vec<Vec<MetricAccumulator>> = sensors
        .par_iter()
        .map(|&s| sensor_depth_accumulators(series, s, config, opts, depths))
        .collect::<Result<_>>()?;
    Ok((0..depths.len())
        .map(|d| {
            let accs: Vec<MetricAccumulator> = per_sensor.iter().map(|a| a[d]).collect();
            EvalReport::from_accumulators(&sensors, &accs, opts.averaging)
        })
        .collect())
}

/// Build banks on the training split and score the test split.
pub fn evaluate(series: &RawSeries, config: &ModelConfig, opts: &EvalOptions) -> Result<EvalReport> {
    Ok(evaluate_depths(series, config, opts, &[config.layers])?.remove(0))
}

/// Historical-inertia baseline on the test split.
pub fn evaluate_historical_inertia(
    series: &RawSeries,
    history_len: usize,
    horizon_len: usize,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let sensors = opts.sensors(series)?;
    let accs: Vec<MetricAccumulator> = sensors
        .iter()
        .map(|&s| {
            let mut acc = MetricAccumulator::default();
            for w in make_windows(series, s, history_len, horizon_len, &opts.split, Split::Test)? {
                acc.add(&historical_inertia(&w.x, horizon_len)?, &w.y, opts.mape_threshold);
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    Ok(EvalReport::from_accumulators(&sensors, &accs, opts.averaging))
}

/// Leave-one-out training error after `k` layers, for `k` in `1..stored_layers`.
///
/// The future residual stored at layer `k + 1` is exactly the error of the
/// first `k` layers on that training entry.
pub fn training_layer_metrics(bank: &MemoryBank, mape_threshold: f64) -> Vec<MetricSet> {
    let truth = bank.layer(1).expect("bank has layer 1");
    (2..=bank.stored_layers())
        .map(|next| {
            let residual = bank.layer(next).expect("in range");
            let mut acc = MetricAccumulator::default();
            for j in 0..bank.n_entries() {
                acc.add_errors(residual.future(j), truth.future(j), mape_threshold);
            }
            acc.finish()
        })
        .collect()
}

/// Ablation variants of the two decoupling steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decoupling {
    Full,
    NoTimeWise,
    NoMean,
    Neither,
}

impl Decoupling {
    pub const ALL: [Decoupling; 4] = [Decoupling::Full, Decoupling::NoTimeWise, Decoupling::NoMean, Decoupling::Neither];

    fn apply(self, config: &mut ModelConfig) {
        config.time_wise_decoupling = matches!(self, Decoupling::Full | Decoupling::NoMean);
        config.mean_decoupling = matches!(self, Decoupling::Full | Decoupling::NoTimeWise);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Layers,
    Gamma,
    Beta,
    Tolerance,
    Scaling,
    Decoupling,
}

impl std::str::FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s {
            "layers" => SweepAxis::Layers,
            "gamma" => SweepAxis::Gamma,
            "beta" => SweepAxis::Beta,
            "tolerance" => SweepAxis::Tolerance,
            "scaling" => SweepAxis::Scaling,
            "decoupling" => SweepAxis::Decoupling,
            other => return Err(format!("unknown sweep axis `{other}`")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridValue {
    Layers(usize),
    Gamma(f64),
    Beta(f64),
    Tolerance(usize),
    Scaling(Scaling),
    Decoupling(Decoupling),
}

impl GridValue {
    pub fn axis(&self) -> SweepAxis {
        match self {
            GridValue::Layers(_) => SweepAxis::Layers,
            GridValue::Gamma(_) => SweepAxis::Gamma,
            GridValue::Beta(_) => SweepAxis::Beta,
            GridValue::Tolerance(_) => SweepAxis::Tolerance,
            GridValue::Scaling(_) => SweepAxis::Scaling,
            GridValue::Decoupling(_) => SweepAxis::Decoupling,
        }
    }

    /// Parse one grid value for `axis`.
    pub fn parse(axis: SweepAxis, s: &str) -> std::result::Result<Self, String> {
        let num = |s: &str| s.parse::<f64>().map_err(|e| format!("bad number `{s}`: {e}"));
        let int = |s: &str| s.parse::<usize>().map_err(|e| format!("bad integer `{s}`: {e}"));
        Ok(match axis {
            SweepAxis::Layers => GridValue::Layers(int(s)?),
            SweepAxis::Gamma => GridValue::Gamma(num(s)?),
            SweepAxis::Beta => GridValue::Beta(num(s)?),
            SweepAxis::Tolerance => GridValue::Tolerance(int(s)?),
            SweepAxis::Scaling => GridValue::Scaling(s.parse()?),
            SweepAxis::Decoupling => GridValue::Decoupling(match s {
                "full" => Decoupling::Full,
                "no-time-wise" => Decoupling::NoTimeWise,
                "no-mean" => Decoupling::NoMean,
                "neither" => Decoupling::Neither,
                other => return Err(format!("unknown decoupling variant `{other}`")),
            }),
        })
    }

    fn apply(&self, config: &mut ModelConfig) {
        match *self {
            GridValue::Layers(l) => config.layers = l,
            GridValue::Gamma(g) => config.kernel.gamma = g,
            GridValue::Beta(b) => config.kernel.beta = b,
            GridValue::Tolerance(t) => config.tolerance = t,
            GridValue::Scaling(s) => config.kernel.scaling = s,
            GridValue::Decoupling(d) => d.apply(config),
        }
    }
}

impl fmt::Display for GridValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridValue::Layers(v) | GridValue::Tolerance(v) => write!(f, "{v}"),
            GridValue::Gamma(v) | GridValue::Beta(v) => write!(f, "{v}"),
            GridValue::Scaling(s) => f.write_str(s.name()),
            GridValue::Decoupling(d) => f.write_str(match d {
                Decoupling::Full => "full",
                Decoupling::NoTimeWise => "no-time-wise",
                Decoupling::NoMean => "no-mean",
                Decoupling::Neither => "neither",
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: GridValue,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    /// `axis,value,mae,rmse,mape` rows of the averaged metrics.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| TsnnError::Csv { path: "<sweep>".into(), message: e.to_string() };
        w.write_record(["axis", "value", "mae", "rmse", "mape"]).map_err(err)?;
        let axis = serde_json::to_value(self.axis).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
        for p in &self.points {
            let m = &p.report.average;
            w.write_record([
                axis.clone(),
                p.value.to_string(),
                m.mae.to_string(),
                m.rmse.to_string(),
                m.mape.map_or_else(String::new, |v| v.to_string()),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| TsnnError::io("<sweep>", e))
    }
}

/// Vary one hyperparameter over `grid`, holding the rest of `config` fixed.
///
/// A layer sweep builds each sensor's bank once, to the deepest grid value.
pub fn run_sweep(
    series: &RawSeries,
    config: &ModelConfig,
    opts: &EvalOptions,
    axis: SweepAxis,
    grid: &[GridValue],
) -> Result<SweepResult> {
    if grid.is_empty() {
        return Err(TsnnError::Config("sweep grid is empty".into()));
    }
    if let Some(bad) = grid.iter().find(|g| g.axis() != axis) {
        return Err(TsnnError::Config(format!("grid value {bad} does not belong to axis {axis:?}")));
    }
    let points = if axis == SweepAxis::Layers {
        let depths: Vec<usize> = grid
            .iter()
            .map(|g| match g {
                GridValue::Layers(l) => *l,
                _ => unreachable!("axis checked"),
            })
            .collect();
        evaluate_depths(series, config, opts, &depths)?
            .into_iter()
            .zip(grid)
            .map(|(report, &value)| SweepPoint { value, report })
            .collect()
    } else {
        grid.iter()
            .map(|value| {
                let mut c = *config;
                value.apply(&mut c);
                Ok(SweepPoint { value: *value, report: evaluate(series, &c, opts)? })
            })
            .collect::<Result<_>>()?
    };
    Ok(SweepResult { axis, points })
}
