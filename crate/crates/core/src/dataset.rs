//! Raw multi-sensor series, sliding windows and chronological splits.

use std::fs;
use std::ops::Range;
use std::path::Path;

use chrono::{Datelike, NaiveDate, NaiveDateTime, TimeDelta};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TsnnError};

/// JSON sidecar describing a data CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub steps_per_period: usize,
    pub step_interval_minutes: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_timestamp: Option<String>,
    #[serde(default)]
    pub has_header: bool,
    /// Expected number of rows; checked when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_steps: Option<usize>,
    /// Expected number of columns; checked when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_sensors: Option<usize>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| TsnnError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| TsnnError::Manifest {
            path: path.to_owned(),
            message: e.to_string(),
        })
    }

    pub fn start(&self) -> std::result::Result<Option<NaiveDateTime>, String> {
        self.start_timestamp.as_deref().map(parse_timestamp).transpose()
    }
}

fn parse_timestamp(s: &str) -> std::result::Result<NaiveDateTime, String> {
    const FORMATS: [&str; 4] = ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"];
    for f in FORMATS {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, f) {
            return Ok(t);
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map(|d| d.and_hms_opt(0, 0, 0).expect("midnight is valid"))
        .map_err(|_| format!("unrecognised start_timestamp `{s}`"))
}

/// A multi-sensor series, rows are time steps and columns are sensors.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    values: Vec<f64>,
    n_steps: usize,
    n_sensors: usize,
    pub step_interval_minutes: f64,
    pub steps_per_period: usize,
    pub start: Option<NaiveDateTime>,
}

impl RawSeries {
    /// `values` is row-major `[n_steps x n_sensors]`.
    pub fn new(values: Vec<f64>, n_steps: usize, n_sensors: usize, steps_per_period: usize) -> Result<Self> {
        if n_steps == 0 || n_sensors == 0 {
            return Err(TsnnError::Dimension("series must have at least one step and one sensor".into()));
        }
        if values.len() != n_steps * n_sensors {
            return Err(TsnnError::Dimension(format!(
                "{} values for {n_steps} steps x {n_sensors} sensors",
                values.len()
            )));
        }
        if steps_per_period < 2 {
            return Err(TsnnError::Config(format!("steps_per_period must be at least 2, got {steps_per_period}")));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(TsnnError::NonFinite {
                row: pos / n_sensors,
                column: pos % n_sensors,
                value: values[pos].to_string(),
            });
        }
        Ok(RawSeries {
            values,
            n_steps,
            n_sensors,
            step_interval_minutes: 5.0,
            steps_per_period,
            start: None,
        })
    }

    /// Build from one column per sensor.
    pub fn from_columns(columns: &[Vec<f64>], steps_per_period: usize) -> Result<Self> {
        let n_sensors = columns.len();
        let n_steps = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != n_steps) {
            return Err(TsnnError::Dimension("sensor columns differ in length".into()));
        }
        let mut values = Vec::with_capacity(n_steps * n_sensors);
        for i in 0..n_steps {
            values.extend(columns.iter().map(|c| c[i]));
        }
        RawSeries::new(values, n_steps, n_sensors, steps_per_period)
    }

    pub fn with_interval(mut self, minutes: f64) -> Self {
        self.step_interval_minutes = minutes;
        self
    }

    pub fn with_start(mut self, start: Option<NaiveDateTime>) -> Self {
        self.start = start;
        self
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_sensors(&self) -> usize {
        self.n_sensors
    }

    pub fn value(&self, step: usize, sensor: usize) -> f64 {
        self.values[step * self.n_sensors + sensor]
    }

    /// Copy of one sensor's column.
    pub fn sensor(&self, sensor: usize) -> Vec<f64> {
        (0..self.n_steps).map(|i| self.value(i, sensor)).collect()
    }

    pub fn periodic_step(&self, index: usize) -> usize {
        index % self.steps_per_period
    }

    /// Weekday of an absolute step (0 = Monday .. 6 = Sunday).
    pub fn weekday_of(&self, index: usize) -> Option<usize> {
        let start = self.start?;
        let seconds = (self.step_interval_minutes * 60.0 * index as f64).round() as i64;
        let t = start + TimeDelta::seconds(seconds);
        Some(t.weekday().num_days_from_monday() as usize)
    }
}

/// Load a data CSV and its JSON manifest.
///
/// Non-finite cells are rejected with their 0-based data row and column.
pub fn ingest(data: impl AsRef<Path>, manifest: impl AsRef<Path>) -> Result<RawSeries> {
    let manifest_path = manifest.as_ref();
    let manifest = Manifest::load(manifest_path)?;
    ingest_with_manifest(data, &manifest).map_err(|e| match e {
        TsnnError::Manifest { message, .. } => TsnnError::Manifest { path: manifest_path.to_owned(), message },
        other => other,
    })
}

pub fn ingest_with_manifest(data: impl AsRef<Path>, manifest: &Manifest) -> Result<RawSeries> {
    let path = data.as_ref();
    if !path.exists() {
        return Err(TsnnError::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "file not found")));
    }
    let start = manifest.start().map_err(|message| TsnnError::Manifest { path: path.to_owned(), message })?;
    if !(manifest.step_interval_minutes > 0.0) {
        return Err(TsnnError::Manifest {
            path: path.to_owned(),
            message: "step_interval_minutes must be positive".into(),
        });
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(manifest.has_header)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| TsnnError::Csv { path: path.to_owned(), message: e.to_string() })?;

    let mut values = Vec::new();
    let mut n_sensors = None;
    let mut n_steps = 0;
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| TsnnError::Csv { path: path.to_owned(), message: e.to_string() })?;
        let width = *n_sensors.get_or_insert(record.len());
        if record.len() != width {
            return Err(TsnnError::Dimension(format!("row {row} has {} columns, expected {width}", record.len())));
        }
        for (column, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| TsnnError::Csv {
                path: path.to_owned(),
                message: format!("unparseable value `{field}` at row {row}, column {column}"),
            })?;
            if !v.is_finite() {
                return Err(TsnnError::NonFinite { row, column, value: field.to_string() });
            }
            values.push(v);
        }
        n_steps += 1;
    }
    let n_sensors = n_sensors.unwrap_or(0);
    if let Some(expected) = manifest.num_steps {
        if expected != n_steps {
            return Err(TsnnError::Dimension(format!("manifest declares {expected} steps, file has {n_steps}")));
        }
    }
    if let Some(expected) = manifest.num_sensors {
        if expected != n_sensors {
            return Err(TsnnError::Dimension(format!("manifest declares {expected} sensors, file has {n_sensors}")));
        }
    }
    Ok(RawSeries::new(values, n_steps, n_sensors, manifest.steps_per_period)?
        .with_interval(manifest.step_interval_minutes)
        .with_start(start))
}

/// One training or test instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesWindow {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Absolute time step of the first history value.
    pub index: usize,
    pub periodic_step: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// Chronological train / validation / test fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { train: 0.6, validation: 0.2, test: 0.2 }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|f| !(*f > 0.0)) {
            return Err(TsnnError::Config(format!("split fractions must be positive: {parts:?}")));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(TsnnError::Config(format!("split fractions must sum to 1: {parts:?}")));
        }
        Ok(())
    }

    /// Step ranges of the three splits: `floor(train * n)` and
    /// `floor(validation * n)` steps, the rest is test.
    pub fn ranges(&self, n_steps: usize) -> Result<[Range<usize>; 3]> {
        self.validate()?;
        let train = (self.train * n_steps as f64).floor() as usize;
        let validation = (self.validation * n_steps as f64).floor() as usize;
        let test_start = train + validation;
        if train == 0 || validation == 0 || test_start >= n_steps {
            return Err(TsnnError::Config(format!("split of {n_steps} steps leaves an empty part")));
        }
        Ok([0..train, train..test_start, test_start..n_steps])
    }

    pub fn range(&self, n_steps: usize, split: Split) -> Result<Range<usize>> {
        let [train, validation, test] = self.ranges(n_steps)?;
        Ok(match split {
            Split::Train => train,
            Split::Validation => validation,
            Split::Test => test,
        })
    }
}

/// Every stride-1 window whose history and horizon lie inside `range`.
pub fn windows_in_range(
    values: &[f64],
    steps_per_period: usize,
    history_len: usize,
    horizon_len: usize,
    range: Range<usize>,
) -> Result<Vec<SeriesWindow>> {
    let span = history_len + horizon_len;
    if range.end > values.len() {
        return Err(TsnnError::Dimension(format!("range end {} beyond series of {}", range.end, values.len())));
    }
    if range.len() < span || span == 0 {
        return Err(TsnnError::SplitTooShort { available: range.len(), required: span });
    }
    Ok((range.start..=range.end - span)
        .map(|i| SeriesWindow {
            x: values[i..i + history_len].to_vec(),
            y: values[i + history_len..i + span].to_vec(),
            index: i,
            periodic_step: i % steps_per_period,
        })
        .collect())
}

/// Windows of one sensor inside one split.
pub fn make_windows(
    series: &RawSeries,
    sensor: usize,
    history_len: usize,
    horizon_len: usize,
    split: &SplitSpec,
    which: Split,
) -> Result<Vec<SeriesWindow>> {
    if sensor >= series.n_sensors() {
        return Err(TsnnError::Dimension(format!("sensor {sensor} out of range ({} sensors)", series.n_sensors())));
    }
    let range = split.range(series.n_steps(), which)?;
    windows_in_range(&series.sensor(sensor), series.steps_per_period, history_len, horizon_len, range)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearZeroReport {
    pub per_sensor: Vec<f64>,
    pub average: f64,
}

/// Fraction of each sensor's values at or below 5% of that sensor's maximum.
pub fn near_zero_ratio(series: &RawSeries) -> NearZeroReport {
    let per_sensor: Vec<f64> = (0..series.n_sensors())
        .map(|s| {
            let column = series.sensor(s);
            let max = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let threshold = 0.05 * max;
            column.iter().filter(|&&v| v <= threshold).count() as f64 / column.len() as f64
        })
        .collect();
    let average = per_sensor.iter().sum::<f64>() / per_sensor.len() as f64;
    NearZeroReport { per_sensor, average }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn ingest_small_csv() {
        let dir = tempfile::tempdir().unwrap();
        let data = write(dir.path(), "d.csv", "1,2\n3,4\n5,6\n7,8\n");
        let man = write(dir.path(), "m.json", r#"{"steps_per_period":4,"step_interval_minutes":5,"has_header":false}"#);
        let s = ingest(&data, &man).unwrap();
        assert_eq!((s.n_steps(), s.n_sensors()), (4, 2));
        assert_eq!(s.sensor(1), vec![2.0, 4.0, 6.0, 8.0]);
        assert_eq!(s.steps_per_period, 4);
    }

    #[test]
    fn ingest_with_header_and_declared_dims() {
        let dir = tempfile::tempdir().unwrap();
        let data = write(dir.path(), "d.csv", "a,b\n1,2\n3,4\n");
        let man = write(
            dir.path(),
            "m.json",
            r#"{"steps_per_period":2,"step_interval_minutes":60,"has_header":true,"num_steps":3,"num_sensors":2}"#,
        );
        assert!(matches!(ingest(&data, &man), Err(TsnnError::Dimension(_))));
    }

    #[test]
    fn ingest_rejects_nan_with_position() {
        let dir = tempfile::tempdir().unwrap();
        let data = write(dir.path(), "d.csv", "1,2\n3,NaN\n");
        let man = write(dir.path(), "m.json", r#"{"steps_per_period":2,"step_interval_minutes":5}"#);
        match ingest(&data, &man) {
            Err(TsnnError::NonFinite { row, column, .. }) => assert_eq!((row, column), (1, 1)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ingest_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let man = write(dir.path(), "m.json", r#"{"steps_per_period":2,"step_interval_minutes":5}"#);
        assert!(matches!(ingest(dir.path().join("nope.csv"), &man), Err(TsnnError::Io { .. })));
    }

    #[test]
    fn thirty_steps_gives_seven_windows() {
        let values: Vec<f64> = (0..30).map(f64::from).collect();
        let w = windows_in_range(&values, 288, 12, 12, 0..30).unwrap();
        assert_eq!(w.len(), 7);
        assert_eq!(w.iter().map(|w| w.index).collect::<Vec<_>>(), (0..7).collect::<Vec<_>>());
        assert_eq!(w[6].y.last(), Some(&29.0));
    }

    #[test]
    fn periodic_step_is_index_mod_period() {
        let values: Vec<f64> = (0..700).map(|i| (i % 13) as f64).collect();
        let w = windows_in_range(&values, 288, 12, 12, 0..700).unwrap();
        assert!(w.iter().all(|w| w.periodic_step == w.index % 288));
        assert_eq!(w[300].periodic_step, 12);
    }

    #[test]
    fn short_split_is_an_error() {
        let values = vec![0.0; 20];
        assert!(matches!(
            windows_in_range(&values, 4, 12, 12, 0..20),
            Err(TsnnError::SplitTooShort { available: 20, required: 24 })
        ));
    }

    #[test]
    fn pems08_sized_train_split_window_count() {
        // floor(0.6 * 17856) = 10713 steps, minus (12 + 12 - 1).
        let split = SplitSpec::default();
        let [train, val, test] = split.ranges(17856).unwrap();
        assert_eq!(train, 0..10713);
        assert_eq!(val, 10713..14284);
        assert_eq!(test, 14284..17856);
        let values = vec![1.0; 17856];
        let w = windows_in_range(&values, 288, 12, 12, train).unwrap();
        assert_eq!(w.len(), 10713 - 23);
    }

    #[test]
    fn windows_never_cross_split_boundaries() {
        let series = RawSeries::new((0..200).map(f64::from).collect(), 200, 1, 10).unwrap();
        let split = SplitSpec::default();
        let [train, val, _] = split.ranges(200).unwrap();
        for w in make_windows(&series, 0, 5, 3, &split, Split::Train).unwrap() {
            assert!(w.index + 8 <= train.end);
        }
        for w in make_windows(&series, 0, 5, 3, &split, Split::Validation).unwrap() {
            assert!(w.index >= val.start && w.index + 8 <= val.end);
        }
    }

    #[test]
    fn near_zero_hand_count() {
        let s = RawSeries::from_columns(&[vec![0.0, 100.0, 4.0], vec![0.0, 0.0, 0.0]], 2).unwrap();
        let r = near_zero_ratio(&s);
        assert!((r.per_sensor[0] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.per_sensor[1], 1.0);
        assert!((r.average - (2.0 / 3.0 + 1.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn weekday_from_start_timestamp() {
        let man = Manifest {
            steps_per_period: 288,
            step_interval_minutes: 5.0,
            // 2016-07-01 was a Friday.
            start_timestamp: Some("2016-07-01 00:00:00".into()),
            has_header: false,
            num_steps: None,
            num_sensors: None,
        };
        let s = RawSeries::new(vec![1.0; 2000], 2000, 1, 288).unwrap().with_start(man.start().unwrap());
        assert_eq!(s.weekday_of(0), Some(4));
        assert_eq!(s.weekday_of(288), Some(5));
        assert_eq!(s.weekday_of(287), Some(4));
        assert_eq!(s.weekday_of(3 * 288), Some(0));
    }

    #[test]
    fn split_fractions_must_sum_to_one() {
        let s = SplitSpec { train: 0.5, validation: 0.2, test: 0.2 };
        assert!(s.validate().is_err());
    }
}
