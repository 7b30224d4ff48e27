//! Per-entry attribution of a forecast.
//!
//! The contribution of an entry is, summed over layers, its pre-normalisation
//! score at that layer times the mean of that layer's prediction. Entries
//! outside the layer-1 candidate set get nothing from layer 1.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::bank::{mean_of, MemoryBank};
use crate::dataset::RawSeries;
use crate::error::{Result, TsnnError};
use crate::predictor::Forecast;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryContribution {
    pub entry_id: usize,
    pub source_index: usize,
    pub periodic_step: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayContribution {
    pub day: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionReport {
    /// Queries whose contributions are summed in this report.
    pub query_ids: Vec<usize>,
    /// One value per bank entry, in entry order.
    pub contributions: Vec<EntryContribution>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub by_day: Option<Vec<DayContribution>>,
    /// Monday first.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub by_weekday: Option<[f64; 7]>,
}

pub const WEEKDAYS: [&str; 7] = ["Monday", "Tuesday", "Wednesday", "Thursday", "Friday", "Saturday", "Sunday"];

/// Contributions of every bank entry to one traced forecast.
pub fn contributions(query_id: usize, forecast: &Forecast, bank: &MemoryBank) -> Result<ContributionReport> {
    let trace = forecast.trace.as_ref().ok_or(TsnnError::MissingScores)?;
    let mut values = vec![0.0; bank.n_entries()];
    for layer in &trace.layers {
        if layer.raw_scores.len() != layer.candidate_ids.len() {
            return Err(TsnnError::MissingScores);
        }
        let layer_mean = mean_of(&layer.prediction);
        for (&id, &score) in layer.candidate_ids.iter().zip(&layer.raw_scores) {
            let slot = values.get_mut(id).ok_or_else(|| {
                TsnnError::Dimension(format!("trace references entry {id}, bank has {}", bank.n_entries()))
            })?;
            *slot += score * layer_mean;
        }
    }
    Ok(ContributionReport {
        query_ids: vec![query_id],
        contributions: values
            .into_iter()
            .enumerate()
            .map(|(j, value)| EntryContribution {
                entry_id: j,
                source_index: bank.source_index(j),
                periodic_step: bank.periodic_step(j),
                value,
            })
            .collect(),
        by_day: None,
        by_weekday: None,
    })
}

impl ContributionReport {
    pub fn total(&self) -> f64 {
        self.contributions.iter().map(|c| c.value).sum()
    }

    /// Add another report over the same bank into this one.
    pub fn accumulate(&mut self, other: &ContributionReport) -> Result<()> {
        if other.contributions.len() != self.contributions.len() {
            return Err(TsnnError::Dimension(format!(
                "reports cover {} and {} entries",
                self.contributions.len(),
                other.contributions.len()
            )));
        }
        for (a, b) in self.contributions.iter_mut().zip(&other.contributions) {
            a.value += b.value;
        }
        self.query_ids.extend_from_slice(&other.query_ids);
        self.by_day = None;
        self.by_weekday = None;
        Ok(())
    }

    /// Flat CSV with one row per entry.
    pub fn write_csv<W: Write>(&self, out: W, steps_per_period: usize) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| TsnnError::Csv { path: "<report>".into(), message: e.to_string() };
        w.write_record(["entry_id", "source_index", "periodic_step", "day", "value"]).map_err(csv_err)?;
        for c in &self.contributions {
            w.write_record([
                c.entry_id.to_string(),
                c.source_index.to_string(),
                c.periodic_step.to_string(),
                (c.source_index / steps_per_period).to_string(),
                c.value.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| TsnnError::io("<report>", e))
    }
}

/// Contributions summed per source day (`source_index / steps_per_period`).
pub fn aggregate_by_source_day(report: &ContributionReport, steps_per_period: usize) -> Vec<DayContribution> {
    let mut days: BTreeMap<usize, f64> = BTreeMap::new();
    for c in &report.contributions {
        *days.entry(c.source_index / steps_per_period).or_default() += c.value;
    }
    days.into_iter().map(|(day, value)| DayContribution { day, value }).collect()
}

/// Contributions summed per weekday of each entry's source day.
pub fn aggregate_by_day_of_week(report: &ContributionReport, series: &RawSeries) -> Result<[f64; 7]> {
    if series.start.is_none() {
        return Err(TsnnError::MissingTimestamp);
    }
    let t = series.steps_per_period;
    let mut out = [0.0; 7];
    for c in &report.contributions {
        let day_start = (c.source_index / t) * t;
        let weekday = series.weekday_of(day_start).ok_or(TsnnError::MissingTimestamp)?;
        out[weekday] += c.value;
    }
    Ok(out)
}

/// Index of the largest weekday total.
pub fn dominant_weekday(by_weekday: &[f64; 7]) -> usize {
    by_weekday
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

/// Fill in `by_day` and, when the series carries a start timestamp, `by_weekday`.
pub fn with_aggregations(mut report: ContributionReport, series: &RawSeries) -> ContributionReport {
    report.by_day = Some(aggregate_by_source_day(&report, series.steps_per_period));
    report.by_weekday = aggregate_by_day_of_week(&report, series).ok();
    report
}
