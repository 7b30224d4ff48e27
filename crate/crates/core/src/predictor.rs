//! Layered retrieval against a memory bank.

use std::borrow::Cow;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bank::{LayerMatch, MemoryBank, PreparedLayer, ResidualLayer};
use crate::dataset::SeriesWindow;
use crate::error::{Result, TsnnError};

/// How a batch of queries is executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Predict against a bank with every layer already built.
    Standard,
    /// Build bank layers on the fly, holding at most two at a time.
    MemoryEfficient,
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "standard" => Ok(Strategy::Standard),
            "mem-efficient" | "memory-efficient" => Ok(Strategy::MemoryEfficient),
            other => Err(format!("unknown strategy `{other}`")),
        }
    }
}

/// One query: a history window and its periodic step.
#[derive(Debug, Clone, Copy)]
pub struct Query<'a> {
    pub x: &'a [f64],
    pub periodic_step: usize,
}

impl<'a> From<&'a SeriesWindow> for Query<'a> {
    fn from(w: &'a SeriesWindow) -> Self {
        Query { x: &w.x, periodic_step: w.periodic_step }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerTrace {
    pub candidate_ids: Vec<usize>,
    /// Scores before normalisation.
    pub raw_scores: Vec<f64>,
    pub normalized_scores: Vec<f64>,
    pub prediction: Vec<f64>,
    /// Residual fed into this layer.
    pub input: Vec<f64>,
    /// Historical mean removed from the input (mean-decoupled layers only).
    pub input_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionTrace {
    pub layers: Vec<LayerTrace>,
    pub prediction: Vec<f64>,
}

/// Forecast for one query. `trace` is only kept when requested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    pub prediction: Vec<f64>,
    pub layer_predictions: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<PredictionTrace>,
}

impl Forecast {
    /// Sum of the first `k` layer predictions.
    pub fn truncated(&self, k: usize) -> Result<Vec<f64>> {
        sum_layers(&self.layer_predictions, k)
    }
}

fn sum_layers(layers: &[Vec<f64>], k: usize) -> Result<Vec<f64>> {
    if k < 1 {
        return Err(TsnnError::Config("layer count must be at least 1".into()));
    }
    if k > layers.len() {
        return Err(TsnnError::LayerOutOfRange { requested: k, available: layers.len() });
    }
    let mut out = vec![0.0; layers[0].len()];
    for layer in &layers[..k] {
        for (o, v) in out.iter_mut().zip(layer) {
            *o += v;
        }
    }
    Ok(out)
}

/// Prediction using only the first `k` layers of a trace.
pub fn truncate_layers(trace: &PredictionTrace, k: usize) -> Result<Vec<f64>> {
    let layers: Vec<Vec<f64>> = trace.layers.iter().map(|l| l.prediction.clone()).collect();
    sum_layers(&layers, k)
}

/// Per-query state carried from one layer to the next.
struct QueryState {
    input: Vec<f64>,
    layer_predictions: Vec<Vec<f64>>,
    trace: Option<Vec<LayerTrace>>,
}

impl QueryState {
    fn new(x: &[f64], capture: bool) -> Self {
        QueryState { input: x.to_vec(), layer_predictions: Vec::new(), trace: capture.then(Vec::new) }
    }

    fn apply(&mut self, m: LayerMatch, candidates: Vec<usize>) {
        if let Some(trace) = self.trace.as_mut() {
            trace.push(LayerTrace {
                candidate_ids: candidates,
                raw_scores: m.raw,
                normalized_scores: m.normalized,
                prediction: m.prediction.clone(),
                input: std::mem::take(&mut self.input),
                input_mean: m.input_mean,
            });
        }
        self.layer_predictions.push(m.prediction);
        self.input = m.next_input;
    }

    fn finish(self) -> Forecast {
        let prediction = sum_layers(&self.layer_predictions, self.layer_predictions.len())
            .expect("at least one layer was applied");
        let trace = self.trace.map(|layers| PredictionTrace { layers, prediction: prediction.clone() });
        Forecast { prediction, layer_predictions: self.layer_predictions, trace }
    }
}

fn step(bank: &MemoryBank, prepared: &PreparedLayer<'_>, layer: usize, state: &mut QueryState, periodic_step: usize) -> Result<()> {
    let candidates = bank.candidates(periodic_step, None, layer);
    if candidates.is_empty() {
        return Err(TsnnError::UnmatchedPeriodicStep { periodic_step });
    }
    let m = prepared.match_input(&state.input, &candidates, &bank.config().kernel)?;
    state.apply(m, candidates);
    Ok(())
}

fn check_depth(num_layers: usize, available: usize) -> Result<()> {
    if num_layers == 0 {
        return Err(TsnnError::Config("num_layers must be at least 1".into()));
    }
    if num_layers > available {
        return Err(TsnnError::LayerOutOfRange { requested: num_layers, available });
    }
    Ok(())
}

fn check_query(bank: &MemoryBank, q: &Query<'_>) -> Result<()> {
    let c = bank.config();
    if q.x.len() != c.history_len {
        return Err(TsnnError::LengthMismatch { expected: c.history_len, actual: q.x.len() });
    }
    if q.periodic_step >= c.steps_per_period {
        return Err(TsnnError::Config(format!(
            "periodic step {} outside [0, {})",
            q.periodic_step, c.steps_per_period
        )));
    }
    Ok(())
}

/// Forecast one query with the first `num_layers` layers of a built bank.
pub fn predict(bank: &MemoryBank, x: &[f64], periodic_step: usize, num_layers: usize, capture_trace: bool) -> Result<Forecast> {
    check_depth(num_layers, bank.stored_layers())?;
    let q = Query { x, periodic_step };
    check_query(bank, &q)?;
    let mut state = QueryState::new(x, capture_trace);
    for layer in 1..=num_layers {
        let residuals = bank.layer(layer).expect("depth checked");
        let prepared = PreparedLayer::new(residuals, bank.is_centred(layer));
        step(bank, &prepared, layer, &mut state, periodic_step)?;
    }
    Ok(state.finish())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutput {
    pub forecasts: Vec<Forecast>,
    /// Largest amount of bank residual storage held at once, in bytes.
    pub peak_residual_bytes: usize,
}

/// Tracks bank residual bytes alive during a batch.
#[derive(Debug, Default)]
struct ResidualMeter {
    current: usize,
    peak: usize,
}

impl ResidualMeter {
    fn hold(&mut self, layer: &ResidualLayer) {
        self.current += layer.residual_bytes();
        self.peak = self.peak.max(self.current);
    }

    fn release(&mut self, layer: &ResidualLayer) {
        self.current -= layer.residual_bytes();
    }
}

/// Forecast many queries.
///
/// [`Strategy::Standard`] needs a bank with at least `num_layers` stored
/// layers. [`Strategy::MemoryEfficient`] only reads layer 1 and rebuilds the
/// deeper layers alongside the queries, dropping each layer once the next
/// one exists.
pub fn predict_batch(
    bank: &MemoryBank,
    queries: &[Query<'_>],
    num_layers: usize,
    strategy: Strategy,
    capture_trace: bool,
) -> Result<BatchOutput> {
    for q in queries {
        check_query(bank, q)?;
    }
    match strategy {
        Strategy::Standard => {
            check_depth(num_layers, bank.stored_layers())?;
            let prepared: Vec<PreparedLayer<'_>> = (1..=num_layers)
                .map(|l| PreparedLayer::new(bank.layer(l).expect("depth checked"), bank.is_centred(l)))
                .collect();
            let forecasts = queries
                .par_iter()
                .map(|q| {
                    let mut state = QueryState::new(q.x, capture_trace);
                    for (i, p) in prepared.iter().enumerate() {
                        step(bank, p, i + 1, &mut state, q.periodic_step)?;
                    }
                    Ok(state.finish())
                })
                .collect::<Result<Vec<_>>>()?;
            let peak = (1..=num_layers).map(|l| bank.layer(l).expect("checked").residual_bytes()).sum();
            Ok(BatchOutput { forecasts, peak_residual_bytes: peak })
        }
        Strategy::MemoryEfficient => {
            let first = bank.first_layer()?;
            check_depth(num_layers, usize::MAX)?;
            let mut meter = ResidualMeter::default();
            meter.hold(&first);
            let mut states: Vec<QueryState> = queries.iter().map(|q| QueryState::new(q.x, capture_trace)).collect();
            let mut current: Cow<'_, ResidualLayer> = first;
            for layer in 1..=num_layers {
                {
                    let prepared = PreparedLayer::new(&current, bank.is_centred(layer));
                    states
                        .par_iter_mut()
                        .zip(queries.par_iter())
                        .try_for_each(|(state, q)| step(bank, &prepared, layer, state, q.periodic_step))?;
                }
                if layer < num_layers {
                    let next = bank.advance(&current, layer)?;
                    meter.hold(&next);
                    meter.release(&current);
                    current = Cow::Owned(next);
                }
            }
            Ok(BatchOutput {
                forecasts: states.into_iter().map(QueryState::finish).collect(),
                peak_residual_bytes: meter.peak,
            })
        }
    }
}
