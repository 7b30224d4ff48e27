//! Layered memory bank.
//!
//! Layer 1 stores the raw training windows. Each later layer stores the
//! residuals left after matching every entry against the previous layer
//! with itself excluded. Layer 1 matches only entries whose periodic step is
//! within the tolerance; later layers match all other entries after removing
//! each residual's historical mean.

use std::borrow::Cow;
use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::dataset::SeriesWindow;
use crate::error::{Result, TsnnError};
use crate::kernel::{self, KernelConfig, Scaling};

/// Residual pairs of every entry at one layer, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualLayer {
    history: Vec<f64>,
    future: Vec<f64>,
    history_len: usize,
    horizon_len: usize,
}

impl ResidualLayer {
    fn with_capacity(n: usize, history_len: usize, horizon_len: usize) -> Self {
        ResidualLayer {
            history: Vec::with_capacity(n * history_len),
            future: Vec::with_capacity(n * horizon_len),
            history_len,
            horizon_len,
        }
    }

    pub fn len(&self) -> usize {
        self.history.len() / self.history_len
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    pub fn history(&self, j: usize) -> &[f64] {
        &self.history[j * self.history_len..(j + 1) * self.history_len]
    }

    pub fn future(&self, j: usize) -> &[f64] {
        &self.future[j * self.horizon_len..(j + 1) * self.horizon_len]
    }

    /// Bytes held by the residual arrays.
    pub fn residual_bytes(&self) -> usize {
        (self.history.len() + self.future.len()) * std::mem::size_of::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualPair {
    pub history: Vec<f64>,
    pub future: Vec<f64>,
}

/// Owned copy of one bank entry across all stored layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankEntry {
    pub entry_id: usize,
    pub source_index: usize,
    pub periodic_step: usize,
    pub layers: Vec<ResidualPair>,
}

/// Entry ids matched by one instance at one layer, ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet(pub Vec<usize>);

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, id: usize) -> bool {
        self.0.binary_search(&id).is_ok()
    }
}

/// The memory bank of one sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    sensor_id: u32,
    config: ModelConfig,
    source_index: Vec<usize>,
    periodic_steps: Vec<usize>,
    layers: Vec<ResidualLayer>,
    by_period: Vec<Vec<usize>>,
}

/// Arithmetic mean of a residual.
pub fn mean_of(residual: &[f64]) -> f64 {
    if residual.is_empty() {
        return 0.0;
    }
    residual.iter().sum::<f64>() / residual.len() as f64
}

/// Result of matching one input against one layer.
#[derive(Debug, Clone)]
pub(crate) struct LayerMatch {
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
    pub prediction: Vec<f64>,
    pub next_input: Vec<f64>,
    pub input_mean: Option<f64>,
}

/// A layer with per-entry historical means when mean decoupling applies.
pub(crate) struct PreparedLayer<'a> {
    layer: &'a ResidualLayer,
    means: Option<Vec<f64>>,
}

impl<'a> PreparedLayer<'a> {
    pub(crate) fn new(layer: &'a ResidualLayer, centred: bool) -> Self {
        let means = centred.then(|| (0..layer.len()).map(|j| mean_of(layer.history(j))).collect());
        PreparedLayer { layer, means }
    }

    /// Score `input` against `candidates` and aggregate their residuals.
    pub(crate) fn match_input(&self, input: &[f64], candidates: &[usize], kernel: &KernelConfig) -> Result<LayerMatch> {
        if candidates.is_empty() {
            return Err(TsnnError::EmptyCandidates);
        }
        let layer = self.layer;
        if input.len() != layer.history_len {
            return Err(TsnnError::LengthMismatch { expected: layer.history_len, actual: input.len() });
        }
        let input_mean = self.means.as_ref().map(|_| mean_of(input));
        let shift = input_mean.unwrap_or(0.0);
        let query: Vec<f64> = input.iter().map(|v| v - shift).collect();
        let offset = |k: usize| self.means.as_ref().map_or(0.0, |m| m[k]);

        let d: Vec<f64> = candidates
            .iter()
            .map(|&k| {
                let mk = offset(k);
                query
                    .iter()
                    .zip(layer.history(k))
                    .map(|(q, x)| {
                        let diff = q - (x - mk);
                        diff * diff
                    })
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        let (raw, normalized) = kernel::scores_from_distances(&d, kernel)?;

        let mut agg_x = vec![0.0; layer.history_len];
        let mut agg_y = vec![0.0; layer.horizon_len];
        for (&k, &w) in candidates.iter().zip(&normalized) {
            if w == 0.0 {
                continue;
            }
            let mk = offset(k);
            for (a, x) in agg_x.iter_mut().zip(layer.history(k)) {
                *a += w * (x - mk);
            }
            for (a, y) in agg_y.iter_mut().zip(layer.future(k)) {
                *a += w * (y - mk);
            }
        }
        let next_input = query.iter().zip(&agg_x).map(|(q, a)| q - a).collect();
        let prediction = agg_y.into_iter().map(|a| shift + a).collect();
        Ok(LayerMatch { raw, normalized, prediction, next_input, input_mean })
    }
}

impl MemoryBank {
    /// A bank holding only the raw layer-1 windows.
    pub fn from_windows(windows: &[SeriesWindow], config: &ModelConfig, sensor_id: u32) -> Result<Self> {
        config.validate()?;
        if windows.len() < 2 {
            return Err(TsnnError::Config(format!("need at least 2 training windows, got {}", windows.len())));
        }
        let mut layer = ResidualLayer::with_capacity(windows.len(), config.history_len, config.horizon_len);
        let mut source_index = Vec::with_capacity(windows.len());
        let mut periodic_steps = Vec::with_capacity(windows.len());
        for w in windows {
            if w.x.len() != config.history_len {
                return Err(TsnnError::LengthMismatch { expected: config.history_len, actual: w.x.len() });
            }
            if w.y.len() != config.horizon_len {
                return Err(TsnnError::LengthMismatch { expected: config.horizon_len, actual: w.y.len() });
            }
            if w.periodic_step != w.index % config.steps_per_period {
                return Err(TsnnError::Config(format!(
                    "window at {} has periodic step {}, expected {} for period {}",
                    w.index,
                    w.periodic_step,
                    w.index % config.steps_per_period,
                    config.steps_per_period
                )));
            }
            layer.history.extend_from_slice(&w.x);
            layer.future.extend_from_slice(&w.y);
            source_index.push(w.index);
            periodic_steps.push(w.periodic_step);
        }
        let bank = Self::assemble(sensor_id, *config, source_index, periodic_steps, vec![layer]);
        bank.check_layer_one_coverage()?;
        Ok(bank)
    }

    fn assemble(
        sensor_id: u32,
        config: ModelConfig,
        source_index: Vec<usize>,
        periodic_steps: Vec<usize>,
        layers: Vec<ResidualLayer>,
    ) -> Self {
        let mut by_period = vec![Vec::new(); config.steps_per_period];
        for (j, &p) in periodic_steps.iter().enumerate() {
            by_period[p].push(j);
        }
        MemoryBank { sensor_id, config, source_index, periodic_steps, layers, by_period }
    }

    fn check_layer_one_coverage(&self) -> Result<()> {
        for (j, &p) in self.periodic_steps.iter().enumerate() {
            if self.layer_one_candidates(p, Some(j)).is_empty() {
                return Err(TsnnError::UnmatchedPeriodicStep { periodic_step: p });
            }
        }
        Ok(())
    }

    pub fn sensor_id(&self) -> u32 {
        self.sensor_id
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn n_entries(&self) -> usize {
        self.source_index.len()
    }

    pub fn stored_layers(&self) -> usize {
        self.layers.len()
    }

    /// Residuals at 1-based layer `layer`.
    pub fn layer(&self, layer: usize) -> Option<&ResidualLayer> {
        layer.checked_sub(1).and_then(|i| self.layers.get(i))
    }

    pub fn source_index(&self, j: usize) -> usize {
        self.source_index[j]
    }

    pub fn periodic_step(&self, j: usize) -> usize {
        self.periodic_steps[j]
    }

    pub fn entry(&self, j: usize) -> BankEntry {
        BankEntry {
            entry_id: j,
            source_index: self.source_index[j],
            periodic_step: self.periodic_steps[j],
            layers: self
                .layers
                .iter()
                .map(|l| ResidualPair { history: l.history(j).to_vec(), future: l.future(j).to_vec() })
                .collect(),
        }
    }

    pub fn residual_bytes(&self) -> usize {
        self.layers.iter().map(ResidualLayer::residual_bytes).sum()
    }

    /// Whether layer `layer` (1-based) centres residuals on their mean.
    pub(crate) fn is_centred(&self, layer: usize) -> bool {
        layer > 1 && self.config.mean_decoupling
    }

    fn layer_one_candidates(&self, periodic_step: usize, exclude: Option<usize>) -> Vec<usize> {
        let t = self.config.steps_per_period;
        let tol = self.config.tolerance;
        if !self.config.time_wise_decoupling || 2 * tol + 1 >= t {
            return self.all_except(exclude);
        }
        let mut out: Vec<usize> = (0..=2 * tol)
            .flat_map(|offset| {
                let p = (periodic_step % t + t + offset - tol) % t;
                self.by_period[p].iter().copied()
            })
            .filter(|&j| Some(j) != exclude)
            .collect();
        out.sort_unstable();
        out
    }

    fn all_except(&self, exclude: Option<usize>) -> Vec<usize> {
        (0..self.n_entries()).filter(|&j| Some(j) != exclude).collect()
    }

    pub(crate) fn candidates(&self, periodic_step: usize, exclude: Option<usize>, layer: usize) -> Vec<usize> {
        if layer <= 1 {
            self.layer_one_candidates(periodic_step, exclude)
        } else {
            self.all_except(exclude)
        }
    }

    /// Residuals for layer `layer + 1`, computed leave-one-out from `current`
    /// (the residuals at 1-based `layer`).
    pub(crate) fn advance(&self, current: &ResidualLayer, layer: usize) -> Result<ResidualLayer> {
        let prepared = PreparedLayer::new(current, self.is_centred(layer));
        let kernel = self.config.kernel;
        let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..self.n_entries())
            .into_par_iter()
            .map(|j| {
                let candidates = self.candidates(self.periodic_steps[j], Some(j), layer);
                if candidates.is_empty() {
                    return Err(TsnnError::UnmatchedPeriodicStep { periodic_step: self.periodic_steps[j] });
                }
                let m = prepared.match_input(current.history(j), &candidates, &kernel)?;
                let future = current.future(j).iter().zip(&m.prediction).map(|(y, p)| y - p).collect();
                Ok((m.next_input, future))
            })
            .collect::<Result<_>>()?;
        let mut next = ResidualLayer::with_capacity(rows.len(), current.history_len, current.horizon_len);
        for (h, f) in rows {
            next.history.extend(h);
            next.future.extend(f);
        }
        Ok(next)
    }

    /// Extend a bank until it stores `layers` layers.
    pub fn extend_to(&mut self, layers: usize) -> Result<()> {
        if self.layers.is_empty() {
            return Err(TsnnError::MissingLayerOne);
        }
        while self.layers.len() < layers {
            let depth = self.layers.len();
            let next = self.advance(&self.layers[depth - 1], depth)?;
            self.layers.push(next);
        }
        Ok(())
    }

    /// Drop every layer above layer 1.
    pub fn into_layer_one(mut self) -> Self {
        self.layers.truncate(1);
        self
    }

    pub(crate) fn first_layer(&self) -> Result<Cow<'_, ResidualLayer>> {
        self.layers.first().map(Cow::Borrowed).ok_or(TsnnError::MissingLayerOne)
    }
}

/// Build a bank with `config.layers` layers from training windows.
pub fn build_bank(train: &[SeriesWindow], config: &ModelConfig, sensor_id: u32) -> Result<MemoryBank> {
    let mut bank = MemoryBank::from_windows(train, config, sensor_id)?;
    bank.extend_to(config.layers)?;
    Ok(bank)
}

/// Entries an instance at `periodic_step` matches at 1-based `layer`.
///
/// `instance` is the instance's own entry id when it is a training entry;
/// test instances pass `None` and exclude nothing.
pub fn candidate_set(bank: &MemoryBank, periodic_step: usize, instance: Option<usize>, layer: usize) -> CandidateSet {
    CandidateSet(bank.candidates(periodic_step, instance, layer))
}

const MAGIC: &[u8; 8] = b"TSNNBANK";
const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 82;
const FLAG_TIME_WISE: u8 = 1;
const FLAG_MEAN: u8 = 1 << 1;
const FLAG_NORMALIZE: u8 = 1 << 2;

fn record_len(layers: usize, history_len: usize, horizon_len: usize) -> usize {
    8 + 8 + 4 + layers * (history_len + horizon_len) * 8
}

/// Size in bytes of a bank file with the given shape.
pub fn bank_file_len(n_entries: usize, layers: usize, history_len: usize, horizon_len: usize) -> usize {
    HEADER_LEN + n_entries * record_len(layers, history_len, horizon_len) + 4
}

fn encode(bank: &MemoryBank) -> Vec<u8> {
    let c = &bank.config;
    let n = bank.n_entries();
    let stored = bank.layers.len();
    let mut buf = Vec::with_capacity(bank_file_len(n, stored, c.history_len, c.horizon_len));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&bank.sensor_id.to_le_bytes());
    buf.extend_from_slice(&(n as u64).to_le_bytes());
    for v in [stored, c.history_len, c.horizon_len, c.steps_per_period, c.tolerance] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    buf.extend_from_slice(&c.kernel.gamma.to_le_bytes());
    buf.extend_from_slice(&c.kernel.beta.to_le_bytes());
    buf.push(c.kernel.scaling.id());
    let mut flags = 0;
    if c.time_wise_decoupling {
        flags |= FLAG_TIME_WISE;
    }
    if c.mean_decoupling {
        flags |= FLAG_MEAN;
    }
    if c.kernel.normalize_distances {
        flags |= FLAG_NORMALIZE;
    }
    buf.push(flags);
    buf.extend_from_slice(&c.kernel.epsilon.to_le_bytes());
    buf.extend_from_slice(&c.kernel.mu.to_le_bytes());
    buf.extend_from_slice(&(c.layers as u32).to_le_bytes());
    debug_assert_eq!(buf.len(), HEADER_LEN);

    for j in 0..n {
        buf.extend_from_slice(&(j as u64).to_le_bytes());
        buf.extend_from_slice(&(bank.source_index[j] as u64).to_le_bytes());
        buf.extend_from_slice(&(bank.periodic_steps[j] as u32).to_le_bytes());
        for layer in &bank.layers {
            for v in layer.history(j).iter().chain(layer.future(j)) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

/// Write a bank to `path` in the binary bank format.
pub fn save_bank(bank: &MemoryBank, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(bank);
    let mut file = fs::File::create(path).map_err(|e| TsnnError::io(path, e))?;
    file.write_all(&bytes).map_err(|e| TsnnError::io(path, e))?;
    file.sync_all().map_err(|e| TsnnError::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let out: [u8; N] = self.bytes[self.pos..self.pos + N].try_into().expect("length checked");
        self.pos += N;
        out
    }
    fn u8(&mut self) -> u8 {
        self.take::<1>()[0]
    }
    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take())
    }
    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take())
    }
    fn f64(&mut self) -> f64 {
        f64::from_le_bytes(self.take())
    }
}

/// Read a bank written by [`save_bank`].
pub fn load_bank(path: impl AsRef<Path>) -> Result<MemoryBank> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| TsnnError::io(path, e))?;
    decode(&bytes).map_err(|message| TsnnError::BankFormat { path: path.to_owned(), message })
}

fn decode(bytes: &[u8]) -> std::result::Result<MemoryBank, String> {
    if bytes.len() < HEADER_LEN + 4 {
        return Err(format!("truncated file ({} bytes)", bytes.len()));
    }
    if &bytes[..8] != MAGIC {
        return Err("bad magic bytes".into());
    }
    let mut cur = Cursor { bytes, pos: 8 };
    let version = cur.u32();
    if version != FORMAT_VERSION {
        return Err(format!("unsupported format version {version}, expected {FORMAT_VERSION}"));
    }
    let sensor_id = cur.u32();
    let n = cur.u64() as usize;
    let stored = cur.u32() as usize;
    let history_len = cur.u32() as usize;
    let horizon_len = cur.u32() as usize;
    let steps_per_period = cur.u32() as usize;
    let tolerance = cur.u32() as usize;
    let gamma = cur.f64();
    let beta = cur.f64();
    let scaling_id = cur.u8();
    let flags = cur.u8();
    let epsilon = cur.f64();
    let mu = cur.f64();
    let target_layers = cur.u32() as usize;

    let expected = n
        .checked_mul(record_len(stored, history_len, horizon_len))
        .and_then(|r| r.checked_add(HEADER_LEN + 4))
        .ok_or("header sizes overflow")?;
    if bytes.len() != expected {
        return Err(format!("truncated or oversized file: {} bytes, header implies {expected}", bytes.len()));
    }
    let body = &bytes[..bytes.len() - 4];
    let stored_crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored_crc {
        return Err("checksum mismatch".into());
    }

    let scaling = Scaling::from_id(scaling_id).ok_or_else(|| format!("unknown scaling id {scaling_id}"))?;
    let config = ModelConfig {
        kernel: KernelConfig {
            gamma,
            beta,
            scaling,
            epsilon,
            mu,
            normalize_distances: flags & FLAG_NORMALIZE != 0,
        },
        layers: target_layers,
        tolerance,
        steps_per_period,
        history_len,
        horizon_len,
        time_wise_decoupling: flags & FLAG_TIME_WISE != 0,
        mean_decoupling: flags & FLAG_MEAN != 0,
    };
    config.validate().map_err(|e| e.to_string())?;
    if stored == 0 {
        return Err("bank stores no layers".into());
    }

    let mut layers: Vec<ResidualLayer> =
        (0..stored).map(|_| ResidualLayer::with_capacity(n, history_len, horizon_len)).collect();
    let mut source_index = Vec::with_capacity(n);
    let mut periodic_steps = Vec::with_capacity(n);
    for j in 0..n {
        let id = cur.u64() as usize;
        if id != j {
            return Err(format!("entry {j} carries id {id}"));
        }
        source_index.push(cur.u64() as usize);
        let p = cur.u32() as usize;
        if p >= steps_per_period {
            return Err(format!("entry {j} has periodic step {p} outside [0, {steps_per_period})"));
        }
        periodic_steps.push(p);
        for layer in layers.iter_mut() {
            for _ in 0..history_len {
                layer.history.push(cur.f64());
            }
            for _ in 0..horizon_len {
                layer.future.push(cur.f64());
            }
        }
    }
    if layers.iter().any(|l| l.history.iter().chain(&l.future).any(|v| !v.is_finite())) {
        return Err("non-finite residual".into());
    }
    Ok(MemoryBank::assemble(sensor_id, config, source_index, periodic_steps, layers))
}
