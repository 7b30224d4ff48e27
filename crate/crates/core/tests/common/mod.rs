//! Straight-line reference forecaster used as a test oracle.
//!
//! Written from the model description with plain nested vectors. Nothing
//! here calls into the crate's kernel, bank or predictor code.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy)]
pub enum RefScaling {
    Exp,
    Complement,
    InvSq,
    Sigmoid,
}

#[derive(Debug, Clone, Copy)]
pub struct RefConfig {
    pub gamma: f64,
    pub beta: f64,
    pub scaling: RefScaling,
    pub epsilon: f64,
    pub mu: f64,
    pub normalize: bool,
    pub layers: usize,
    pub tolerance: usize,
    pub period: usize,
    pub time_wise: bool,
    pub mean_centre: bool,
}

#[derive(Debug, Clone)]
pub struct RefEntry {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub step: usize,
}

pub fn ref_mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Raw and normalised scores of `q` against `cands`.
pub fn ref_scores(q: &[f64], cands: &[Vec<f64>], c: &RefConfig) -> (Vec<f64>, Vec<f64>) {
    let mut d = Vec::new();
    for cand in cands {
        let mut s = 0.0;
        for i in 0..q.len() {
            s += (q[i] - cand[i]).powi(2);
        }
        d.push(s.sqrt());
    }
    let lo = d.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let dn: Vec<f64> = d.iter().map(|&v| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 }).collect();
    let mut raw = Vec::new();
    for k in 0..d.len() {
        let r = match c.scaling {
            RefScaling::Exp if c.normalize => (-(c.gamma * dn[k]).powf(c.beta)).exp(),
            RefScaling::Exp => (-c.gamma * d[k].powf(c.beta)).exp(),
            RefScaling::Complement => 1.0 - dn[k],
            RefScaling::InvSq => 1.0 / (d[k] * d[k] + c.epsilon),
            RefScaling::Sigmoid => 1.0 / (1.0 + (d[k] - c.mu).exp()),
        };
        raw.push(r);
    }
    let total: f64 = raw.iter().sum();
    let norm = raw.iter().map(|r| r / total).collect();
    (raw, norm)
}

fn circ(a: usize, b: usize, t: usize) -> usize {
    let d = if a > b { a - b } else { b - a } % t;
    d.min(t - d)
}

pub fn ref_candidates(entries: &[RefEntry], step: usize, skip: Option<usize>, layer: usize, c: &RefConfig) -> Vec<usize> {
    let mut out = Vec::new();
    for (j, e) in entries.iter().enumerate() {
        if Some(j) == skip {
            continue;
        }
        if layer == 1 && c.time_wise && circ(step % c.period, e.step, c.period) > c.tolerance {
            continue;
        }
        out.push(j);
    }
    out
}

/// One layer: returns (layer prediction, next input, normalised scores).
pub fn ref_layer(
    input: &[f64],
    layer_x: &[Vec<f64>],
    layer_y: &[Vec<f64>],
    cands: &[usize],
    layer: usize,
    c: &RefConfig,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let centred = layer >= 2 && c.mean_centre;
    let m = if centred { ref_mean(input) } else { 0.0 };
    let q: Vec<f64> = input.iter().map(|v| v - m).collect();
    let mut cx = Vec::new();
    let mut cy = Vec::new();
    for &k in cands {
        let mk = if centred { ref_mean(&layer_x[k]) } else { 0.0 };
        cx.push(layer_x[k].iter().map(|v| v - mk).collect::<Vec<f64>>());
        cy.push(layer_y[k].iter().map(|v| v - mk).collect::<Vec<f64>>());
    }
    let (_, w) = ref_scores(&q, &cx, c);
    let mut pred = vec![m; layer_y[0].len()];
    let mut next = q.clone();
    for k in 0..cands.len() {
        for i in 0..pred.len() {
            pred[i] += w[k] * cy[k][i];
        }
        for i in 0..next.len() {
            next[i] -= w[k] * cx[k][i];
        }
    }
    (pred, next, w)
}

/// Residual bank: `xs[l][j]`, `ys[l][j]` for 0-based layer `l`.
pub struct RefBank {
    pub entries: Vec<RefEntry>,
    pub xs: Vec<Vec<Vec<f64>>>,
    pub ys: Vec<Vec<Vec<f64>>>,
    pub config: RefConfig,
}

pub fn ref_build(entries: &[RefEntry], c: &RefConfig) -> RefBank {
    let mut xs = vec![entries.iter().map(|e| e.x.clone()).collect::<Vec<_>>()];
    let mut ys = vec![entries.iter().map(|e| e.y.clone()).collect::<Vec<_>>()];
    for layer in 1..c.layers {
        let (cur_x, cur_y) = (&xs[layer - 1], &ys[layer - 1]);
        let mut nx = Vec::new();
        let mut ny = Vec::new();
        for j in 0..entries.len() {
            let cands = ref_candidates(entries, entries[j].step, Some(j), layer, c);
            let (pred, next, _) = ref_layer(&cur_x[j], cur_x, cur_y, &cands, layer, c);
            nx.push(next);
            ny.push(cur_y[j].iter().zip(&pred).map(|(y, p)| y - p).collect());
        }
        xs.push(nx);
        ys.push(ny);
    }
    RefBank { entries: entries.to_vec(), xs, ys, config: *c }
}

/// Per-layer predictions for a query; the forecast is their sum.
pub fn ref_predict(bank: &RefBank, x: &[f64], step: usize) -> Vec<Vec<f64>> {
    let c = &bank.config;
    let mut input = x.to_vec();
    let mut out = Vec::new();
    for layer in 1..=c.layers {
        let cands = ref_candidates(&bank.entries, step, None, layer, c);
        let (pred, next, _) = ref_layer(&input, &bank.xs[layer - 1], &bank.ys[layer - 1], &cands, layer, c);
        out.push(pred);
        input = next;
    }
    out
}

pub fn ref_sum(layers: &[Vec<f64>]) -> Vec<f64> {
    let mut s = vec![0.0; layers[0].len()];
    for l in layers {
        for i in 0..s.len() {
            s[i] += l[i];
        }
    }
    s
}

/// Nadaraya-Watson with a Gaussian kernel of bandwidth `sigma`.
pub fn ref_nadaraya_watson(x: &[f64], cx: &[Vec<f64>], cy: &[Vec<f64>], sigma: f64) -> Vec<f64> {
    let w: Vec<f64> = cx
        .iter()
        .map(|c| {
            let d2: f64 = x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
            (-d2 / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = w.iter().sum();
    let mut out = vec![0.0; cy[0].len()];
    for (wk, y) in w.iter().zip(cy) {
        for i in 0..out.len() {
            out[i] += wk * y[i] / total;
        }
    }
    out
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Largest `|a - b| / max(1, |b|)`.
pub fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / y.abs().max(1.0)).fold(0.0, f64::max)
}

// Glue between the reference types and the crate's inputs.

use tsnn::{KernelConfig, ModelConfig, Scaling, SeriesWindow};

pub fn to_model(c: &RefConfig, history_len: usize, horizon_len: usize) -> ModelConfig {
    ModelConfig {
        kernel: KernelConfig {
            gamma: c.gamma,
            beta: c.beta,
            scaling: match c.scaling {
                RefScaling::Exp => Scaling::Exponential,
                RefScaling::Complement => Scaling::Complement,
                RefScaling::InvSq => Scaling::InverseSquare,
                RefScaling::Sigmoid => Scaling::Sigmoid,
            },
            epsilon: c.epsilon,
            mu: c.mu,
            normalize_distances: c.normalize,
        },
        layers: c.layers,
        tolerance: c.tolerance,
        steps_per_period: c.period,
        history_len,
        horizon_len,
        time_wise_decoupling: c.time_wise,
        mean_decoupling: c.mean_centre,
    }
}

/// Entry `j` gets absolute index `step + period * j`.
pub fn to_windows(entries: &[RefEntry], period: usize) -> Vec<SeriesWindow> {
    entries
        .iter()
        .enumerate()
        .map(|(j, e)| SeriesWindow { x: e.x.clone(), y: e.y.clone(), index: e.step + period * j, periodic_step: e.step })
        .collect()
}

pub struct ToyProblem {
    pub entries: Vec<RefEntry>,
    pub config: RefConfig,
    pub history_len: usize,
    pub horizon_len: usize,
    pub queries: Vec<(Vec<f64>, usize)>,
}

/// At most 10 entries and 3 layers; every occupied step holds at least two entries.
pub fn toy_problem(rng: &mut ChaCha8Rng) -> ToyProblem {
    let period = rng.gen_range(2..=5);
    let history_len = rng.gen_range(1..=4);
    let horizon_len = rng.gen_range(1..=3);
    let pairs = rng.gen_range(2..=5);
    let mut steps = Vec::new();
    for _ in 0..pairs {
        let s = rng.gen_range(0..period);
        steps.push(s);
        steps.push(s);
    }
    let entries: Vec<RefEntry> = steps
        .into_iter()
        .map(|step| RefEntry {
            x: random_vec(rng, history_len, -5.0, 5.0),
            y: random_vec(rng, horizon_len, -5.0, 5.0),
            step,
        })
        .collect();
    let scaling = match rng.gen_range(0..4) {
        0 => RefScaling::Exp,
        1 => RefScaling::Complement,
        2 => RefScaling::InvSq,
        _ => RefScaling::Sigmoid,
    };
    let config = RefConfig {
        gamma: rng.gen_range(0.5..10.0),
        beta: rng.gen_range(0.5..2.0),
        scaling,
        epsilon: 1e-5,
        mu: 0.5,
        normalize: true,
        layers: rng.gen_range(1..=3),
        tolerance: rng.gen_range(0..=2),
        period,
        time_wise: rng.gen_bool(0.7),
        mean_centre: rng.gen_bool(0.7),
    };
    let occupied: Vec<usize> = entries.iter().map(|e| e.step).collect();
    let queries = (0..3)
        .map(|_| (random_vec(rng, history_len, -5.0, 5.0), occupied[rng.gen_range(0..occupied.len())]))
        .collect();
    ToyProblem { entries, config, history_len, horizon_len, queries }
}
