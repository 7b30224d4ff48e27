//! Instance-wise similarity scores.
//!
//! A query is compared with every candidate by Euclidean distance. Distances
//! are min-max normalised into `[0, 1]`, mapped to raw scores by a scaling
//! function, and the raw scores are divided by their sum so that the
//! normalised scores form a convex combination.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TsnnError};

/// How distances are turned into raw similarity scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scaling {
    /// `exp(-(gamma * d_hat)^beta)` on min-max normalised distances.
    Exponential,
    /// `1 - d_hat` on min-max normalised distances.
    Complement,
    /// `1 / (d^2 + epsilon)` on raw distances.
    InverseSquare,
    /// `1 / (1 + exp(d - mu))` on raw distances.
    Sigmoid,
}

impl Scaling {
    pub const ALL: [Scaling; 4] = [
        Scaling::Exponential,
        Scaling::Complement,
        Scaling::InverseSquare,
        Scaling::Sigmoid,
    ];

    /// Whether the scaling is defined on min-max normalised distances.
    pub fn uses_normalized_distance(self) -> bool {
        matches!(self, Scaling::Exponential | Scaling::Complement)
    }

    pub fn id(self) -> u8 {
        match self {
            Scaling::Exponential => 0,
            Scaling::Complement => 1,
            Scaling::InverseSquare => 2,
            Scaling::Sigmoid => 3,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Scaling::ALL.into_iter().find(|s| s.id() == id)
    }

    pub fn name(self) -> &'static str {
        match self {
            Scaling::Exponential => "exp",
            Scaling::Complement => "complement",
            Scaling::InverseSquare => "invsq",
            Scaling::Sigmoid => "sigmoid",
        }
    }
}

impl std::str::FromStr for Scaling {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "exp" | "exponential" => Ok(Scaling::Exponential),
            "complement" => Ok(Scaling::Complement),
            "invsq" | "inverse-square" => Ok(Scaling::InverseSquare),
            "sigmoid" => Ok(Scaling::Sigmoid),
            other => Err(format!("unknown scaling `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub gamma: f64,
    pub beta: f64,
    pub scaling: Scaling,
    /// Only used by [`Scaling::InverseSquare`].
    pub epsilon: f64,
    /// Only used by [`Scaling::Sigmoid`].
    pub mu: f64,
    /// Min-max normalise distances before exponential / complement scaling.
    ///
    /// With normalisation off, exponential scaling uses the plain kernel form
    /// `exp(-gamma * d^beta)`, which with `gamma = 1 / (2 sigma^2)` and
    /// `beta = 2` is a Gaussian kernel.
    pub normalize_distances: bool,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            gamma: 10.0,
            beta: 1.5,
            scaling: Scaling::Exponential,
            epsilon: 1e-5,
            mu: 0.5,
            normalize_distances: true,
        }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(TsnnError::Config(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(TsnnError::Config(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(TsnnError::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !self.mu.is_finite() {
            return Err(TsnnError::Config(format!("mu must be finite, got {}", self.mu)));
        }
        Ok(())
    }
}

/// Raw and normalised scores for one query against one candidate set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub candidate_ids: Vec<usize>,
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
}

#[inline]
pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Euclidean distance from `x` to each candidate.
pub fn distances(x: &[f64], candidates: &[&[f64]]) -> Result<Vec<f64>> {
    if candidates.is_empty() {
        return Err(TsnnError::EmptyCandidates);
    }
    candidates
        .iter()
        .map(|c| {
            if c.len() != x.len() {
                Err(TsnnError::LengthMismatch { expected: x.len(), actual: c.len() })
            } else {
                Ok(euclidean(x, c))
            }
        })
        .collect()
}

/// Min-max normalisation into `[0, 1]`. A constant input maps to all zeros.
pub fn normalize_distances(d: &[f64]) -> Result<Vec<f64>> {
    if d.is_empty() {
        return Err(TsnnError::EmptyCandidates);
    }
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &v in d {
        if !v.is_finite() {
            return Err(TsnnError::Dimension(format!("non-finite distance {v}")));
        }
        min = min.min(v);
        max = max.max(v);
    }
    let spread = max - min;
    if spread == 0.0 {
        return Ok(vec![0.0; d.len()]);
    }
    // Clamp guards the last ulp; the extremes come out as exactly 0 and 1.
    Ok(d.iter().map(|&v| ((v - min) / spread).clamp(0.0, 1.0)).collect())
}

#[inline]
fn exponential(d: f64, gamma: f64, beta: f64) -> f64 {
    if d == 0.0 {
        return 1.0;
    }
    let exponent = -(beta * (gamma * d).ln()).exp();
    exponent.exp()
}

/// Map distances to raw similarity scores.
///
/// Exponential and complement scalings expect min-max normalised distances
/// when `config.normalize_distances` is set; inverse-square and sigmoid
/// always take raw distances.
pub fn scale_scores(d: &[f64], config: &KernelConfig) -> Result<Vec<f64>> {
    let normalized_domain = config.scaling.uses_normalized_distance() && config.normalize_distances;
    if normalized_domain {
        if let Some(&bad) = d.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(TsnnError::OutOfDomain { value: bad });
        }
    }
    let out = match config.scaling {
        Scaling::Exponential if config.normalize_distances => {
            d.iter().map(|&v| exponential(v, config.gamma, config.beta)).collect()
        }
        Scaling::Exponential => d
            .iter()
            .map(|&v| if v == 0.0 { 1.0 } else { (-config.gamma * v.powf(config.beta)).exp() })
            .collect(),
        Scaling::Complement => {
            if let Some(&bad) = d.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(TsnnError::OutOfDomain { value: bad });
            }
            d.iter().map(|&v| 1.0 - v).collect()
        }
        Scaling::InverseSquare => d.iter().map(|&v| 1.0 / (v * v + config.epsilon)).collect(),
        Scaling::Sigmoid => d.iter().map(|&v| 1.0 / (1.0 + (v - config.mu).exp())).collect(),
    };
    Ok(out)
}

/// Divide each raw score by the sum of all raw scores.
pub fn normalize_scores(raw: &[f64]) -> Result<Vec<f64>> {
    if raw.is_empty() {
        return Err(TsnnError::EmptyCandidates);
    }
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(TsnnError::ZeroScoreSum);
    }
    Ok(raw.iter().map(|&a| a / total).collect())
}

/// Raw and normalised scores from precomputed raw distances.
pub fn scores_from_distances(d: &[f64], config: &KernelConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    let raw = if config.scaling.uses_normalized_distance() && config.normalize_distances {
        scale_scores(&normalize_distances(d)?, config)?
    } else {
        if d.is_empty() {
            return Err(TsnnError::EmptyCandidates);
        }
        scale_scores(d, config)?
    };
    let normalized = normalize_scores(&raw)?;
    Ok((raw, normalized))
}

/// Full scoring pipeline for one query against a candidate list.
pub fn score(x: &[f64], candidates: &[&[f64]], ids: Vec<usize>, config: &KernelConfig) -> Result<ScoreSet> {
    if ids.len() != candidates.len() {
        return Err(TsnnError::LengthMismatch { expected: candidates.len(), actual: ids.len() });
    }
    let d = distances(x, candidates)?;
    let (raw, normalized) = scores_from_distances(&d, config)?;
    Ok(ScoreSet { candidate_ids: ids, raw, normalized })
}

/// Nadaraya–Watson regression with a Gaussian kernel of bandwidth `sigma`.
pub fn nadaraya_watson(x: &[f64], candidates_x: &[&[f64]], candidates_y: &[&[f64]], sigma: f64) -> Result<Vec<f64>> {
    if candidates_x.is_empty() {
        return Err(TsnnError::EmptyCandidates);
    }
    if candidates_x.len() != candidates_y.len() {
        return Err(TsnnError::LengthMismatch { expected: candidates_x.len(), actual: candidates_y.len() });
    }
    if !(sigma > 0.0) {
        return Err(TsnnError::Config(format!("sigma must be positive, got {sigma}")));
    }
    let horizon = candidates_y[0].len();
    let two_sigma_sq = 2.0 * sigma * sigma;
    let mut numerator = vec![0.0; horizon];
    let mut denominator = 0.0;
    for (cx, cy) in candidates_x.iter().zip(candidates_y) {
        if cx.len() != x.len() {
            return Err(TsnnError::LengthMismatch { expected: x.len(), actual: cx.len() });
        }
        if cy.len() != horizon {
            return Err(TsnnError::LengthMismatch { expected: horizon, actual: cy.len() });
        }
        let sq: f64 = x.iter().zip(cx.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        let w = (-sq / two_sigma_sq).exp();
        denominator += w;
        for (n, v) in numerator.iter_mut().zip(cy.iter()) {
            *n += w * v;
        }
    }
    if denominator == 0.0 {
        return Err(TsnnError::KernelUnderflow);
    }
    Ok(numerator.into_iter().map(|n| n / denominator).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn distance_examples() {
        assert_eq!(distances(&[1.0, 2.0], &[&[1.0, 2.0]]).unwrap(), vec![0.0]);
        assert_eq!(distances(&[0.0, 3.0], &[&[4.0, 0.0]]).unwrap(), vec![5.0]);
        assert!(matches!(distances(&[0.0], &[]), Err(TsnnError::EmptyCandidates)));
        assert!(matches!(
            distances(&[0.0, 1.0], &[&[1.0]]),
            Err(TsnnError::LengthMismatch { expected: 2, actual: 1 })
        ));
    }

    #[test]
    fn normalize_distance_examples() {
        assert_eq!(normalize_distances(&[2.0, 4.0, 6.0]).unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(normalize_distances(&[3.0, 3.0, 3.0]).unwrap(), vec![0.0, 0.0, 0.0]);
        let v = normalize_distances(&[1.0, 2.0, 4.0]).unwrap();
        assert_eq!(v[0], 0.0);
        assert!(close(v[1], 1.0 / 3.0, 1e-15));
        assert_eq!(v[2], 1.0);
    }

    #[test]
    fn scale_examples() {
        let mut cfg = KernelConfig { gamma: 7.0, beta: 0.3, ..Default::default() };
        assert_eq!(scale_scores(&[0.0], &cfg).unwrap(), vec![1.0]);
        cfg.gamma = 1.0;
        cfg.beta = 2.0;
        let s = scale_scores(&[1.0], &cfg).unwrap();
        assert!(close(s[0], (-1.0f64).exp(), 1e-15));
        assert!(close(s[0], 0.367879, 1e-6));

        let comp = KernelConfig { scaling: Scaling::Complement, ..Default::default() };
        assert_eq!(scale_scores(&[0.25], &comp).unwrap(), vec![0.75]);
        assert!(matches!(scale_scores(&[1.5], &comp), Err(TsnnError::OutOfDomain { .. })));
        assert!(matches!(scale_scores(&[-0.1], &KernelConfig::default()), Err(TsnnError::OutOfDomain { .. })));

        let inv = KernelConfig { scaling: Scaling::InverseSquare, ..Default::default() };
        assert!(close(scale_scores(&[2.0], &inv).unwrap()[0], 1.0 / (4.0 + 1e-5), 1e-15));
        let sig = KernelConfig { scaling: Scaling::Sigmoid, ..Default::default() };
        assert!(close(scale_scores(&[0.5], &sig).unwrap()[0], 0.5, 1e-15));
    }

    #[test]
    fn large_gamma_does_not_overflow() {
        let cfg = KernelConfig { gamma: 1e200, beta: 3.0, ..Default::default() };
        let s = scale_scores(&[0.0, 1e-300, 1.0], &cfg).unwrap();
        assert_eq!(s[0], 1.0);
        assert!(s.iter().all(|v| v.is_finite() && *v >= 0.0));
        assert_eq!(s[2], 0.0);
    }

    #[test]
    fn normalize_score_examples() {
        assert_eq!(normalize_scores(&[1.0, 1.0, 2.0]).unwrap(), vec![0.25, 0.25, 0.5]);
        assert_eq!(normalize_scores(&[7.0]).unwrap(), vec![1.0]);
        assert!(matches!(normalize_scores(&[0.0, 0.0]), Err(TsnnError::ZeroScoreSum)));
    }

    #[test]
    fn nw_examples() {
        let y = nadaraya_watson(&[0.0, 0.0], &[&[5.0, 5.0]], &[&[3.0, -1.0]], 0.7).unwrap();
        assert_eq!(y, vec![3.0, -1.0]);
        let y = nadaraya_watson(&[0.0], &[&[1.0], &[-1.0]], &[&[2.0, 4.0], &[4.0, 8.0]], 1.0).unwrap();
        assert!(close(y[0], 3.0, 1e-12) && close(y[1], 6.0, 1e-12));
        assert!(matches!(
            nadaraya_watson(&[0.0], &[&[1e6]], &[&[1.0]], 1e-3),
            Err(TsnnError::KernelUnderflow)
        ));
    }

    #[test]
    fn minimum_distance_gets_unit_score() {
        let x = [0.3, -1.2, 4.0];
        let c: Vec<[f64; 3]> = vec![[1.0, 1.0, 1.0], [0.2, -1.0, 4.1], [9.0, 0.0, -3.0]];
        let refs: Vec<&[f64]> = c.iter().map(|v| v.as_slice()).collect();
        let s = score(&x, &refs, vec![0, 1, 2], &KernelConfig::default()).unwrap();
        assert_eq!(s.raw[1], 1.0);
        assert!(close(s.normalized.iter().sum::<f64>(), 1.0, 1e-12));
    }

    #[test]
    fn scaling_names_round_trip() {
        for s in Scaling::ALL {
            assert_eq!(s.name().parse::<Scaling>().unwrap(), s);
            assert_eq!(Scaling::from_id(s.id()), Some(s));
        }
    }
}
