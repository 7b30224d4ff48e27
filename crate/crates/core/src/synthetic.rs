//! Seeded periodic-pattern-plus-perturbation series.
//!
//! Every sensor follows a fixed pattern indexed by periodic step, plus a
//! Gaussian perturbation whose standard deviation is a fraction of the
//! amplitude. The perturbation is white by default or AR(1) when
//! `noise_correlation` is set.

use std::f64::consts::TAU;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::RawSeries;
use crate::error::{Result, TsnnError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_steps: usize,
    pub n_sensors: usize,
    pub steps_per_period: usize,
    pub amplitude: f64,
    /// Noise standard deviation as a fraction of `amplitude`.
    pub noise_fraction: f64,
    /// Lag-one autocorrelation of the perturbation, in `[0, 1)`.
    #[serde(default)]
    pub noise_correlation: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_steps: 288 * 14,
            n_sensors: 1,
            steps_per_period: 288,
            amplitude: 100.0,
            noise_fraction: 0.0,
            noise_correlation: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    /// Noise-free value of `sensor` at periodic step `p`.
    pub fn pattern(&self, sensor: usize, p: usize) -> f64 {
        let phase = TAU * p as f64 / self.steps_per_period as f64;
        let shift = 0.7 * sensor as f64;
        self.amplitude * (1.0 + 0.5 * (phase + shift).sin() + 0.25 * (2.0 * phase + 2.0 * shift).cos())
    }
}

/// Generate a series from `spec`. The same spec always yields the same series.
pub fn periodic_series(spec: &SyntheticSpec) -> Result<RawSeries> {
    if !(spec.noise_fraction >= 0.0) || !(spec.amplitude > 0.0) {
        return Err(TsnnError::Config("amplitude must be positive and noise non-negative".into()));
    }
    let phi = spec.noise_correlation;
    if !(0.0..1.0).contains(&phi) {
        return Err(TsnnError::Config(format!("noise correlation {phi} outside [0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let sigma = spec.noise_fraction * spec.amplitude;
    let unit = Normal::new(0.0, 1.0).map_err(|e| TsnnError::Config(e.to_string()))?;
    let innovation = (1.0 - phi * phi).sqrt();
    let t = spec.steps_per_period;
    let mut state: Vec<f64> = (0..spec.n_sensors).map(|_| 0.0).collect();
    let mut values = Vec::with_capacity(spec.n_steps * spec.n_sensors);
    for i in 0..spec.n_steps {
        for (s, e) in state.iter_mut().enumerate() {
            let base = spec.pattern(s, i % t);
            if sigma == 0.0 {
                values.push(base);
                continue;
            }
            let z = unit.sample(&mut rng);
            // The first draw comes from the stationary distribution.
            *e = if i == 0 { sigma * z } else { phi * *e + innovation * sigma * z };
            values.push(base + *e);
        }
    }
    RawSeries::new(values, spec.n_steps, spec.n_sensors, t)
}
