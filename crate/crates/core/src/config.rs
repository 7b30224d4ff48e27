use serde::{Deserialize, Serialize};

use crate::error::{Result, TsnnError};
use crate::kernel::KernelConfig;

/// Everything needed to build a bank and predict with it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kernel: KernelConfig,
    /// Number of layers L.
    pub layers: usize,
    /// Maximum circular distance between periodic steps for layer-1 matches.
    pub tolerance: usize,
    /// Steps in one period (t), e.g. 288 for five-minute daily data.
    pub steps_per_period: usize,
    /// History length T.
    pub history_len: usize,
    /// Horizon length T'.
    pub horizon_len: usize,
    /// Restrict layer 1 to entries at a matching periodic step.
    pub time_wise_decoupling: bool,
    /// Centre residuals on their historical mean at layers >= 2.
    pub mean_decoupling: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kernel: KernelConfig::default(),
            layers: 10,
            tolerance: 3,
            steps_per_period: 288,
            history_len: 12,
            horizon_len: 12,
            time_wise_decoupling: true,
            mean_decoupling: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        if self.layers == 0 {
            return Err(TsnnError::Config("layers must be at least 1".into()));
        }
        if self.steps_per_period < 2 {
            return Err(TsnnError::Config(format!(
                "steps_per_period must be at least 2, got {}",
                self.steps_per_period
            )));
        }
        if self.history_len == 0 || self.horizon_len == 0 {
            return Err(TsnnError::Config("history and horizon lengths must be positive".into()));
        }
        Ok(())
    }

    /// Circular distance between two periodic steps.
    pub fn periodic_distance(&self, a: usize, b: usize) -> usize {
        let t = self.steps_per_period;
        let diff = a.abs_diff(b) % t;
        diff.min(t - diff)
    }
}
