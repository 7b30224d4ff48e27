use std::path::PathBuf;

use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::{Args, Parser, Subcommand};
use tsnn::eval::{Averaging, SweepAxis};
use tsnn::{KernelConfig, ModelConfig, Scaling, SplitSpec, Strategy};

#[derive(Debug, Parser)]
#[command(name = "tsnn", version, about = "Non-parametric periodic time-series forecasting")]
pub struct Cli {
    /// Emit machine-readable JSON on stdout and structured errors on stderr.
    #[arg(long, global = true)]
    pub json: bool,
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    pub threads: Option<u64>,
    /// Seed recorded in the run manifest and used by `synth`.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load a dataset, check it and report its shape and near-zero ratio.
    #[command(alias = "ingest")]
    Validate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Build one memory bank file per sensor from the training split.
    Build {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        sensors: SensorArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Forecast the test-split windows of each sensor.
    Predict {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        sensors: SensorArgs,
        /// Directory of prebuilt `sensor_<id>.bank` files.
        #[arg(long)]
        banks: Option<PathBuf>,
        #[arg(long, default_value = "standard", value_parser = strategy_parser())]
        strategy: Strategy,
        /// Test-window positions, e.g. `5`, `10-20` or `1,4,9-12` (default: all).
        #[arg(long)]
        query: Option<String>,
        /// Also write per-layer candidate ids and scores.
        #[arg(long)]
        trace: bool,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Score the test split and write metric tables.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        sensors: SensorArgs,
        #[command(flatten)]
        metrics: MetricArgs,
        #[arg(long, default_value = "standard", value_parser = strategy_parser())]
        strategy: Strategy,
        /// Also score the historical-inertia baseline.
        #[arg(long)]
        baseline: bool,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Evaluate over a grid of one hyperparameter.
    Sweep {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        sensors: SensorArgs,
        #[command(flatten)]
        metrics: MetricArgs,
        #[arg(long, default_value = "standard", value_parser = strategy_parser())]
        strategy: Strategy,
        #[arg(long, value_parser = PossibleValuesParser::new(["layers", "gamma", "beta", "tolerance", "scaling", "decoupling"])
            .map(|s| s.parse::<SweepAxis>().expect("listed")))]
        axis: SweepAxis,
        /// Comma-separated grid values (defaults exist for layers, scaling and decoupling).
        #[arg(long)]
        grid: Option<String>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Attribute forecasts of one sensor to its bank entries.
    Explain {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        sensor: usize,
        /// Test-window positions; contributions of several queries are summed.
        #[arg(long)]
        query: String,
        #[arg(long)]
        banks: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Write a seeded periodic dataset and its manifest.
    Synth {
        #[arg(long, default_value_t = 288 * 14)]
        steps: usize,
        #[arg(long, default_value_t = 1)]
        sensors: usize,
        #[arg(long, default_value_t = 288)]
        period: usize,
        #[arg(long, default_value_t = 100.0)]
        amplitude: f64,
        /// Noise standard deviation as a fraction of the amplitude.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        /// Lag-one autocorrelation of the noise, in [0, 1).
        #[arg(long, default_value_t = 0.0)]
        noise_correlation: f64,
        #[arg(long, default_value = "synthetic")]
        name: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Repeat a run from its `run_manifest.json`.
    Rerun {
        #[arg(long)]
        from: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// CSV with one row per time step and one column per sensor.
    #[arg(long)]
    pub data: PathBuf,
    /// Dataset manifest (default: the data path with a `.json` extension).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 0.6)]
    pub train: f64,
    #[arg(long, default_value_t = 0.2)]
    pub validation: f64,
    #[arg(long, default_value_t = 0.2)]
    pub test: f64,
}

impl DataArgs {
    pub fn manifest_path(&self) -> PathBuf {
        self.manifest.clone().unwrap_or_else(|| self.data.with_extension("json"))
    }

    pub fn split(&self) -> SplitSpec {
        SplitSpec { train: self.train, validation: self.validation, test: self.test }
    }
}

#[derive(Debug, Args)]
pub struct SensorArgs {
    /// Sensors to process, e.g. `all`, `100` or `0,3,5-9`.
    #[arg(long, default_value = "all")]
    pub sensors: String,
}

#[derive(Debug, Args)]
pub struct MetricArgs {
    /// Ground truth with `|y|` at or below this is left out of MAPE.
    #[arg(long, default_value_t = 0.0)]
    pub mape_threshold: f64,
    /// Pool errors over all sensors instead of averaging per-sensor metrics.
    #[arg(long)]
    pub pooled: bool,
}

impl MetricArgs {
    pub fn averaging(&self) -> Averaging {
        if self.pooled {
            Averaging::Pooled
        } else {
            Averaging::Macro
        }
    }
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    pub layers: u64,
    #[arg(long, default_value_t = 10.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 1.5)]
    pub beta: f64,
    #[arg(long, default_value_t = 3)]
    pub tolerance: usize,
    #[arg(long, default_value = "exp", value_parser = PossibleValuesParser::new(["exp", "complement", "invsq", "sigmoid"])
        .map(|s| s.parse::<Scaling>().expect("listed")))]
    pub scaling: Scaling,
    #[arg(long, default_value_t = 1e-5)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 0.5)]
    pub mu: f64,
    #[arg(long, default_value_t = 12)]
    pub history: usize,
    #[arg(long, default_value_t = 12)]
    pub horizon: usize,
    /// Let layer 1 match entries at any periodic step.
    #[arg(long)]
    pub no_time_wise: bool,
    /// Skip historical-mean centring at layers >= 2.
    #[arg(long)]
    pub no_mean: bool,
}

impl ModelArgs {
    pub fn config(&self, steps_per_period: usize) -> ModelConfig {
        ModelConfig {
            kernel: KernelConfig {
                gamma: self.gamma,
                beta: self.beta,
                scaling: self.scaling,
                epsilon: self.epsilon,
                mu: self.mu,
                normalize_distances: true,
            },
            layers: self.layers as usize,
            tolerance: self.tolerance,
            steps_per_period,
            history_len: self.history,
            horizon_len: self.horizon,
            time_wise_decoupling: !self.no_time_wise,
            mean_decoupling: !self.no_mean,
        }
    }
}

fn strategy_parser() -> impl TypedValueParser<Value = Strategy> {
    PossibleValuesParser::new(["standard", "mem-efficient"]).map(|s| s.parse::<Strategy>().expect("listed"))
}

/// Parse `all`, `7`, `3-5` or comma-separated mixtures into sorted unique ids below `limit`.
pub fn parse_selection(spec: &str, limit: usize, what: &str) -> Result<Vec<usize>, String> {
    if spec.trim() == "all" {
        return Ok((0..limit).collect());
    }
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let num = |s: &str| s.trim().parse::<usize>().map_err(|_| format!("bad {what} `{part}`"));
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b) = (num(a)?, num(b)?);
                if a > b {
                    return Err(format!("empty {what} range `{part}`"));
                }
                out.extend(a..=b);
            }
            None => out.push(num(part)?),
        }
    }
    out.sort_unstable();
    out.dedup();
    if out.is_empty() {
        return Err(format!("no {what} selected"));
    }
    if let Some(&bad) = out.iter().find(|&&v| v >= limit) {
        return Err(format!("{what} {bad} out of range (0..{limit})"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selections() {
        assert_eq!(parse_selection("all", 3, "sensor").unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_selection("4,1-2,2", 5, "sensor").unwrap(), vec![1, 2, 4]);
        assert!(parse_selection("5", 5, "sensor").is_err());
        assert!(parse_selection("3-1", 5, "sensor").is_err());
        assert!(parse_selection("x", 5, "sensor").is_err());
    }
}
