//! Non-parametric, interpretable time-series forecasting.
//!
//! Forecasts are produced by similarity-weighted aggregation over a layered
//! memory bank of training residuals. The first layer matches only entries
//! that share (within a tolerance) the query's position in the period; later
//! layers match mean-centred residuals over the whole bank. The final
//! forecast is the sum of the layer predictions, and every prediction can be
//! attributed back to individual bank entries.
//!
//! Module map:
//!
//! * [`dataset`]: CSV ingestion, sliding windows, chronological splits.
//! * [`kernel`]: distances, score scaling and normalisation, and a
//!   Nadaraya–Watson reference estimator.
//! * [`bank`]: leave-one-out construction of the layered memory bank and
//!   its binary file format.
//! * [`predictor`]: layered retrieval for query windows, standard and
//!   memory-efficient execution.
//! * [`interpret`]: per-entry contributions and day / weekday aggregation.
//! * [`eval`]: metrics, the historical-inertia baseline, evaluation and
//!   hyperparameter sweeps.
//! * [`synthetic`]: seeded generator of periodic-pattern-plus-noise series.

pub mod bank;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod interpret;
pub mod kernel;
pub mod predictor;
pub mod synthetic;

pub use bank::{build_bank, candidate_set, load_bank, mean_of, save_bank, BankEntry, CandidateSet, MemoryBank};
pub use config::ModelConfig;
pub use dataset::{ingest, make_windows, near_zero_ratio, Manifest, RawSeries, SeriesWindow, SplitSpec};
pub use error::{ErrorKind, Result, TsnnError};
pub use kernel::{KernelConfig, Scaling, ScoreSet};
pub use predictor::{predict, predict_batch, truncate_layers, BatchOutput, Forecast, PredictionTrace, Query, Strategy};
