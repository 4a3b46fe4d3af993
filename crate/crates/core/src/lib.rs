//! Distribution-matching calibration for low-cost NO2 sensor networks.
//!
//! Sensors report an oxidising-gas signal `C_ox` that responds to both NO2 and
//! O3. Each sensor is mapped to NO2 through `b0 + b1 C_ox - b2 C_O3` and kept
//! honest by comparing its output distribution against a nearby regulatory
//! proxy. Drift alarms trigger a re-fit that minimises the KL divergence
//! between the two distributions, and a spatially correlated offset measured
//! at co-located sites is subtracted downstream.

pub mod calibrator;
pub mod drift;
pub mod error;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod report;
pub mod simulator;
pub mod spatial;
pub mod stats;

pub use calibrator::{
    apply_model, classify_diagnostics, fit_params, init_params, kl_objective, Classification, FitDiagnostics,
};
pub use drift::{alarm_update, drift_check, drift_check_or_skip, AlarmState, DriftCheck, DriftTestResult};
pub use error::{Error, Result};
pub use model::*;
pub use pipeline::{run_pipeline, run_pipeline_on, Mode, PipelineInput, PipelineOutput, RunOptions, SiteRun};
pub use report::{
    exceedance_counts, idw_grid, rolling_mab, spearman, summary_stats, summary_values, EvaluationReport, GridSpec,
    Raster, ReportRow, Stage, SummaryStats,
};
pub use spatial::{apply_es, compute_raw_error, damp_and_smooth, ErrorSample, ErrorSeries};
pub use stats::{histogram, kl_divergence, ks_two_sample, moment_match, EmpiricalDistribution};
