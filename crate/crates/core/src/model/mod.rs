//! Shared domain types: hourly series, network configuration and model parameters.

mod config;
mod params;
mod series;

pub use config::{
    CalibrationConfig, DriftConfig, HistogramConfig, InitVariant, NetworkConfig, RangePolicy, SiteRole, SiteSpec,
    SmoothingAlignment, SpatialCorrectionConfig,
};
pub use params::CalibrationParams;
pub use series::{
    align, hour_index, hour_time, hourly_average, is_hour_aligned, Channel, HourlySeries, Paired, Window,
    CONCENTRATION_FLOOR_PPB,
};
