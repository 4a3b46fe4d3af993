//! Spatially-correlated offset error: estimated at the nearest co-located
//! site, damped by a sigmoid of its departure from the running mean, smoothed
//! with a short rolling mean and subtracted from the calibrated series.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::model::{hour_time, HourlySeries, SmoothingAlignment, SpatialCorrectionConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSample {
    pub at: DateTime<Utc>,
    /// Corrected sensor minus reference at the proxy site, ppb.
    pub raw_error: Option<f64>,
    /// `S(raw) * raw`, before smoothing.
    pub damped_error: Option<f64>,
    /// Rolling mean of the damped error; the value subtracted downstream.
    pub smoothed_error: Option<f64>,
    pub applied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSeries {
    /// Site the correction is destined for.
    pub site_id: String,
    /// Co-located site the error was measured at.
    pub proxy_id: String,
    start_hour: i64,
    samples: Vec<ErrorSample>,
}

impl ErrorSeries {
    pub fn samples(&self) -> &[ErrorSample] {
        &self.samples
    }

    pub fn start_hour(&self) -> i64 {
        self.start_hour
    }

    fn sample_at_hour(&self, h: i64) -> Option<&ErrorSample> {
        let offset = h - self.start_hour;
        if offset < 0 {
            return None;
        }
        self.samples.get(offset as usize)
    }

    /// Relabel for the consuming site.
    pub fn for_site(mut self, site_id: impl Into<String>) -> Self {
        self.site_id = site_id.into();
        self
    }

    pub fn raw_values(&self) -> Vec<Option<f64>> {
        self.samples.iter().map(|s| s.raw_error).collect()
    }
}

/// Hourly difference between the framework-corrected sensor and the reference
/// at the proxy site. Hours missing either input carry no raw error.
pub fn compute_raw_error(sensor_corrected: &HourlySeries, reference_at_proxy: &HourlySeries) -> ErrorSeries {
    let start_hour = sensor_corrected.start_hour();
    let samples = (0..sensor_corrected.len() as i64)
        .map(|i| {
            let h = start_hour + i;
            let raw = match (sensor_corrected.at_hour(h), reference_at_proxy.at_hour(h)) {
                (Some(s), Some(r)) => Some(s - r),
                _ => None,
            };
            ErrorSample {
                at: hour_time(h),
                raw_error: raw,
                damped_error: None,
                smoothed_error: None,
                applied: false,
            }
        })
        .collect();
    ErrorSeries {
        site_id: sensor_corrected.site_id().to_string(),
        proxy_id: sensor_corrected.site_id().to_string(),
        start_hour,
        samples,
    }
}

/// `S(x) = 1 / (1 + exp(-k |x - u|))`.
#[inline]
pub fn sigmoid_weight(x: f64, u: f64, k: f64) -> f64 {
    1.0 / (1.0 + (-k * (x - u).abs()).exp())
}

/// Mean of the present values in `values[lo..=hi]` (indices clamped).
fn window_mean(prefix_sum: &[f64], prefix_count: &[usize], lo: isize, hi: isize) -> Option<f64> {
    let n = prefix_count.len() as isize - 1;
    let lo = lo.clamp(0, n) as usize;
    let hi = (hi + 1).clamp(0, n) as usize;
    if hi <= lo {
        return None;
    }
    let c = prefix_count[hi] - prefix_count[lo];
    (c > 0).then(|| (prefix_sum[hi] - prefix_sum[lo]) / c as f64)
}

fn prefix(values: &[Option<f64>]) -> (Vec<f64>, Vec<usize>) {
    let mut s = Vec::with_capacity(values.len() + 1);
    let mut c = Vec::with_capacity(values.len() + 1);
    s.push(0.0);
    c.push(0);
    for v in values {
        s.push(s.last().unwrap() + v.unwrap_or(0.0));
        c.push(c.last().unwrap() + usize::from(v.is_some()));
    }
    (s, c)
}

/// Damp each raw error by the sigmoid weight and smooth with a rolling mean.
///
/// `u` is the mean raw error over the trailing `mean_window_hours` (including
/// the current hour). Hours without a raw error are never applied.
pub fn damp_and_smooth(raw: &ErrorSeries, cfg: &SpatialCorrectionConfig, mean_window_hours: usize) -> ErrorSeries {
    let raw_values = raw.raw_values();
    let (rs, rc) = prefix(&raw_values);
    let damped: Vec<Option<f64>> = raw_values
        .iter()
        .enumerate()
        .map(|(i, x)| {
            x.map(|x| {
                let i = i as isize;
                let u = window_mean(&rs, &rc, i - mean_window_hours as isize + 1, i).unwrap_or(x);
                sigmoid_weight(x, u, cfg.sigmoid_k) * x
            })
        })
        .collect();
    let (ds, dc) = prefix(&damped);
    let width = cfg.rolling_hours.max(1) as isize;
    let (before, after) = match cfg.alignment {
        SmoothingAlignment::Centered => ((width - 1) / 2, width / 2),
        SmoothingAlignment::Trailing => (width - 1, 0),
    };
    let samples = raw
        .samples
        .iter()
        .zip(&damped)
        .enumerate()
        .map(|(i, (s, d))| {
            let i = i as isize;
            let smoothed = d.and_then(|_| window_mean(&ds, &dc, i - before, i + after));
            ErrorSample {
                at: s.at,
                raw_error: s.raw_error,
                damped_error: *d,
                smoothed_error: smoothed,
                applied: cfg.enabled && smoothed.is_some(),
            }
        })
        .collect();
    ErrorSeries {
        site_id: raw.site_id.clone(),
        proxy_id: raw.proxy_id.clone(),
        start_hour: raw.start_hour,
        samples,
    }
}

/// Subtract the smoothed error estimate wherever it is applied; all other
/// hours pass through unchanged.
pub fn apply_es(calibrated: &HourlySeries, errors: &ErrorSeries) -> HourlySeries {
    let start = calibrated.start_hour();
    HourlySeries::from_fn(
        calibrated.site_id(),
        calibrated.channel(),
        start,
        calibrated.len(),
        |h| {
            let v = calibrated.at_hour(h)?;
            match errors.sample_at_hour(h) {
                Some(ErrorSample {
                    applied: true,
                    smoothed_error: Some(e),
                    ..
                }) => Some(v - e),
                _ => Some(v),
            }
        },
    )
}

/// One co-located site used to tune the sigmoid rate.
pub struct TuneCase<'a> {
    pub calibrated: &'a HourlySeries,
    pub reference: &'a HourlySeries,
    pub raw_error: &'a ErrorSeries,
}

/// Pooled RMSE against the reference for each candidate `k`, in grid order.
pub fn tune_k(
    cases: &[TuneCase<'_>],
    grid: &[f64],
    cfg: &SpatialCorrectionConfig,
    mean_window_hours: usize,
) -> Vec<(f64, f64)> {
    grid.iter()
        .map(|&k| {
            let cfg = SpatialCorrectionConfig {
                sigmoid_k: k,
                enabled: true,
                ..*cfg
            };
            let (mut sse, mut n) = (0.0, 0usize);
            for case in cases {
                let damped = damp_and_smooth(case.raw_error, &cfg, mean_window_hours);
                let corrected = apply_es(case.calibrated, &damped);
                for (h, v) in corrected.present() {
                    if let Some(r) = case.reference.at_hour(h) {
                        sse += (v - r) * (v - r);
                        n += 1;
                    }
                }
            }
            (k, if n > 0 { (sse / n as f64).sqrt() } else { f64::NAN })
        })
        .collect()
}
