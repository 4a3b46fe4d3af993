use serde::{Deserialize, Serialize};

use crate::model::CalibrationParams;

/// Number of most recent fits inspected.
pub const DIAGNOSTIC_FITS: usize = 4;
/// Minimum fractional decline of both slopes for a sensor-failure signature.
pub const SLOPE_DECLINE: f64 = 0.30;
/// Minimum fractional rise of the achieved divergence over its trailing median.
pub const DKL_RISE: f64 = 0.50;
/// Slope band outside which both slopes count as anomalous.
pub const SLOPE_BAND: (f64, f64) = (0.7, 1.3);
/// Offset magnitude (ppb) regarded as "close to zero".
pub const OFFSET_STABLE_PPB: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Ok,
    SensorFailureSuspected,
    ProxyFailureSuspected,
}

impl Classification {
    pub fn as_str(self) -> &'static str {
        match self {
            Classification::Ok => "ok",
            Classification::SensorFailureSuspected => "sensor_failure_suspected",
            Classification::ProxyFailureSuspected => "proxy_failure_suspected",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub parameter: String,
    pub statistic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub classification: Classification,
    pub evidence: Vec<Evidence>,
    pub dkl_trend: Vec<f64>,
}

fn evidence(parameter: &str, statistic: f64) -> Evidence {
    Evidence {
        parameter: parameter.to_string(),
        statistic,
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn non_increasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] <= w[0])
}

/// Classify the recent parameter trajectory.
///
/// * Sensor failure: over the last four fits both slopes fall monotonically by
///   at least 30% in total while the offset magnitude grows.
/// * Proxy failure: in the latest fit both slopes sit outside `[0.7, 1.3]` on
///   the same side, the offset stays within ±5 ppb, and the achieved
///   divergence is at least 50% above the median of the preceding fits.
pub fn classify_diagnostics(history: &[CalibrationParams]) -> FitDiagnostics {
    let dkl_trend: Vec<f64> = history
        .iter()
        .rev()
        .take(DIAGNOSTIC_FITS)
        .rev()
        .map(|p| p.achieved_dkl)
        .collect();
    if history.len() < DIAGNOSTIC_FITS {
        return FitDiagnostics {
            classification: Classification::Ok,
            evidence: vec![evidence("insufficient history", history.len() as f64)],
            dkl_trend,
        };
    }
    let recent = &history[history.len() - DIAGNOSTIC_FITS..];
    let b1: Vec<f64> = recent.iter().map(|p| p.b1).collect();
    let b2: Vec<f64> = recent.iter().map(|p| p.b2).collect();
    let first = &recent[0];
    let last = &recent[DIAGNOSTIC_FITS - 1];
    let decline1 = (first.b1 - last.b1) / first.b1;
    let decline2 = (first.b2 - last.b2) / first.b2;
    let offset_growth = last.b0.abs() - first.b0.abs();

    let mut ev = vec![
        evidence("b1_relative_change", -decline1),
        evidence("b2_relative_change", -decline2),
        evidence("abs_b0_change", offset_growth),
    ];

    if non_increasing(&b1)
        && non_increasing(&b2)
        && decline1 >= SLOPE_DECLINE
        && decline2 >= SLOPE_DECLINE
        && offset_growth > 0.0
    {
        return FitDiagnostics {
            classification: Classification::SensorFailureSuspected,
            evidence: ev,
            dkl_trend,
        };
    }

    let (lo, hi) = SLOPE_BAND;
    let slopes_high = last.b1 > hi && last.b2 > hi;
    let slopes_low = last.b1 < lo && last.b2 < lo;
    let preceding: Vec<f64> = recent[..DIAGNOSTIC_FITS - 1].iter().map(|p| p.achieved_dkl).collect();
    let trailing = median(&preceding);
    let dkl_ratio = if trailing > 0.0 {
        last.achieved_dkl / trailing
    } else if last.achieved_dkl > 0.0 {
        f64::INFINITY
    } else {
        1.0
    };
    ev.push(evidence("dkl_over_trailing_median", dkl_ratio));

    let classification =
        if (slopes_high || slopes_low) && last.b0.abs() <= OFFSET_STABLE_PPB && dkl_ratio >= 1.0 + DKL_RISE {
            Classification::ProxyFailureSuspected
        } else {
            Classification::Ok
        };
    FitDiagnostics {
        classification,
        evidence: ev,
        dkl_trend,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fit(b0: f64, b1: f64, b2: f64, dkl: f64) -> CalibrationParams {
        let mut p = CalibrationParams::new(b0, b1, b2).unwrap();
        p.achieved_dkl = dkl;
        p
    }

    #[test]
    fn declining_slopes_with_growing_offset() {
        let h: Vec<_> = [(5.0, 1.0), (10.0, 0.8), (15.0, 0.6), (20.0, 0.4)]
            .iter()
            .map(|&(b0, s)| fit(b0, s, s, 0.2))
            .collect();
        let d = classify_diagnostics(&h);
        assert_eq!(d.classification, Classification::SensorFailureSuspected);
    }

    #[test]
    fn rising_slopes_with_stable_offset_and_dkl() {
        let h = vec![
            fit(0.5, 1.0, 1.0, 0.10),
            fit(-0.3, 1.0, 1.0, 0.10),
            fit(0.2, 1.4, 1.4, 0.12),
            fit(0.1, 1.5, 1.5, 0.20),
        ];
        let d = classify_diagnostics(&h);
        assert_eq!(d.classification, Classification::ProxyFailureSuspected);
        assert_eq!(d.dkl_trend, vec![0.10, 0.10, 0.12, 0.20]);
    }

    #[test]
    fn stationary_is_ok() {
        let h: Vec<_> = (0..8)
            .map(|i| {
                let w = (i as f64 * 1.3).sin();
                fit(1.0 + w, 1.0 + 0.05 * w, 0.98 - 0.04 * w, 0.2 + 0.02 * w)
            })
            .collect();
        assert_eq!(classify_diagnostics(&h).classification, Classification::Ok);
    }

    #[test]
    fn short_history_is_ok_with_note() {
        let d = classify_diagnostics(&[fit(0.0, 1.0, 1.0, 0.1)]);
        assert_eq!(d.classification, Classification::Ok);
        assert_eq!(d.evidence[0].parameter, "insufficient history");
    }

    #[test]
    fn high_slopes_without_dkl_rise_is_ok() {
        let h = vec![
            fit(0.0, 1.5, 1.5, 0.2),
            fit(0.0, 1.5, 1.5, 0.2),
            fit(0.0, 1.5, 1.5, 0.2),
            fit(0.0, 1.5, 1.5, 0.2),
        ];
        assert_eq!(classify_diagnostics(&h).classification, Classification::Ok);
    }
}
