//! Rolling distribution comparison against a proxy and the alarm persistence
//! state machine that gates re-calibration.
//!
//! Every evaluation compares the trailing `t_d` window of the site series `Y`
//! with the proxy series `Z` using three tests: two-sample KS (`p >= alpha`),
//! moment-matched apparent slope inside `slope_bounds`, and apparent offset
//! inside `offset_bounds`. A site alarms once the tests have failed for `t_f`
//! consecutive evaluation hours.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{align, DriftConfig, HourlySeries, Window};
use crate::stats::{ks_two_sample, moment_match};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftTestResult {
    pub evaluated_at: DateTime<Utc>,
    pub ks_statistic: f64,
    pub p_ks: f64,
    pub a1_hat: f64,
    /// ppb
    pub a0_hat: f64,
    pub ks_pass: bool,
    pub slope_pass: bool,
    pub offset_pass: bool,
}

impl DriftTestResult {
    /// Derive the pass flags from the numeric fields.
    pub fn from_statistics(
        evaluated_at: DateTime<Utc>,
        ks_statistic: f64,
        p_ks: f64,
        a1_hat: f64,
        a0_hat: f64,
        cfg: &DriftConfig,
    ) -> Self {
        let (slo, shi) = cfg.slope_bounds;
        let (olo, ohi) = cfg.offset_bounds;
        Self {
            evaluated_at,
            ks_statistic,
            p_ks,
            a1_hat,
            a0_hat,
            ks_pass: p_ks >= cfg.ks_alpha,
            slope_pass: a1_hat > slo && a1_hat < shi,
            offset_pass: a0_hat > olo && a0_hat < ohi,
        }
    }

    pub fn all_pass(&self) -> bool {
        self.ks_pass && self.slope_pass && self.offset_pass
    }
}

/// Outcome of one evaluation hour.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DriftCheck {
    Evaluated(DriftTestResult),
    /// Too little data in the window; the persistence counter is frozen.
    NotEvaluable {
        at: DateTime<Utc>,
        coverage: f64,
    },
}

impl DriftCheck {
    pub fn at(&self) -> DateTime<Utc> {
        match self {
            DriftCheck::Evaluated(r) => r.evaluated_at,
            DriftCheck::NotEvaluable { at, .. } => *at,
        }
    }

    pub fn result(&self) -> Option<&DriftTestResult> {
        match self {
            DriftCheck::Evaluated(r) => Some(r),
            DriftCheck::NotEvaluable { .. } => None,
        }
    }
}

impl From<DriftTestResult> for DriftCheck {
    fn from(r: DriftTestResult) -> Self {
        DriftCheck::Evaluated(r)
    }
}

/// Run the three tests on already-aligned window values.
///
/// A flat-lined site series (zero variance) fails the slope and offset tests;
/// a flat-lined proxy cannot judge anything and is reported as degenerate.
pub fn drift_check_values(y: &[f64], z: &[f64], at: DateTime<Utc>, cfg: &DriftConfig) -> Result<DriftTestResult> {
    let ks = ks_two_sample(y, z)?;
    let (a1, a0) = match moment_match(y, z) {
        Ok(v) => v,
        Err(Error::DegenerateVariance("y")) => (f64::INFINITY, f64::NAN),
        Err(e) => return Err(e),
    };
    Ok(DriftTestResult::from_statistics(
        at,
        ks.statistic,
        ks.p_value,
        a1,
        a0,
        cfg,
    ))
}

/// Compare `y` with proxy `z` over the `t_d` hours ending at `at`.
pub fn drift_check(
    y: &HourlySeries,
    z: &HourlySeries,
    at: DateTime<Utc>,
    cfg: &DriftConfig,
) -> Result<DriftTestResult> {
    let window = Window::ending_at(at, cfg.window_hours());
    let pairs = align(y, z, &window, cfg.min_coverage)?;
    let (ys, zs): (Vec<f64>, Vec<f64>) = pairs.iter().map(|p| (p.a, p.b)).unzip();
    drift_check_values(&ys, &zs, at, cfg)
}

/// Like [`drift_check`] but folds data shortfalls into [`DriftCheck::NotEvaluable`].
pub fn drift_check_or_skip(
    y: &HourlySeries,
    z: &HourlySeries,
    at: DateTime<Utc>,
    cfg: &DriftConfig,
) -> Result<DriftCheck> {
    match drift_check(y, z, at, cfg) {
        Ok(r) => Ok(DriftCheck::Evaluated(r)),
        Err(Error::InsufficientData { coverage }) => Ok(DriftCheck::NotEvaluable { at, coverage }),
        Err(Error::DegenerateVariance(_)) | Err(Error::EmptyWindow) => {
            Ok(DriftCheck::NotEvaluable { at, coverage: 0.0 })
        }
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlarmRecord {
    pub check: DriftCheck,
    pub consecutive_fail_hours: u32,
    pub alarmed: bool,
}

/// Per-site persistence counter and append-only evaluation history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlarmState {
    pub site_id: String,
    pub consecutive_fail_hours: u32,
    pub alarmed: bool,
    pub last_result: Option<DriftCheck>,
    pub history: Vec<AlarmRecord>,
}

/// Evaluation stride in hours.
const STRIDE_HOURS: u32 = 1;

impl AlarmState {
    pub fn new(site_id: impl Into<String>) -> Self {
        Self {
            site_id: site_id.into(),
            consecutive_fail_hours: 0,
            alarmed: false,
            last_result: None,
            history: Vec::new(),
        }
    }

    /// Advance the state machine in place. Returns `true` when this update
    /// raised the alarm (transition from clear to alarmed).
    pub fn record(&mut self, check: DriftCheck, cfg: &DriftConfig) -> Result<bool> {
        if let Some(last) = self.history.last() {
            if check.at() <= last.check.at() {
                return Err(Error::Ordering {
                    at: check.at().to_rfc3339(),
                    last: last.check.at().to_rfc3339(),
                });
            }
        }
        let was_alarmed = self.alarmed;
        match &check {
            DriftCheck::Evaluated(r) if r.all_pass() => self.consecutive_fail_hours = 0,
            DriftCheck::Evaluated(_) => self.consecutive_fail_hours += STRIDE_HOURS,
            DriftCheck::NotEvaluable { .. } => {}
        }
        self.alarmed = self.consecutive_fail_hours >= cfg.persistence_hours();
        self.last_result = Some(check);
        self.history.push(AlarmRecord {
            check,
            consecutive_fail_hours: self.consecutive_fail_hours,
            alarmed: self.alarmed,
        });
        Ok(self.alarmed && !was_alarmed)
    }

    pub fn alarmed_hours(&self) -> usize {
        self.history.iter().filter(|r| r.alarmed).count()
    }

    pub fn evaluated_hours(&self) -> usize {
        self.history
            .iter()
            .filter(|r| matches!(r.check, DriftCheck::Evaluated(_)))
            .count()
    }

    /// First instant at which the alarm was raised.
    pub fn first_alarm(&self) -> Option<DateTime<Utc>> {
        self.history.iter().find(|r| r.alarmed).map(|r| r.check.at())
    }
}

/// Pure form of [`AlarmState::record`].
pub fn alarm_update(state: &AlarmState, check: DriftCheck, cfg: &DriftConfig) -> Result<AlarmState> {
    let mut next = state.clone();
    next.record(check, cfg)?;
    Ok(next)
}
