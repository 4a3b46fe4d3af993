use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::series::Window;
use crate::error::{Error, Result};

/// Measurement-model parameters `(b0, b1, b2)` with fit metadata.
///
/// The model maps the oxidising-gas signal and ozone to NO2:
/// `no2 = b0 + b1 * c_ox - b2 * c_o3`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationParams {
    /// Offset, ppb.
    pub b0: f64,
    /// Slope on `c_ox`.
    pub b1: f64,
    /// Slope on `c_o3`.
    pub b2: f64,
    pub fitted_at: Option<DateTime<Utc>>,
    pub window: Option<Window>,
    pub achieved_dkl: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl CalibrationParams {
    /// Bare parameters with no fit history. Slopes must be strictly positive.
    pub fn new(b0: f64, b1: f64, b2: f64) -> Result<Self> {
        if !(b0.is_finite() && b1.is_finite() && b2.is_finite()) {
            return Err(Error::InvalidParams(format!("non-finite ({b0}, {b1}, {b2})")));
        }
        if !(b1 > 0.0 && b2 > 0.0) {
            return Err(Error::InvalidParams(format!(
                "slopes must be positive, got b1={b1}, b2={b2}"
            )));
        }
        Ok(Self {
            b0,
            b1,
            b2,
            fitted_at: None,
            window: None,
            achieved_dkl: 0.0,
            iterations: 0,
            converged: true,
        })
    }

    pub fn triple(&self) -> [f64; 3] {
        [self.b0, self.b1, self.b2]
    }

    /// `b0 + b1 * c_ox - b2 * c_o3`; may be negative.
    #[inline]
    pub fn apply(&self, c_ox: f64, c_o3: f64) -> f64 {
        self.b0 + self.b1 * c_ox - self.b2 * c_o3
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_positive_slopes() {
        assert!(CalibrationParams::new(0.0, 0.0, 1.0).is_err());
        assert!(CalibrationParams::new(0.0, 1.0, -0.1).is_err());
        assert!(CalibrationParams::new(f64::NAN, 1.0, 1.0).is_err());
        assert!(CalibrationParams::new(-3.0, 1.0, 1.0).is_ok());
    }
}
