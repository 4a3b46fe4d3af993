use crate::error::{Error, Result};
use crate::model::{CalibrationParams, InitVariant};
use crate::stats::{mean, variance};

/// Measurement model: `b0 + b1 * c_ox - b2 * c_o3`.
#[inline]
pub fn apply_model(params: &CalibrationParams, c_ox: f64, c_o3: f64) -> f64 {
    params.apply(c_ox, c_o3)
}

/// Moment-matched starting point for the divergence search.
///
/// Both slopes start equal: `b1 = b2 = sqrt(var z / var(c_ox - c_o3))`. The
/// offset follows `variant`.
pub fn init_params(z: &[f64], c_ox: &[f64], c_o3: &[f64], variant: InitVariant) -> Result<CalibrationParams> {
    if c_ox.len() != c_o3.len() {
        return Err(Error::InvalidParams(format!(
            "c_ox has {} samples but c_o3 has {}",
            c_ox.len(),
            c_o3.len()
        )));
    }
    if z.len() < 2 || c_ox.len() < 2 {
        return Err(Error::EmptyWindow);
    }
    let diff: Vec<f64> = c_ox.iter().zip(c_o3).map(|(x, o)| x - o).collect();
    let var_d = variance(&diff);
    if var_d <= 0.0 {
        return Err(Error::DegenerateVariance("c_ox - c_o3"));
    }
    let var_z = variance(z);
    if var_z <= 0.0 {
        return Err(Error::DegenerateVariance("z"));
    }
    let slope = (var_z / var_d).sqrt();
    let b0 = match variant {
        InitVariant::SlopeConsistent => mean(z) - slope * mean(&diff),
        InitVariant::AsPrinted => mean(z) - mean(&diff),
    };
    CalibrationParams::new(b0, slope, slope)
}
