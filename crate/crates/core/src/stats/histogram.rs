use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{HistogramConfig, RangePolicy};

/// Fixed-width histogram normalised to a probability mass function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalDistribution {
    edges: Vec<f64>,
    mass: Vec<f64>,
    sample_count: usize,
}

impl EmpiricalDistribution {
    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    pub fn bins(&self) -> usize {
        self.mass.len()
    }

    pub fn same_edges(&self, other: &Self) -> bool {
        self.edges == other.edges
    }

    /// Build directly from a mass vector on given edges (used by tests and tools).
    pub fn from_mass(edges: Vec<f64>, mass: Vec<f64>, sample_count: usize) -> Result<Self> {
        if edges.len() != mass.len() + 1 || mass.is_empty() {
            return Err(Error::BinMismatch);
        }
        Ok(Self {
            edges,
            mass,
            sample_count,
        })
    }
}

/// Uniform binning of `[min, max]` with width `width`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinLayout {
    pub min: f64,
    pub width: f64,
    pub bins: usize,
}

impl BinLayout {
    pub fn new(min: f64, max: f64, width: f64) -> Self {
        let bins = (((max - min) / width) - 1e-9).ceil().max(1.0) as usize;
        Self { min, width, bins }
    }

    /// Bin index for `v`; out-of-range values clamp to the nearest edge bin.
    #[inline]
    pub fn index(&self, v: f64) -> usize {
        let pos = ((v - self.min) / self.width).floor();
        if pos <= 0.0 {
            0
        } else {
            (pos as usize).min(self.bins - 1)
        }
    }

    pub fn edges(&self) -> Vec<f64> {
        (0..=self.bins).map(|i| self.min + i as f64 * self.width).collect()
    }

    pub fn count_into(&self, values: impl IntoIterator<Item = f64>, counts: &mut [u32]) -> usize {
        counts.iter_mut().for_each(|c| *c = 0);
        let mut n = 0;
        for v in values {
            counts[self.index(v)] += 1;
            n += 1;
        }
        n
    }
}

/// Counts to smoothed mass: add `epsilon` to every bin's frequency, then renormalise.
pub fn smoothed_mass_into(counts: &[u32], n: usize, epsilon: f64, mass: &mut [f64]) {
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0;
    for (m, &c) in mass.iter_mut().zip(counts) {
        *m = c as f64 * inv_n + epsilon;
        total += *m;
    }
    mass.iter_mut().for_each(|m| *m /= total);
}

/// Range covering both samples, widened by half a bin when degenerate.
pub fn joint_range(a: &[f64], b: &[f64], bin_width: f64) -> Result<(f64, f64)> {
    let (lo, hi) = a
        .iter()
        .chain(b)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::EmptyWindow);
    }
    if hi - lo < f64::EPSILON * lo.abs().max(1.0) {
        Ok((lo - bin_width / 2.0, hi + bin_width / 2.0))
    } else {
        Ok((lo, hi))
    }
}

/// Resolve the histogram range for comparing `a` against `b` under `config`.
pub fn comparison_range(a: &[f64], b: &[f64], config: &HistogramConfig) -> Result<(f64, f64)> {
    match config.range_policy {
        RangePolicy::JointMinMax => joint_range(a, b, config.bin_width),
        RangePolicy::Fixed { min, max } => Ok((min, max)),
    }
}

/// Histogram `values` on `range` with the configured bin width and smoothing.
///
/// Bins tile `[range.0, range.0 + bins * width]`; values outside the range are
/// clamped into the first or last bin.
pub fn histogram(values: &[f64], config: &HistogramConfig, range: (f64, f64)) -> Result<EmpiricalDistribution> {
    if values.is_empty() {
        return Err(Error::EmptyWindow);
    }
    if !(range.0 < range.1) || !config.bin_width.is_finite() || config.bin_width <= 0.0 {
        return Err(Error::Config(format!(
            "invalid histogram range ({}, {}) or bin width {}",
            range.0, range.1, config.bin_width
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Ingest {
            index: values.iter().position(|v| !v.is_finite()).unwrap_or(0),
            reason: "non-finite value in histogram input".into(),
        });
    }
    let layout = BinLayout::new(range.0, range.1, config.bin_width);
    let mut counts = vec![0u32; layout.bins];
    let n = layout.count_into(values.iter().copied(), &mut counts);
    let mut mass = vec![0.0; layout.bins];
    smoothed_mass_into(&counts, n, config.smoothing_epsilon, &mut mass);
    Ok(EmpiricalDistribution {
        edges: layout.edges(),
        mass,
        sample_count: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(eps: f64) -> HistogramConfig {
        HistogramConfig {
            bin_width: 2.0,
            range_policy: RangePolicy::JointMinMax,
            smoothing_epsilon: eps,
        }
    }

    #[test]
    fn values_at_a_bin_center_fill_one_bin() {
        let values = vec![5.0; 40];
        let h = histogram(&values, &cfg(1e-12), (0.0, 20.0)).unwrap();
        assert_eq!(h.bins(), 10);
        assert!((h.mass()[2] - 1.0).abs() < 1e-9);
        assert!((h.mass().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_values_spread_evenly() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let values: Vec<f64> = (0..10_000).map(|_| rng.random_range(0.0..20.0)).collect();
        // direct counting oracle
        let mut oracle = [0usize; 10];
        for v in &values {
            oracle[(*v / 2.0) as usize] += 1;
        }
        let h = histogram(&values, &cfg(1e-6), (0.0, 20.0)).unwrap();
        for (m, c) in h.mass().iter().zip(oracle) {
            let freq = c as f64 / values.len() as f64;
            assert!((m - (freq + 1e-6) / (1.0 + 10.0 * 1e-6)).abs() < 1e-12);
            assert!((m - 0.1).abs() < 0.015);
        }
    }

    #[test]
    fn out_of_range_value_clamps_to_last_bin() {
        let h = histogram(&[25.0], &cfg(1e-9), (0.0, 20.0)).unwrap();
        assert!(h.mass()[9] > 0.99);
        let h = histogram(&[-3.0], &cfg(1e-9), (0.0, 20.0)).unwrap();
        assert!(h.mass()[0] > 0.99);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(
            histogram(&[], &cfg(1e-6), (0.0, 1.0)),
            Err(Error::EmptyWindow)
        ));
    }

    #[test]
    fn smoothing_floors_every_bin() {
        let h = histogram(&[1.0, 1.5], &cfg(1e-6), (0.0, 20.0)).unwrap();
        let floor = 1e-6 / (1.0 + 10.0 * 1e-6);
        assert!(h.mass().iter().all(|&m| m >= floor * (1.0 - 1e-12)));
    }

    #[test]
    fn edges_have_uniform_width() {
        let h = histogram(&[0.3, 7.9], &cfg(1e-6), (0.3, 7.9)).unwrap();
        let e = h.edges();
        assert_eq!(e.len(), h.bins() + 1);
        for w in e.windows(2) {
            assert!((w[1] - w[0] - 2.0).abs() < 1e-12);
        }
        assert!(*e.last().unwrap() >= 7.9);
    }

    #[test]
    fn degenerate_joint_range_is_widened() {
        let (lo, hi) = joint_range(&[4.0, 4.0], &[4.0], 2.0).unwrap();
        assert_eq!((lo, hi), (3.0, 5.0));
    }

    proptest! {
        #[test]
        fn mass_sums_to_one(
            values in proptest::collection::vec(-20.0f64..200.0, 1..200),
            width in 0.5f64..10.0,
            eps in prop_oneof![Just(0.0), 1e-9f64..1e-3],
        ) {
            let cfg = HistogramConfig { bin_width: width, ..cfg(eps) };
            let range = joint_range(&values, &values, width).unwrap();
            let h = histogram(&values, &cfg, range).unwrap();
            prop_assert!((h.mass().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert_eq!(h.sample_count(), values.len());
        }
    }
}
