use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsOutcome {
    /// `sup_x |F_y(x) - F_z(x)|`
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-sample KS test on empirical CDFs.
///
/// Ties are handled by evaluating both right-continuous ECDFs at every pooled
/// sample point. The p-value uses the Kolmogorov limiting distribution at
/// `lambda = (sqrt(ne) + 0.12 + 0.11 / sqrt(ne)) * D` with effective size
/// `ne = n_y n_z / (n_y + n_z)`.
pub fn ks_two_sample(y: &[f64], z: &[f64]) -> Result<KsOutcome> {
    if y.is_empty() || z.is_empty() {
        return Err(Error::EmptyWindow);
    }
    let mut ys = y.to_vec();
    let mut zs = z.to_vec();
    ys.sort_by(f64::total_cmp);
    zs.sort_by(f64::total_cmp);
    let statistic = statistic_sorted(&ys, &zs);
    let n1 = ys.len() as f64;
    let n2 = zs.len() as f64;
    let ne = n1 * n2 / (n1 + n2);
    let sqrt_ne = ne.sqrt();
    let lambda = (sqrt_ne + 0.12 + 0.11 / sqrt_ne) * statistic;
    Ok(KsOutcome {
        statistic,
        p_value: kolmogorov_survival(lambda),
    })
}

fn statistic_sorted(ys: &[f64], zs: &[f64]) -> f64 {
    let (n, m) = (ys.len(), zs.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let x = ys[i].min(zs[j]);
        while i < n && ys[i] <= x {
            i += 1;
        }
        while j < m && zs[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    d
}

/// `Q(lambda) = P(K > lambda)` for the Kolmogorov distribution.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // theta-function form converges quickly for small lambda
        let a = -PI * PI / (8.0 * lambda * lambda);
        let mut cdf = 0.0;
        for j in 1..=20 {
            let k = (2 * j - 1) as f64;
            let term = (a * k * k).exp();
            cdf += term;
            if term < 1e-17 {
                break;
            }
        }
        cdf *= (2.0 * PI).sqrt() / lambda;
        (1.0 - cdf).clamp(0.0, 1.0)
    } else {
        let mut q = 0.0;
        let mut sign = 1.0;
        for j in 1..=100 {
            let jf = j as f64;
            let term = (-2.0 * jf * jf * lambda * lambda).exp();
            q += sign * term;
            sign = -sign;
            if term < 1e-17 {
                break;
            }
        }
        (2.0 * q).clamp(0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_multisets() {
        let y = [3.0, 1.0, 2.0, 2.0, 5.0];
        let out = ks_two_sample(&y, &[5.0, 2.0, 2.0, 3.0, 1.0]).unwrap();
        assert_eq!(out.statistic, 0.0);
        assert_eq!(out.p_value, 1.0);
    }

    #[test]
    fn disjoint_supports() {
        let y: Vec<f64> = (1..=72).map(f64::from).collect();
        let z: Vec<f64> = y.iter().map(|v| v + 100.0).collect();
        let out = ks_two_sample(&y, &z).unwrap();
        assert_eq!(out.statistic, 1.0);
        assert!(out.p_value < 1e-12);
    }

    #[test]
    fn ties_across_samples() {
        // F_y and F_z evaluated right-continuously: at x = 1, F_y = 2/3, F_z = 1/3
        let out = ks_two_sample(&[1.0, 1.0, 2.0], &[1.0, 2.0, 2.0]).unwrap();
        assert!((out.statistic - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn brute_force_statistic() {
        let y = [0.3, 2.2, 2.2, 5.0, -1.0, 7.5, 3.3];
        let z = [1.0, 2.2, 4.4, 4.4, 8.0];
        let pooled: Vec<f64> = y.iter().chain(&z).copied().collect();
        let ecdf = |s: &[f64], x: f64| s.iter().filter(|&&v| v <= x).count() as f64 / s.len() as f64;
        let oracle = pooled
            .iter()
            .map(|&x| (ecdf(&y, x) - ecdf(&z, x)).abs())
            .fold(0.0, f64::max);
        let out = ks_two_sample(&y, &z).unwrap();
        assert!((out.statistic - oracle).abs() < 1e-15);
    }

    #[test]
    fn survival_matches_reference_values() {
        // Kolmogorov survival at its 5% and 1% critical points
        assert!((kolmogorov_survival(1.3581) - 0.05).abs() < 1e-4);
        assert!((kolmogorov_survival(1.6276) - 0.01).abs() < 1e-4);
        // both series branches agree near the switch point
        let lo = kolmogorov_survival(1.18 - 1e-9);
        let hi = kolmogorov_survival(1.18 + 1e-9);
        assert!((lo - hi).abs() < 1e-8);
    }

    #[test]
    fn empty_sample_is_an_error() {
        assert!(ks_two_sample(&[], &[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn statistic_is_symmetric_and_rank_invariant(
            y in proptest::collection::vec(-500i32..500, 1..60),
            z in proptest::collection::vec(-500i32..500, 1..60),
        ) {
            let f = |v: &i32| *v as f64;
            // Exact in f64 for these integers and strictly increasing.
            let g = |v: &i32| { let x = *v as f64; x * x * x + 2.0 * x };
            let yf: Vec<f64> = y.iter().map(f).collect();
            let zf: Vec<f64> = z.iter().map(f).collect();
            let d = ks_two_sample(&yf, &zf).unwrap();
            prop_assert_eq!(d.statistic, ks_two_sample(&zf, &yf).unwrap().statistic);
            let yg: Vec<f64> = y.iter().map(g).collect();
            let zg: Vec<f64> = z.iter().map(g).collect();
            prop_assert_eq!(d, ks_two_sample(&yg, &zg).unwrap());
        }
    }
}
