use super::histogram::EmpiricalDistribution;
use crate::error::{Error, Result};

/// `D_KL(p || q) = sum_i p_i ln(p_i / q_i)` over shared bins.
///
/// Both distributions must come from the same bin layout and `q` must carry no
/// zero mass (use smoothed histograms).
pub fn kl_divergence(p: &EmpiricalDistribution, q: &EmpiricalDistribution) -> Result<f64> {
    if !p.same_edges(q) {
        return Err(Error::BinMismatch);
    }
    Ok(kl_masses(p.mass(), q.mass()))
}

/// Divergence between two mass vectors of equal length. Terms with `p_i = 0`
/// contribute nothing. Round-off below zero is clamped.
#[inline]
pub fn kl_masses(p: &[f64], q: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    let d: f64 = p
        .iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi).ln())
        .sum();
    d.max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_bin(p0: f64) -> EmpiricalDistribution {
        EmpiricalDistribution::from_mass(vec![0.0, 1.0, 2.0], vec![p0, 1.0 - p0], 10).unwrap()
    }

    #[test]
    fn identical_distributions_have_zero_divergence() {
        let p = two_bin(0.3);
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn hand_computed_two_bin_case() {
        let oracle = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
        let d = kl_divergence(&two_bin(0.5), &two_bin(0.9)).unwrap();
        assert!((d - oracle).abs() < 1e-15);
        assert!((d - 0.5108).abs() < 1e-4);
    }

    #[test]
    fn near_disjoint_is_large_but_finite() {
        let eps = 1e-6;
        let d = kl_divergence(&two_bin(1.0 - eps), &two_bin(eps)).unwrap();
        assert!(d.is_finite());
        assert!(d > 10.0);
    }

    #[test]
    fn mismatched_edges_rejected() {
        let p = two_bin(0.5);
        let q = EmpiricalDistribution::from_mass(vec![0.0, 2.0, 4.0], vec![0.5, 0.5], 4).unwrap();
        assert!(matches!(kl_divergence(&p, &q), Err(Error::BinMismatch)));
    }

    fn normalised(raw: &[f64]) -> Vec<f64> {
        let s: f64 = raw.iter().map(|x| x + 1e-6).sum();
        raw.iter().map(|x| (x + 1e-6) / s).collect()
    }

    proptest! {
        #[test]
        fn gibbs_inequality(raw in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..40)) {
            let edges: Vec<f64> = (0..=raw.len()).map(|i| i as f64).collect();
            let p = EmpiricalDistribution::from_mass(edges.clone(), normalised(&raw.iter().map(|r| r.0).collect::<Vec<_>>()), 10).unwrap();
            let q = EmpiricalDistribution::from_mass(edges, normalised(&raw.iter().map(|r| r.1).collect::<Vec<_>>()), 10).unwrap();
            prop_assert!(kl_divergence(&p, &q).unwrap() >= 0.0);
            prop_assert!(kl_divergence(&p, &p).unwrap() <= 1e-12);
        }
    }
}
