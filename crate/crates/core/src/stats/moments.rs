use crate::error::{Error, Result};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population variance (divisor `n`), two-pass.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

/// Apparent slope and offset mapping `y` onto `z` by matching the first two
/// moments: `a1 = sqrt(var z / var y)`, `a0 = E z - a1 E y`.
pub fn moment_match(y: &[f64], z: &[f64]) -> Result<(f64, f64)> {
    if y.len() < 2 || z.len() < 2 {
        return Err(Error::EmptyWindow);
    }
    let var_y = variance(y);
    let var_z = variance(z);
    if var_y <= 0.0 {
        return Err(Error::DegenerateVariance("y"));
    }
    if var_z <= 0.0 {
        return Err(Error::DegenerateVariance("z"));
    }
    let a1 = (var_z / var_y).sqrt();
    let a0 = mean(z) - a1 * mean(y);
    Ok((a1, a0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn identity() {
        let y = [1.0, 4.0, 2.0, 8.0];
        assert_eq!(moment_match(&y, &y).unwrap(), (1.0, 0.0));
    }

    #[test]
    fn affine_construction() {
        let y = [1.0, 4.0, 2.0, 8.0, 3.5];
        let z: Vec<f64> = y.iter().map(|v| 2.0 * v + 3.0).collect();
        let (a1, a0) = moment_match(&y, &z).unwrap();
        assert!((a1 - 2.0).abs() < 1e-12);
        assert!((a0 - 3.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_samples_match_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let y: Vec<f64> = Normal::new(20.0, 5.0)
            .unwrap()
            .sample_iter(&mut rng)
            .take(1000)
            .collect();
        let z: Vec<f64> = Normal::new(25.0, 10.0)
            .unwrap()
            .sample_iter(&mut rng)
            .take(1000)
            .collect();
        // independent oracle: single-pass sums
        let n = 1000.0;
        let (sy, syy) = y.iter().fold((0.0, 0.0), |(s, ss), v| (s + v, ss + v * v));
        let (sz, szz) = z.iter().fold((0.0, 0.0), |(s, ss), v| (s + v, ss + v * v));
        let vy = syy / n - (sy / n) * (sy / n);
        let vz = szz / n - (sz / n) * (sz / n);
        let a1_oracle = (vz / vy).sqrt();
        let a0_oracle = sz / n - a1_oracle * sy / n;
        let (a1, a0) = moment_match(&y, &z).unwrap();
        assert!((a1 - a1_oracle).abs() < 1e-9);
        assert!((a0 - a0_oracle).abs() < 1e-7);
        assert!((a1 - 2.0).abs() < 0.15);
        assert!((a0 + 15.0).abs() < 3.0);
    }

    #[test]
    fn constant_y_is_degenerate() {
        assert!(matches!(
            moment_match(&[3.0, 3.0, 3.0], &[1.0, 2.0, 3.0]),
            Err(Error::DegenerateVariance("y"))
        ));
    }

    proptest! {
        #[test]
        fn affine_equivariance(
            y in proptest::collection::vec(-100.0f64..100.0, 3..80),
            alpha in 0.05f64..20.0,
            beta in -50.0f64..50.0,
        ) {
            prop_assume!(variance(&y) > 1e-6);
            let z: Vec<f64> = y.iter().map(|v| alpha * v + beta).collect();
            let (a1, a0) = moment_match(&y, &z).unwrap();
            prop_assert!((a1 - alpha).abs() <= 1e-9 * alpha);
            prop_assert!((a0 - beta).abs() <= 1e-9 * (1.0 + beta.abs() + alpha * 100.0));
        }
    }
}
