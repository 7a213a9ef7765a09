//! Distribution-level metrics over latent feature vectors.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Diagonal regularization added to both covariances.
pub const FRECHET_EPS: f64 = 1e-6;
/// Eigenvalues of the covariance product below this are not rounding error.
pub const NEGATIVE_EIG_TOL: f64 = -1e-6;

fn check(features: &[Vec<f64>], min: usize) -> Result<usize> {
    if features.len() < min {
        return Err(Error::InsufficientFrames {
            needed: min,
            got: features.len(),
        });
    }
    let d = features[0].len();
    if d == 0 {
        return Err(Error::InvalidInput("feature dimension must be at least 1".into()));
    }
    for (row, f) in features.iter().enumerate() {
        if f.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: f.len() });
        }
        if let Some(col) = f.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row, col });
        }
    }
    Ok(d)
}

/// Mean L2 distance over all unordered pairs.
pub fn diversity(features: &[Vec<f64>]) -> Result<f64> {
    check(features, 2)?;
    let n = features.len();
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            total += features[i]
                .iter()
                .zip(&features[j])
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
        }
    }
    Ok(total / (n * (n - 1) / 2) as f64)
}

/// Sample mean and unbiased covariance.
fn moments(features: &[Vec<f64>], d: usize) -> (DVector<f64>, DMatrix<f64>) {
    let n = features.len();
    let x = DMatrix::from_fn(n, d, |i, j| features[i][j]);
    let mean = DVector::from_fn(d, |j, _| x.column(j).mean());
    let mut centred = x;
    for j in 0..d {
        let m = mean[j];
        centred.column_mut(j).add_scalar_mut(-m);
    }
    let cov = centred.transpose() * &centred / (n - 1) as f64;
    (mean, cov)
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn checked_eigenvalues(m: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let eig = SymmetricEigen::new(symmetrize(m));
    if let Some(bad) = eig.eigenvalues.iter().find(|v| **v < NEGATIVE_EIG_TOL || !v.is_finite()) {
        return Err(Error::NotPsd(*bad));
    }
    Ok(eig)
}

/// Principal square root of a symmetric PSD matrix.
fn sqrt_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = checked_eigenvalues(m)?;
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// `|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2))` between Gaussians
/// fit to the two sets. The trace of the product root is the sum of the
/// singular values of `S_a^(1/2) S_b^(1/2)`; going through the eigenvalues of
/// `S_a^(1/2) S_b S_a^(1/2)` instead squares small eigenvalues and loses
/// them to rounding when there are fewer samples than dimensions.
pub fn frechet_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let d = check(a, 2)?;
    let db = check(b, 2)?;
    if d != db {
        return Err(Error::DimensionMismatch { expected: d, got: db });
    }
    let (mu_a, mut s_a) = moments(a, d);
    let (mu_b, mut s_b) = moments(b, d);
    for i in 0..d {
        s_a[(i, i)] += FRECHET_EPS;
        s_b[(i, i)] += FRECHET_EPS;
    }
    let product = sqrt_psd(&s_a)? * sqrt_psd(&s_b)?;
    let tr_root: f64 = product.singular_values().iter().sum();
    let mean_term = (&mu_a - &mu_b).norm_squared();
    let value = mean_term + s_a.trace() + s_b.trace() - 2.0 * tr_root;
    Ok(value.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn gaussian_set(n: usize, d: usize, mean: f64, sd: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Normal::new(mean, sd).unwrap();
        (0..n).map(|_| (0..d).map(|_| g.sample(&mut rng)).collect()).collect()
    }

    #[test]
    fn diversity_examples() {
        assert_eq!(diversity(&[vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap(), 0.0);
        assert_eq!(diversity(&[vec![0.0, 0.0], vec![3.0, 4.0]]).unwrap(), 5.0);
        assert!(diversity(&[vec![1.0]]).is_err());
        assert!(diversity(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn frechet_self_is_zero() {
        let p = gaussian_set(40, 5, 0.0, 1.0, 1);
        assert!(frechet_distance(&p, &p).unwrap() <= 1e-6);
    }

    #[test]
    fn frechet_one_dimensional_closed_form() {
        let a = gaussian_set(500, 1, 0.0, 1.0, 2);
        let b = gaussian_set(500, 1, 3.0, 1.0, 3);
        let stats = |s: &[Vec<f64>]| {
            let n = s.len() as f64;
            let m = s.iter().map(|v| v[0]).sum::<f64>() / n;
            let var = s.iter().map(|v| (v[0] - m).powi(2)).sum::<f64>() / (n - 1.0);
            (m, var.sqrt())
        };
        let (ma, sa) = stats(&a);
        let (mb, sb) = stats(&b);
        let want = (ma - mb).powi(2) + (sa - sb).powi(2);
        let got = frechet_distance(&a, &b).unwrap();
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        assert!((got - 9.0).abs() < 0.6);
    }

    #[test]
    fn frechet_mean_shift_identity() {
        let a = gaussian_set(60, 4, 0.0, 1.0, 4);
        let b = gaussian_set(60, 4, 0.5, 2.0, 5);
        let c = 0.75;
        let shifted: Vec<Vec<f64>> = b.iter().map(|v| v.iter().map(|x| x + c).collect()).collect();
        let base = frechet_distance(&a, &b).unwrap();
        let moved = frechet_distance(&a, &shifted).unwrap();
        // Covariances are unchanged; only |mu_a - mu_b - c|^2 moves.
        let n = a.len() as f64;
        let dmu: f64 = (0..4)
            .map(|j| a.iter().map(|v| v[j]).sum::<f64>() / n - b.iter().map(|v| v[j]).sum::<f64>() / n)
            .sum();
        let want = 4.0 * c * c - 2.0 * c * dmu;
        assert!((moved - base - want).abs() < 1e-8, "{} vs {want}", moved - base);
        let self_shift: Vec<Vec<f64>> = a.iter().map(|v| v.iter().map(|x| x + c).collect()).collect();
        let d = frechet_distance(&a, &self_shift).unwrap();
        assert!((d - 4.0 * c * c).abs() < 1e-8);
    }

    #[test]
    fn frechet_rejects_bad_input() {
        assert!(frechet_distance(&[vec![1.0]], &[vec![1.0], vec![2.0]]).is_err());
        assert!(frechet_distance(&[vec![1.0], vec![f64::NAN]], &[vec![1.0], vec![2.0]]).is_err());
        assert!(frechet_distance(&[vec![1.0], vec![2.0]], &[vec![1.0, 0.0], vec![2.0, 0.0]]).is_err());
    }

    #[test]
    fn rank_deficient_sets_are_fine() {
        // Fewer samples than dimensions: covariances are singular before regularization.
        let a = gaussian_set(3, 8, 0.0, 1.0, 6);
        let b = gaussian_set(3, 8, 1.0, 1.0, 7);
        let d = frechet_distance(&a, &b).unwrap();
        assert!(d.is_finite() && d >= 0.0);
        let wide = gaussian_set(16, 400, 0.0, 3.0, 8);
        let self_d = frechet_distance(&wide, &wide).unwrap();
        assert!(self_d <= 1e-6, "{self_d}");
    }

    proptest! {
        #[test]
        fn diversity_permutation_and_scale(seed in 0u64..1000, k in 0.1f64..5.0) {
            let mut f = gaussian_set(12, 3, 0.0, 1.0, seed);
            let base = diversity(&f).unwrap();
            let scaled: Vec<Vec<f64>> = f.iter().map(|v| v.iter().map(|x| x * k).collect()).collect();
            prop_assert!((diversity(&scaled).unwrap() - k * base).abs() < 1e-9 * (1.0 + k * base));
            f.reverse();
            f.swap(0, 5);
            prop_assert!((diversity(&f).unwrap() - base).abs() < 1e-9);
        }

        #[test]
        fn frechet_non_negative(seed in 0u64..1000) {
            let a = gaussian_set(10, 3, 0.0, 1.0, seed);
            let b = gaussian_set(10, 3, 0.2, 1.3, seed + 1);
            prop_assert!(frechet_distance(&a, &b).unwrap() >= 0.0);
            prop_assert!(frechet_distance(&a, &a).unwrap() <= 1e-6);
        }
    }
}
