//! Deterministic numeric primitives: matrices, seeded random generation and
//! elementary statistics. All arithmetic is `f64`.

mod matrix;
mod rng;

pub use matrix::Matrix;
pub(crate) use matrix::{gemm_nn, gemm_nt, gemm_tn};
pub use rng::RngState;

use crate::error::{Error, Result};

/// `n` draws from `N(0, sigma²)`, advancing `rng`.
pub fn gaussian_sample(rng: &mut RngState, n: usize, sigma: f64) -> Result<Vec<f64>> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::domain(format!(
            "standard deviation must be finite and non-negative, got {sigma}"
        )));
    }
    Ok((0..n).map(|_| sigma * rng.normal()).collect())
}

/// Arithmetic mean and population variance (divides by `n`).
pub fn mean_var(x: &[f64]) -> Result<(f64, f64)> {
    if x.is_empty() {
        return Err(Error::domain("mean/variance of an empty sample"));
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok((mean, var))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_sigma_gives_zeros() {
        let mut rng = RngState::new(3);
        let xs = gaussian_sample(&mut rng, 100, 0.0).unwrap();
        assert!(xs.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn negative_sigma_rejected() {
        let mut rng = RngState::new(3);
        assert!(matches!(
            gaussian_sample(&mut rng, 10, -1.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn fixed_seed_is_bit_reproducible() {
        let a = gaussian_sample(&mut RngState::new(42), 257, 1.3).unwrap();
        let b = gaussian_sample(&mut RngState::new(42), 257, 1.3).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn large_sample_moments() {
        let xs = gaussian_sample(&mut RngState::new(2024), 100_000, 1.0).unwrap();
        let (m, v) = mean_var(&xs).unwrap();
        assert!(m.abs() < 0.02, "mean {m}");
        assert!((v.sqrt() - 1.0).abs() < 0.02, "std {}", v.sqrt());
    }

    #[test]
    fn mean_var_cases() {
        assert_eq!(mean_var(&[2.5, 2.5, 2.5]).unwrap(), (2.5, 0.0));
        assert_eq!(mean_var(&[1.0, -1.0]).unwrap(), (0.0, 1.0));
        assert!(mean_var(&[]).is_err());
    }

    fn matrix_strategy(r: usize, c: usize) -> impl Strategy<Value = Matrix> {
        proptest::collection::vec(-10.0f64..10.0, r * c)
            .prop_map(move |v| Matrix::from_vec(r, c, v).unwrap())
    }

    proptest! {
        #[test]
        fn single_element_mean_var(x in -1e6f64..1e6) {
            prop_assert_eq!(mean_var(&[x]).unwrap(), (x, 0.0));
        }

        #[test]
        fn matmul_is_associative(
            (a, b, c) in (1usize..5, 1usize..5, 1usize..5, 1usize..5).prop_flat_map(|(m, n, p, q)| {
                (matrix_strategy(m, n), matrix_strategy(n, p), matrix_strategy(p, q))
            })
        ) {
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            // Compare against the magnitude of the summands, not the (possibly cancelling) result.
            let abs = |m: &Matrix| m.map(f64::abs);
            let scale = abs(&a).matmul(&abs(&b)).unwrap().matmul(&abs(&c)).unwrap();
            for ((l, r), s) in left.data().iter().zip(right.data()).zip(scale.data()) {
                prop_assert!((l - r).abs() <= 1e-9 * s.max(1e-300), "{l} vs {r}");
            }
        }
    }
}
