use num_complex::Complex64;

use super::{op_norm, Mat, MatError};

/// Largest ‖tA‖ accepted by [`expm`].
pub const EXPM_NORM_LIMIT: f64 = 50.0;

const TAYLOR_DEGREE: usize = 18;

/// exp(t·A) by scaling and squaring with a degree-18 Taylor polynomial.
pub fn expm(a: &Mat, t: f64) -> Result<Mat, MatError> {
    let x = a.scale(t);
    let norm = op_norm(&x);
    if !(norm <= EXPM_NORM_LIMIT) {
        return Err(MatError::OverflowRisk(norm));
    }
    let n = a.dim();
    let mut squarings = 0u32;
    let mut nrm = norm;
    while nrm > 0.5 {
        nrm *= 0.5;
        squarings += 1;
    }
    let x = x.scale(0.5f64.powi(squarings as i32));

    // Horner: I + X(I + X/2(I + X/3(...)))
    let id = Mat::identity(n);
    let mut acc = id.clone();
    for k in (1..=TAYLOR_DEGREE).rev() {
        let mut next = &x * &acc;
        next = next.scale(1.0 / k as f64);
        next.axpy(Complex64::new(1.0, 0.0), &id);
        acc = next;
    }
    for _ in 0..squarings {
        acc = &acc * &acc;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_gives_identity() {
        assert_eq!(expm(&Mat::zeros(3), 1.0).unwrap(), Mat::identity(3));
    }

    #[test]
    fn diagonal() {
        let e = expm(&Mat::diag_real(&[0.3, -2.0]), 1.0).unwrap();
        assert!((e[(0, 0)].re - 0.3f64.exp()).abs() < 1e-14);
        assert!((e[(1, 1)].re - (-2.0f64).exp()).abs() < 1e-15);
        assert!(e[(0, 1)].norm() == 0.0);
    }

    #[test]
    fn rotation() {
        for theta in [0.1, 1.0, 3.0, 20.0, 49.0] {
            let a = Mat::from_rows(&[&[0.0, -theta], &[theta, 0.0]]);
            let e = expm(&a, 1.0).unwrap();
            let exact = Mat::from_rows(&[&[theta.cos(), -theta.sin()], &[theta.sin(), theta.cos()]]);
            assert!(op_norm(&(&e - &exact)) <= 1e-10, "theta {theta}");
        }
    }

    #[test]
    fn overflow_guard() {
        assert!(matches!(expm(&Mat::identity(2), 51.0), Err(MatError::OverflowRisk(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn semigroup(seed in any::<u64>(), s in -1.0f64..1.0, t in -1.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = (0..9).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
            let mut a = Mat::from_complex(3, data).unwrap();
            let nrm = op_norm(&a);
            a = a.scale(2.0 * rng.gen_range(0.0..1.0) / nrm);
            let lhs = &expm(&a, s).unwrap() * &expm(&a, t).unwrap();
            let rhs = expm(&a, s + t).unwrap();
            prop_assert!(op_norm(&(&lhs - &rhs)) <= 1e-8 * op_norm(&rhs));
        }
    }
}
