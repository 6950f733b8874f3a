use kdebias_core::{kde_estimate, scaled_kernel_eval, BandwidthMatrix, Kernel, Matrix, SampleSet};
use proptest::prelude::*;

/// SPD matrix R(θ)·diag(a, b)·R(θ)ᵀ.
fn rotated(theta: f64, a: f64, b: f64) -> Matrix {
    let (s, c) = theta.sin_cos();
    Matrix::from_rows(&[
        vec![a * c * c + b * s * s, (a - b) * s * c],
        vec![(a - b) * s * c, a * s * s + b * c * c],
    ])
    .unwrap()
    .symmetrized()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn estimate_ignores_sample_order(
        pts in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..60),
        shift in 0usize..60,
    ) {
        let points: Vec<Vec<f64>> = pts.iter().map(|&(a, b)| vec![a, b]).collect();
        let mut rotated_points = points.clone();
        let k = shift % points.len();
        rotated_points.rotate_left(k);
        rotated_points.reverse();
        let kernel = Kernel::gaussian(2);
        let h = BandwidthMatrix::from_rows(&[vec![0.4, 0.1], vec![0.1, 0.3]]).unwrap();
        let q = vec![vec![0.1, -0.2], vec![1.0, 1.0]];
        let a = kde_estimate(&SampleSet::new(points).unwrap(), &kernel, &h, &q).unwrap();
        let b = kde_estimate(&SampleSet::new(rotated_points).unwrap(), &kernel, &h, &q).unwrap();
        prop_assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn hadamard_ratio_never_exceeds_one(theta in 0.0f64..std::f64::consts::PI, a in 1e-3f64..10.0, b in 1e-3f64..10.0) {
        let h = BandwidthMatrix::new(rotated(theta, a, b)).unwrap();
        let ratio = h.det() / h.op_norm().powi(2);
        prop_assert!(ratio <= 1.0 + 1e-12);
        prop_assert!((h.hadamard_ratio() * h.balance_ratio() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn scaled_kernel_is_even(theta in 0.0f64..3.0, a in 0.05f64..2.0, b in 0.05f64..2.0, u0 in -2.0f64..2.0, u1 in -2.0f64..2.0) {
        let h = BandwidthMatrix::new(rotated(theta, a, b)).unwrap();
        for kernel in [Kernel::gaussian(2), Kernel::epanechnikov(2), Kernel::higher_order4(2)] {
            let plus = scaled_kernel_eval(&kernel, &h, &[u0, u1]).unwrap();
            let minus = scaled_kernel_eval(&kernel, &h, &[-u0, -u1]).unwrap();
            prop_assert!((plus - minus).abs() <= 1e-14 * plus.abs().max(1e-300));
        }
    }
}
