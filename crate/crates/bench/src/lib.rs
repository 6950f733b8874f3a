//! Benchmark fixtures shared by the criterion targets.

use kdebias_core::{BandwidthMatrix, DensityModel, GaussianComponent, GaussianMixture, Matrix};

/// Correlated two-component mixture in d = 2.
pub fn mixture_2d() -> DensityModel {
    GaussianMixture::new(vec![
        GaussianComponent::new(0.6, vec![0.0, 0.0], Matrix::from_rows(&[vec![1.0, 0.3], vec![0.3, 0.7]]).unwrap())
            .unwrap(),
        GaussianComponent::new(0.4, vec![1.2, -0.4], Matrix::diagonal(&[0.4, 0.6])).unwrap(),
    ])
    .unwrap()
    .into()
}

pub fn bandwidth_2d(scale: f64) -> BandwidthMatrix {
    BandwidthMatrix::from_rows(&[vec![scale, 0.2 * scale], vec![0.2 * scale, 0.7 * scale]]).unwrap()
}
