//! Monte Carlo behaviour of the estimator against the exact convolution
//! and exact variance computed by quadrature.

use approx::assert_relative_eq;
use kdebias_core::bias_analysis::{exact_bias, variance_exact};
use kdebias_core::quadrature::convolve_at;
use kdebias_core::{kde_estimate, BandwidthMatrix, DensityModel, GaussianComponent, GaussianMixture, Kernel, Matrix, QuadOptions};

fn mixture_2d() -> DensityModel {
    GaussianMixture::new(vec![
        GaussianComponent::new(0.7, vec![0.0, 0.0], Matrix::from_rows(&[vec![1.0, 0.4], vec![0.4, 0.8]]).unwrap())
            .unwrap(),
        GaussianComponent::new(0.3, vec![1.5, -0.5], Matrix::diagonal(&[0.3, 0.5])).unwrap(),
    ])
    .unwrap()
    .into()
}

fn mean_and_var(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

#[test]
fn replicate_mean_and_variance_match_exact_values() {
    let model = mixture_2d();
    let kernel = Kernel::epanechnikov(2);
    let h = BandwidthMatrix::from_rows(&[vec![0.5, 0.1], vec![0.1, 0.35]]).unwrap();
    let x = vec![0.3, -0.2];
    let n = 400;
    let opts = QuadOptions::for_dim(2);
    let estimates: Vec<f64> = (0..400)
        .map(|rep| {
            let samples = model.sample(n, 1000 + rep).unwrap();
            kde_estimate(&samples, &kernel, &h, std::slice::from_ref(&x)).unwrap()[0]
        })
        .collect();
    let (mean, var) = mean_and_var(&estimates);
    let conv = convolve_at(&kernel, &h, &model, &x, &opts).unwrap().value;
    let exact_var = variance_exact(&kernel, &h, &model, &x, n as u64, &opts).unwrap();
    let se = (exact_var / estimates.len() as f64).sqrt();
    assert!((mean - conv).abs() < 4.0 * se, "mean {mean} vs convolution {conv} (se {se})");
    // 400 replicates give the sample variance a relative spread of about 7%.
    assert_relative_eq!(var, exact_var, max_relative = 0.25);
}

#[test]
fn bias_is_convolution_minus_density() {
    let model = mixture_2d();
    let kernel = Kernel::gaussian(2);
    let h = BandwidthMatrix::diagonal(&[0.2, 0.4]).unwrap();
    let x = [1.0, 0.5];
    let opts = QuadOptions::for_dim(2);
    let conv = convolve_at(&kernel, &h, &model, &x, &opts).unwrap().value;
    let bias = exact_bias(&kernel, &h, &model, &x, &opts).unwrap().value;
    assert_relative_eq!(bias, conv - model.pdf(&x).unwrap(), epsilon = 1e-15);
}

#[test]
fn estimator_converges_to_density_with_shrinking_bandwidth() {
    let model: DensityModel = GaussianMixture::standard(1).into();
    let kernel = Kernel::gaussian(1);
    let samples = model.sample(200_000, 5).unwrap();
    let h = BandwidthMatrix::scalar(1, 0.05).unwrap();
    let est = kde_estimate(&samples, &kernel, &h, &[vec![0.0], vec![1.0]]).unwrap();
    assert_relative_eq!(est[0], model.pdf(&[0.0]).unwrap(), max_relative = 0.03);
    assert_relative_eq!(est[1], model.pdf(&[1.0]).unwrap(), max_relative = 0.03);
}
