//! Exact bias, the terms of its Taylor expansion, a bound on the expansion
//! remainder, the exact variance, and rate-fitting experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bandwidth::BandwidthMatrix;
use crate::densities::DensityModel;
use crate::error::{Error, Result};
use crate::estimator::kde_estimate;
use crate::fit::{fit_loglog, LineFit};
use crate::kernels::Kernel;
use crate::quadrature::{convolve_at, convolve_power_at, QuadOptions};
use crate::summation::pairwise_sum;

/// Safety factor already folded into [`DensityModel::deriv_sup_norm`]; kept
/// here for reports.
pub const SUP_NORM_SAFETY: f64 = 1.05;
/// The constant in front of the Taylor branch of the bound. With Euclidean
/// norms and tensor operator norms the inequalities chain with constant 1.
pub const BOUND_CONSTANT: f64 = 1.0;
/// Scale in the normal-reference bandwidth h(n) = c₀·σ̂·n^{−1/(4+d)}.
pub const NORMAL_REFERENCE: f64 = 1.06;

/// A quadrature-derived value with its error estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub error_estimate: f64,
}

/// K_h ⋆ f(x′) − f(x′).
pub fn exact_bias(
    kernel: &Kernel,
    h: &BandwidthMatrix,
    model: &DensityModel,
    x: &[f64],
    opts: &QuadOptions,
) -> Result<Estimate> {
    let conv = convolve_at(kernel, h, model, x, opts)?.require_converged()?;
    Ok(Estimate { value: conv.value - model.pdf(x)?, error_estimate: conv.error_estimate })
}

fn factorial(j: usize) -> f64 {
    (1..=j).map(|i| i as f64).product()
}

/// ∫ K(u) du, exact where the kernel has a closed form.
fn kernel_mass(kernel: &Kernel, opts: &QuadOptions) -> Result<f64> {
    if kernel.is_non_negative() && kernel.is_radial() {
        return Ok(kernel.moment(0)?.value);
    }
    Ok(kernel.integrate_against(&|_| 1.0, opts)?.require_converged()?.value)
}

/// j-th term of the bias expansion: f(x′)·(∫K − 1) for j = 0, otherwise
/// ((−1)^j / j!)·∫ K(u)·D^j f(x′)(hu, …, hu) du.
pub fn moment_term(
    kernel: &Kernel,
    h: &BandwidthMatrix,
    model: &DensityModel,
    x: &[f64],
    j: usize,
    opts: &QuadOptions,
) -> Result<f64> {
    if h.dim() != kernel.dim() || model.dim() != kernel.dim() {
        return Err(Error::DimensionMismatch { expected: kernel.dim(), got: model.dim().min(h.dim()) });
    }
    if j == 0 {
        return Ok(model.pdf(x)? * (kernel_mass(kernel, opts)? - 1.0));
    }
    let tensor = model.deriv_tensor(x, j)?;
    // finiteness of the absolute moment makes the integral well defined
    kernel.moment(j)?;
    let hm = h.entries();
    let d = kernel.dim();
    let res = kernel
        .integrate_against(
            &|u: &[f64]| {
                let mut hu = [0.0f64; 3];
                for i in 0..d {
                    hu[i] = (0..d).map(|k| hm[(i, k)] * u[k]).sum();
                }
                tensor.contract(&hu[..d])
            },
            opts,
        )?
        .require_converged()?;
    let sign = if j.is_multiple_of(2) { 1.0 } else { -1.0 };
    Ok(sign / factorial(j) * res.value)
}

/// The two branches of the remainder bound and their sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundComponents {
    /// 2·|h|⁻¹·ψ(δ/‖h‖)
    pub tail_term: f64,
    /// C·μ_K(k)·B(δ)/k!
    pub taylor_term: f64,
    pub total: f64,
}

pub fn remainder_bound(
    kernel: &Kernel,
    h: &BandwidthMatrix,
    model: &DensityModel,
    x: &[f64],
    k: usize,
    delta: f64,
) -> Result<BoundComponents> {
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter(format!("delta must be > 0, got {delta}")));
    }
    let tail_term = 2.0 / h.det() * kernel.decay_envelope(delta / h.op_norm());
    let sup = model.deriv_sup_norm(x, delta, k)?;
    let taylor_term = BOUND_CONSTANT * kernel.moment(k)?.value / factorial(k) * sup;
    Ok(BoundComponents { tail_term, taylor_term, total: tail_term + taylor_term })
}

/// Default split radius δ = ‖h‖^{1/2}.
pub fn choose_delta(h: &BandwidthMatrix) -> f64 {
    h.op_norm().sqrt()
}

/// Everything known about the bias at one (kernel, h, f, x′, k) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub x_query: Vec<f64>,
    pub h: Vec<Vec<f64>>,
    pub h_norm: f64,
    pub k: usize,
    pub exact_bias: f64,
    pub exact_bias_error: f64,
    pub moment_terms: Vec<f64>,
    pub empirical_remainder: f64,
    pub delta_used: f64,
    pub bound_components: BoundComponents,
    pub bound_total: f64,
    /// |remainder| / ‖h‖^k, the normalization the bound is checked against.
    pub remainder_over_norm_k: f64,
    /// |remainder| / ‖h‖², the alternative normalization.
    pub remainder_over_norm_sq: f64,
    /// |remainder| / (bound_total·‖h‖^k); at most 1 when the bound holds.
    pub margin_ratio: f64,
    pub bound_satisfied: bool,
}

pub fn bias_report(
    kernel: &Kernel,
    h: &BandwidthMatrix,
    model: &DensityModel,
    x: &[f64],
    k: usize,
    delta: Option<f64>,
    opts: &QuadOptions,
) -> Result<BiasReport> {
    let bias = exact_bias(kernel, h, model, x, opts)?;
    let moment_terms =
        (0..=k).map(|j| moment_term(kernel, h, model, x, j, opts)).collect::<Result<Vec<f64>>>()?;
    let empirical_remainder = bias.value - moment_terms.iter().sum::<f64>();
    let delta_used = delta.unwrap_or_else(|| choose_delta(h));
    let bound = remainder_bound(kernel, h, model, x, k, delta_used)?;
    let h_norm = h.op_norm();
    let scale = h_norm.powi(k as i32);
    let abs_rem = empirical_remainder.abs();
    let allowed = bound.total * scale;
    Ok(BiasReport {
        x_query: x.to_vec(),
        h: h.entries().to_rows(),
        h_norm,
        k,
        exact_bias: bias.value,
        exact_bias_error: bias.error_estimate,
        moment_terms,
        empirical_remainder,
        delta_used,
        bound_components: bound,
        bound_total: bound.total,
        remainder_over_norm_k: abs_rem / scale,
        remainder_over_norm_sq: abs_rem / (h_norm * h_norm),
        margin_ratio: abs_rem / allowed,
        bound_satisfied: abs_rem <= allowed,
    })
}

/// n⁻¹·(∫K_h(x′ − y)² f(y) dy − (K_h ⋆ f(x′))²).
pub fn variance_exact(
    kernel: &Kernel,
    h: &BandwidthMatrix,
    model: &DensityModel,
    x: &[f64],
    n: u64,
    opts: &QuadOptions,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::EmptySamples);
    }
    let second = convolve_power_at(kernel, h, model, x, opts)?.require_converged()?.value / h.det();
    let first = convolve_at(kernel, h, model, x, opts)?.require_converged()?.value;
    Ok((second - first * first) / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub h: f64,
    pub exact_bias: f64,
    pub error_estimate: f64,
    /// Exclusion threshold: 10× the quadrature tolerance at this cell.
    pub threshold: f64,
    pub included: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingStudy {
    pub x_query: Vec<f64>,
    pub points: Vec<ScalingPoint>,
    pub fit: LineFit,
    /// |bias(h_{i+1})| / |bias(h_i)| rescaled to a halving of h:
    /// (ratio)^{ln 2 / ln(h_i / h_{i+1})}.
    pub halving_ratios: Vec<f64>,
}

/// Smallest h_max/h_min accepted by [`bias_scaling_study`]: five halvings.
pub const MIN_SCALING_SPAN: f64 = 32.0;

/// Slope of log|bias| against log h for scalar bandwidths h·I.
pub fn bias_scaling_study(
    kernel: &Kernel,
    model: &DensityModel,
    x: &[f64],
    h_values: &[f64],
    opts: &QuadOptions,
) -> Result<ScalingStudy> {
    if h_values.len() < 5 {
        return Err(Error::InvalidParameter("bias scaling needs at least 5 bandwidths".into()));
    }
    let (lo, hi) = h_values.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
    if !(lo > 0.0) || hi / lo < MIN_SCALING_SPAN * (1.0 - 1e-12) {
        return Err(Error::InvalidParameter(format!(
            "bandwidths must be positive and span a factor of at least {MIN_SCALING_SPAN}"
        )));
    }
    let d = kernel.dim();
    let points = h_values
        .par_iter()
        .map(|&hv| {
            let h = BandwidthMatrix::scalar(d, hv)?;
            let conv = convolve_at(kernel, &h, model, x, opts)?.require_converged()?;
            let bias = conv.value - model.pdf(x)?;
            let threshold = 10.0 * opts.tolerance_for(conv.value);
            Ok(ScalingPoint {
                h: hv,
                exact_bias: bias,
                error_estimate: conv.error_estimate,
                threshold,
                included: bias.abs() >= threshold,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let kept: Vec<&ScalingPoint> = points.iter().filter(|p| p.included).collect();
    if kept.len() < 2 {
        return Err(Error::AllPointsExcluded);
    }
    let xs: Vec<f64> = kept.iter().map(|p| p.h).collect();
    let ys: Vec<f64> = kept.iter().map(|p| p.exact_bias.abs()).collect();
    let fit = fit_loglog(&xs, &ys)?;
    let halving_ratios = points
        .windows(2)
        .map(|w| {
            let r = w[0].exact_bias.abs() / w[1].exact_bias.abs();
            r.powf(2f64.ln() / (w[0].h / w[1].h).ln())
        })
        .collect();
    Ok(ScalingStudy { x_query: x.to_vec(), points, fit, halving_ratios })
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replicate `rep` at grid index `cell`, derived from the run seed.
pub fn cell_seed(seed: u64, cell: usize, rep: usize) -> u64 {
    mix64(mix64(seed) ^ mix64(((cell as u64) << 32) ^ rep as u64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseRow {
    pub n: u64,
    pub mean_h: f64,
    pub mean_error: f64,
    pub mse: f64,
    /// Standard error of the MSE across replicates.
    pub mse_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseStudy {
    pub x_query: Vec<f64>,
    pub replicates: usize,
    pub seed: u64,
    pub c0: f64,
    pub rows: Vec<MseRow>,
    pub fit: LineFit,
    /// Standard deviation of the slope over bootstrap resamples of the
    /// replicates.
    pub slope_stderr_bootstrap: f64,
    /// −4/(4 + d)
    pub predicted_slope: f64,
}

pub const MIN_REPLICATES: usize = 50;
const BOOTSTRAP_ROUNDS: usize = 200;

/// Mean squared error of the estimator at x′ for each n, with the
/// normal-reference bandwidth c₀·σ̂·n^{−1/(4+d)}·I, and its log-log slope.
pub fn mse_study(
    kernel: &Kernel,
    model: &DensityModel,
    x: &[f64],
    n_values: &[u64],
    replicates: usize,
    seed: u64,
    c0: f64,
) -> Result<MseStudy> {
    if replicates < MIN_REPLICATES {
        return Err(Error::InvalidParameter(format!("need at least {MIN_REPLICATES} replicates")));
    }
    if n_values.len() < 2 || n_values.iter().any(|&n| n < 2) {
        return Err(Error::InvalidParameter("need at least two sample sizes, each >= 2".into()));
    }
    if !(c0 > 0.0) {
        return Err(Error::InvalidParameter(format!("bandwidth scale must be > 0, got {c0}")));
    }
    let d = kernel.dim();
    if model.dim() != d || x.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: model.dim() });
    }
    let truth = model.pdf(x)?;
    let cells: Vec<(usize, usize)> =
        (0..n_values.len()).flat_map(|i| (0..replicates).map(move |r| (i, r))).collect();
    let outcomes: Vec<(f64, f64)> = cells
        .par_iter()
        .map(|&(i, r)| {
            let n = n_values[i];
            let samples = model.sample(n as usize, cell_seed(seed, i, r))?;
            let sd = mean_coordinate_sd(samples.points());
            let hv = c0 * sd * (n as f64).powf(-1.0 / (4.0 + d as f64));
            let h = BandwidthMatrix::scalar(d, hv)?;
            let est = kde_estimate(&samples, kernel, &h, &[x.to_vec()])?[0];
            Ok((est - truth, hv))
        })
        .collect::<Result<Vec<_>>>()?;
    let errors: Vec<Vec<f64>> = outcomes.chunks(replicates).map(|c| c.iter().map(|o| o.0).collect()).collect();
    let rows: Vec<MseRow> = n_values
        .iter()
        .zip(outcomes.chunks(replicates))
        .zip(&errors)
        .map(|((&n, chunk), errs)| {
            let r = replicates as f64;
            let sq: Vec<f64> = errs.iter().map(|e| e * e).collect();
            let mse = pairwise_sum(&sq) / r;
            let spread: Vec<f64> = sq.iter().map(|s| (s - mse).powi(2)).collect();
            let hs: Vec<f64> = chunk.iter().map(|o| o.1).collect();
            MseRow {
                n,
                mean_h: pairwise_sum(&hs) / r,
                mean_error: pairwise_sum(errs) / r,
                mse,
                mse_stderr: (pairwise_sum(&spread) / (r - 1.0) / r).sqrt(),
            }
        })
        .collect();
    let ns: Vec<f64> = n_values.iter().map(|&n| n as f64).collect();
    let fit = fit_loglog(&ns, &rows.iter().map(|r| r.mse).collect::<Vec<_>>())?;

    let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed ^ 0xB007_5757));
    let mut slopes = Vec::with_capacity(BOOTSTRAP_ROUNDS);
    for _ in 0..BOOTSTRAP_ROUNDS {
        let mses: Vec<f64> = errors
            .iter()
            .map(|errs| {
                let sq: Vec<f64> = (0..replicates)
                    .map(|_| {
                        let e = errs[rng.random_range(0..replicates)];
                        e * e
                    })
                    .collect();
                pairwise_sum(&sq) / replicates as f64
            })
            .collect();
        if let Ok(f) = fit_loglog(&ns, &mses) {
            slopes.push(f.slope);
        }
    }
    let m = slopes.iter().sum::<f64>() / slopes.len() as f64;
    let slope_stderr_bootstrap =
        (slopes.iter().map(|s| (s - m).powi(2)).sum::<f64>() / (slopes.len() as f64 - 1.0)).sqrt();
    Ok(MseStudy {
        x_query: x.to_vec(),
        replicates,
        seed,
        c0,
        rows,
        fit,
        slope_stderr_bootstrap,
        predicted_slope: -4.0 / (4.0 + d as f64),
    })
}

/// Average over coordinates of the sample standard deviation.
fn mean_coordinate_sd(points: &[Vec<f64>]) -> f64 {
    let d = points[0].len();
    let n = points.len() as f64;
    let mut total = 0.0;
    for k in 0..d {
        let col: Vec<f64> = points.iter().map(|p| p[k]).collect();
        let mean = pairwise_sum(&col) / n;
        let dev: Vec<f64> = col.iter().map(|v| (v - mean).powi(2)).collect();
        total += (pairwise_sum(&dev) / (n - 1.0)).sqrt();
    }
    total / d as f64
}
