//! The spike-train lower bound: a far-mass witness density, bandwidth
//! schedules shrinking to zero, and the growth rate of K_h ⋆ f(0).

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bandwidth::BandwidthMatrix;
use crate::densities::{DensityModel, FarMassDensity};
use crate::error::{Error, Result};
use crate::fit::{fit_loglog, LineFit};
use crate::kernels::{AdversarialParams, Kernel};
use crate::quadrature::{convolve_at, QuadOptions};

/// Smallest distance from the origin at which the witness places mass.
pub const MIN_FAR_RADIUS: f64 = 1.05;
/// Fraction of excluded (non-converged) sweep steps that aborts the fit.
pub const MAX_EXCLUDED_FRACTION: f64 = 0.2;

/// λ₁^p / ∏ λᵢ for eigenvalues in descending order.
pub fn predicted_rate(eigs: &[f64], p: f64) -> Result<f64> {
    if eigs.is_empty() || eigs.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::InvalidParameter("eigenvalues must be positive".into()));
    }
    if eigs.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::InvalidParameter("eigenvalues must be in descending order".into()));
    }
    Ok(eigs[0].powf(p) / eigs.iter().product::<f64>())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// λᵢ = ε for all i.
    Balanced,
    /// λᵢ = ε^i.
    Unbalanced,
}

impl ScheduleKind {
    pub fn eigenvalues(self, eps: f64, d: usize) -> Vec<f64> {
        match self {
            ScheduleKind::Balanced => vec![eps; d],
            ScheduleKind::Unbalanced => (1..=d).map(|i| eps.powi(i as i32)).collect(),
        }
    }
}

/// Where the witness density puts its far mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FarPlacement {
    /// On the first spike of K_h beyond [`MIN_FAR_RADIUS`] along the top
    /// eigenvector, with a width of half the spike's half-width, so K_h is
    /// near its spike peak on the whole bump.
    SpikeAligned,
    /// A fixed shell position independent of h.
    Fixed { radius: f64, width: f64 },
}

/// One bandwidth of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowupStep {
    pub eps: f64,
    pub eigenvalues: Vec<f64>,
    /// Spike index hit by the far mass, for spike-aligned placement.
    pub spike: Option<u64>,
    pub far_radius: f64,
    pub shell_width: f64,
    pub value: f64,
    pub error_estimate: f64,
    pub converged: bool,
    pub predicted: f64,
    /// Far mass times the smallest K_h(−y) found on the far bump support.
    pub lower_envelope: f64,
    pub envelope_holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowupRun {
    pub params: AdversarialParams,
    pub schedule: ScheduleKind,
    pub placement: FarPlacement,
    pub steps: Vec<BlowupStep>,
    pub excluded: usize,
    pub fit: LineFit,
    pub predicted_slope: f64,
    /// Values grow at every step as ε decreases.
    pub strictly_increasing: bool,
}

/// Witness density for bandwidth `h` (diagonal, descending) and the spike
/// index it targets.
pub fn witness_density(
    params: &AdversarialParams,
    eigs: &[f64],
    placement: FarPlacement,
) -> Result<(FarMassDensity, Option<u64>)> {
    let d = eigs.len();
    let mut dir = vec![0.0; d];
    dir[0] = 1.0;
    match placement {
        FarPlacement::Fixed { radius, width } => Ok((
            FarMassDensity::new(
                d,
                FarMassDensity::DEFAULT_INNER_SIGMA,
                FarMassDensity::DEFAULT_INNER_MASS,
                dir,
                radius,
                width,
            )?,
            None,
        )),
        FarPlacement::SpikeAligned => {
            let l1 = eigs[0];
            let mut n = ((MIN_FAR_RADIUS / l1).floor() as u64).max(2);
            while l1 * (n as f64 - 0.5 * params.half_width(n)) < MIN_FAR_RADIUS {
                n += 1;
            }
            if n > params.n_max {
                return Err(Error::InvalidParameter(format!(
                    "bandwidth {l1:e} needs spike {n} beyond n_max = {}",
                    params.n_max
                )));
            }
            let w = l1 * params.half_width(n);
            let radius = l1 * n as f64 - 0.5 * w;
            Ok((
                FarMassDensity::new(
                    d,
                    FarMassDensity::DEFAULT_INNER_SIGMA,
                    FarMassDensity::DEFAULT_INNER_MASS,
                    dir,
                    radius,
                    w,
                )?,
                Some(n),
            ))
        }
    }
}

/// Far mass × the minimum of K_h(−y) over sampled points of the far bump
/// support (its centre and boundary).
pub fn far_lower_envelope(kernel: &Kernel, h: &BandwidthMatrix, fm: &FarMassDensity) -> Result<f64> {
    let d = fm.dim;
    let c = fm.far_center();
    let rho = fm.far_bump_radius();
    let mut dirs: Vec<Vec<f64>> = vec![vec![0.0; d]];
    match d {
        1 => {
            dirs.push(vec![1.0]);
            dirs.push(vec![-1.0]);
        }
        2 => dirs.extend((0..256).map(|i| {
            let t = 2.0 * PI * i as f64 / 256.0;
            vec![t.cos(), t.sin()]
        })),
        _ => {
            for i in 0..=16 {
                let phi = PI * i as f64 / 16.0;
                for k in 0..32 {
                    let t = 2.0 * PI * k as f64 / 32.0;
                    let mut v = vec![phi.sin() * t.cos(), phi.sin() * t.sin(), phi.cos()];
                    v.resize(d, 0.0);
                    dirs.push(v);
                }
            }
        }
    }
    let mut lowest = f64::INFINITY;
    for v in dirs {
        let y: Vec<f64> = c.iter().zip(&v).map(|(ci, vi)| -(ci + rho * vi)).collect();
        let u = h.apply_inverse(&y)?;
        lowest = lowest.min(kernel.eval_unchecked(&u) / h.det());
    }
    Ok(fm.far_mass() * lowest)
}

/// K_h ⋆ f(0) for diagonal h = diag(schedule(ε)) over `eps_values`, with a
/// far-mass witness f, and the log-log slope of the values against ε.
pub fn blowup_sweep(
    params: AdversarialParams,
    schedule: ScheduleKind,
    eps_values: &[f64],
    placement: FarPlacement,
    opts: &QuadOptions,
) -> Result<BlowupRun> {
    let d = params.dim;
    if d > 2 {
        return Err(Error::InvalidParameter(format!("blow-up sweeps support d <= 2, got {d}")));
    }
    if eps_values.len() < 2 {
        return Err(Error::InvalidParameter("need at least two bandwidths".into()));
    }
    if eps_values.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
        return Err(Error::InvalidParameter("schedule values must lie in (0, 1)".into()));
    }
    if eps_values.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidParameter("schedule must be strictly decreasing".into()));
    }
    let kernel = Kernel::AdversarialRadial(params);
    let origin = vec![0.0; d];
    let steps = eps_values
        .par_iter()
        .map(|&eps| {
            let eigs = schedule.eigenvalues(eps, d);
            let h = BandwidthMatrix::diagonal(&eigs)?;
            let (fm, spike) = witness_density(&params, &eigs, placement)?;
            let lower_envelope = far_lower_envelope(&kernel, &h, &fm)?;
            let model = DensityModel::from(fm.clone());
            let res = convolve_at(&kernel, &h, &model, &origin, opts)?;
            Ok(BlowupStep {
                eps,
                predicted: predicted_rate(&eigs, params.p)?,
                eigenvalues: eigs,
                spike,
                far_radius: fm.far_radius,
                shell_width: fm.shell_width,
                value: res.value,
                error_estimate: res.error_estimate,
                converged: res.converged,
                envelope_holds: res.value >= lower_envelope,
                lower_envelope,
            })
        })
        .collect::<Result<Vec<BlowupStep>>>()?;
    let kept: Vec<&BlowupStep> = steps.iter().filter(|s| s.converged && s.value > 0.0).collect();
    let excluded = steps.len() - kept.len();
    if excluded as f64 > MAX_EXCLUDED_FRACTION * steps.len() as f64 {
        return Err(Error::QuadratureFailed(format!(
            "{excluded} of {} sweep steps did not converge",
            steps.len()
        )));
    }
    let fit = fit_loglog(&kept.iter().map(|s| s.eps).collect::<Vec<_>>(), &kept.iter().map(|s| s.value).collect::<Vec<_>>())?;
    let predicted_slope = fit_loglog(
        &steps.iter().map(|s| s.eps).collect::<Vec<_>>(),
        &steps.iter().map(|s| s.predicted).collect::<Vec<_>>(),
    )?
    .slope;
    let strictly_increasing = steps.windows(2).all(|w| w[1].value > w[0].value);
    Ok(BlowupRun { params, schedule, placement, steps, excluded, fit, predicted_slope, strictly_increasing })
}

/// Geometric sequence start·ratio^i, i < count.
pub fn geometric(start: f64, ratio: f64, count: usize) -> Vec<f64> {
    (0..count).map(|i| start * ratio.powi(i as i32)).collect()
}

/// Truncation-stability of one radial moment of the spike-train kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub j: usize,
    pub value: f64,
    pub value_2n: f64,
    pub value_4n: f64,
    /// |S(2N) − S(N)| / S(2N)
    pub rel_change: f64,
    /// |S(4N) − S(2N)| / S(4N)
    pub rel_change_4n: f64,
    pub converged: bool,
}

pub const DOUBLING_TOL: f64 = 1e-6;

/// Radial moments S_{d−1}·∫ r^{d+j−1} k(r) dr for j = 0..=j_max, at n_max,
/// 2·n_max and 4·n_max spikes.
///
/// Each spike is integrated in its own local coordinate; spikes at large n
/// are narrower than the spacing of doubles near n, so a global radial grid
/// cannot even place their breakpoints.
pub fn moment_finiteness_report(params: &AdversarialParams, j_max: usize) -> Result<Vec<MomentRow>> {
    if j_max > params.ell as usize {
        return Err(Error::InvalidParameter(format!(
            "moment table goes up to ell = {}, got {j_max}",
            params.ell
        )));
    }
    (0..=j_max)
        .map(|j| {
            let n = params.n_max;
            let s1 = params.radial_series(j, n);
            let s2 = params.radial_series(j, 2 * n);
            let s4 = params.radial_series(j, 4 * n);
            if !s4.is_finite() {
                return Err(Error::MomentDiverged { order: j, detail: "partial sums overflow".into() });
            }
            let rel_change = (s2 - s1).abs() / s2;
            let rel_change_4n = (s4 - s2).abs() / s4;
            Ok(MomentRow {
                j,
                value: s1,
                value_2n: s2,
                value_4n: s4,
                rel_change,
                rel_change_4n,
                converged: rel_change < DOUBLING_TOL && rel_change_4n < DOUBLING_TOL,
            })
        })
        .collect()
}

/// Largest relative deviation of n^p·k(n) from c·e⁻¹ over all spikes.
pub fn spike_decay_deviation(params: &AdversarialParams) -> f64 {
    let kernel = Kernel::AdversarialRadial(*params);
    let target = params.c * (-1f64).exp();
    (2..=params.n_max)
        .map(|n| {
            let nf = n as f64;
            let mut u = vec![0.0; params.dim];
            u[0] = nf;
            (nf.powf(params.p) * kernel.eval_unchecked(&u) - target).abs() / target
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predicted_rate_examples() {
        let e: f64 = 0.01;
        assert!((predicted_rate(&[e, e], 1.0).unwrap() - 1.0 / e).abs() < 1e-9);
        assert!((predicted_rate(&[e, e], 2.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((predicted_rate(&[e, e * e], 1.0).unwrap() - e.powi(-2)).abs() < 1e-6);
        assert!(predicted_rate(&[e * e, e], 1.0).is_err());
        assert!(predicted_rate(&[0.0], 1.0).is_err());
    }

    #[test]
    fn witness_sits_on_a_spike() {
        let params = *match Kernel::adversarial(1.0, 2, 2, 2000).unwrap() {
            Kernel::AdversarialRadial(ref p) => p,
            _ => unreachable!(),
        };
        for eps in [0.5, 0.1, 0.03] {
            let (fm, n) = witness_density(&params, &[eps, eps], FarPlacement::SpikeAligned).unwrap();
            let n = n.unwrap();
            assert!(fm.far_radius >= MIN_FAR_RADIUS);
            let centre = fm.far_radius + 0.5 * fm.shell_width;
            assert!((centre / eps - n as f64).abs() <= 1e-9 * n as f64);
        }
    }

    #[test]
    fn moment_rows() {
        let k = Kernel::adversarial(1.0, 2, 1, 10_000).unwrap();
        let Kernel::AdversarialRadial(p) = k else { unreachable!() };
        let rows = moment_finiteness_report(&p, 2).unwrap();
        assert!((rows[0].value - 1.0).abs() < 1e-6);
        assert!(rows.iter().all(|r| r.converged), "{rows:?}");
        assert!(moment_finiteness_report(&p, 3).is_err());
        assert!(spike_decay_deviation(&p) < 1e-10);
    }

    #[test]
    fn small_blowup_sweep_d1() {
        let k = Kernel::adversarial(0.5, 2, 1, 10_000).unwrap();
        let Kernel::AdversarialRadial(p) = k else { unreachable!() };
        let run = blowup_sweep(
            p,
            ScheduleKind::Balanced,
            &geometric(0.5, 0.5, 4),
            FarPlacement::SpikeAligned,
            &QuadOptions::for_dim(1),
        )
        .unwrap();
        assert!(run.steps.iter().all(|s| s.envelope_holds && s.value.is_finite()));
        assert!(run.strictly_increasing);
        assert!((run.predicted_slope + 0.5).abs() < 1e-12);
    }
}
