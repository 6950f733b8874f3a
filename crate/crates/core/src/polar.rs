//! Polar/spherical charts around the origin of kernel space.
//!
//! A radial kernel is integrated as ∫ k(r)·g(r·ω) r^{d-1} dr dω. Each chart
//! pairs a radial segment (a plain interval, or one spike of the adversarial
//! kernel in its own local coordinate) with an angular domain (a sign in
//! d = 1, an arc in d = 2, a cap around an axis in d = 3).

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::kernels::{bump, Kernel};
use crate::quadrature::{integrate_cells, Cell, QuadOptions, QuadratureResult};

/// One radial piece of a kernel, integrated over the local coordinate `t`
/// with r = center + scale·t.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialSegment {
    pub t_lo: f64,
    pub t_hi: f64,
    pub center: f64,
    pub scale: f64,
    /// `Some(a)`: the profile on this segment is exactly a·bump(t).
    pub spike_amplitude: Option<f64>,
}

impl RadialSegment {
    pub fn plain(lo: f64, hi: f64) -> Self {
        Self { t_lo: lo, t_hi: hi, center: 0.0, scale: 1.0, spike_amplitude: None }
    }

    pub fn spike(center: f64, half_width: f64, amplitude: f64) -> Self {
        Self { t_lo: -1.0, t_hi: 1.0, center, scale: half_width, spike_amplitude: Some(amplitude) }
    }

    pub fn r_lo(&self) -> f64 {
        self.center + self.scale * self.t_lo
    }

    pub fn r_hi(&self) -> f64 {
        self.center + self.scale * self.t_hi
    }

    /// Restricts the segment to radii within [lo, hi]; `None` if empty.
    pub fn clipped(&self, lo: f64, hi: f64) -> Option<Self> {
        let t_lo = self.t_lo.max((lo - self.center) / self.scale);
        let t_hi = self.t_hi.min((hi - self.center) / self.scale);
        (t_hi > t_lo).then_some(Self { t_lo, t_hi, ..*self })
    }

    #[inline]
    pub fn radius(&self, t: f64) -> f64 {
        self.center + self.scale * t
    }

    #[inline]
    pub fn profile(&self, kernel: &Kernel, t: f64) -> f64 {
        match self.spike_amplitude {
            Some(a) => a * bump(t),
            None => kernel.radial_value(self.radius(t)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AngularDomain {
    /// d = 1: the ray ±1.
    Sign(f64),
    /// d = 2: θ = base + φ with φ ∈ [lo, hi].
    Arc { base: f64, lo: f64, hi: f64 },
    /// d = 3: polar angle φ ∈ [0, max_polar] about `frame[0]`, full azimuth.
    Cap { frame: [[f64; 3]; 3], max_polar: f64 },
}

impl AngularDomain {
    pub fn full_sphere(d: usize) -> Vec<AngularDomain> {
        match d {
            1 => vec![AngularDomain::Sign(1.0), AngularDomain::Sign(-1.0)],
            2 => vec![AngularDomain::Arc { base: 0.0, lo: 0.0, hi: 2.0 * PI }],
            _ => vec![AngularDomain::Cap {
                frame: [[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
                max_polar: PI,
            }],
        }
    }

    /// Directions within `half_angle` of the unit vector `axis`.
    pub fn cone(axis: &[f64], half_angle: f64) -> Vec<AngularDomain> {
        let d = axis.len();
        if half_angle >= PI {
            return Self::full_sphere(d);
        }
        match d {
            1 => {
                if half_angle >= 0.5 * PI {
                    Self::full_sphere(1)
                } else {
                    vec![AngularDomain::Sign(axis[0].signum())]
                }
            }
            2 => {
                let c = axis[1].atan2(axis[0]);
                vec![AngularDomain::Arc { base: c, lo: -half_angle, hi: half_angle }]
            }
            _ => {
                let e = [axis[0], axis[1], axis[2]];
                let pick = if e[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
                let dp = pick[0] * e[0] + pick[1] * e[1] + pick[2] * e[2];
                let mut b1 = [pick[0] - dp * e[0], pick[1] - dp * e[1], pick[2] - dp * e[2]];
                let n1 = (b1[0] * b1[0] + b1[1] * b1[1] + b1[2] * b1[2]).sqrt();
                b1.iter_mut().for_each(|x| *x /= n1);
                let b2 = [
                    e[1] * b1[2] - e[2] * b1[1],
                    e[2] * b1[0] - e[0] * b1[2],
                    e[0] * b1[1] - e[1] * b1[0],
                ];
                vec![AngularDomain::Cap { frame: [e, b1, b2], max_polar: half_angle }]
            }
        }
    }

    pub(crate) fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            AngularDomain::Sign(_) => (vec![], vec![]),
            AngularDomain::Arc { lo, hi, .. } => (vec![*lo], vec![*hi]),
            AngularDomain::Cap { max_polar, .. } => (vec![0.0, 0.0], vec![*max_polar, 2.0 * PI]),
        }
    }

    /// Writes the unit direction for `angles` into `out`; returns the
    /// angular Jacobian.
    #[inline]
    pub(crate) fn direction(&self, angles: &[f64], out: &mut [f64]) -> f64 {
        match self {
            AngularDomain::Sign(s) => {
                out[0] = *s;
                1.0
            }
            AngularDomain::Arc { base, .. } => {
                let (s, c) = (base + angles[0]).sin_cos();
                out[0] = c;
                out[1] = s;
                1.0
            }
            AngularDomain::Cap { frame, .. } => {
                let (sp, cp) = angles[0].sin_cos();
                let (st, ct) = angles[1].sin_cos();
                for k in 0..3 {
                    out[k] = cp * frame[0][k] + sp * (ct * frame[1][k] + st * frame[2][k]);
                }
                sp
            }
        }
    }

    /// Direction minus the domain's reference axis (the sign, the base
    /// angle, or the cap axis), computed without cancellation so that tiny
    /// cones keep full relative precision.
    #[inline]
    pub(crate) fn offset_from_axis(&self, angles: &[f64], out: &mut [f64]) {
        match self {
            AngularDomain::Sign(_) => out[0] = 0.0,
            AngularDomain::Arc { base, .. } => {
                let half = 0.5 * angles[0];
                let chord = 2.0 * half.sin();
                let (s, c) = (base + half).sin_cos();
                out[0] = -chord * s;
                out[1] = chord * c;
            }
            AngularDomain::Cap { frame, .. } => {
                let (sp, _) = angles[0].sin_cos();
                let versine = 2.0 * (0.5 * angles[0]).sin().powi(2);
                let (st, ct) = angles[1].sin_cos();
                for k in 0..3 {
                    out[k] = -versine * frame[0][k] + sp * (ct * frame[1][k] + st * frame[2][k]);
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct PolarChart {
    pub radial: RadialSegment,
    pub angular: AngularDomain,
    /// Caller-defined tag (e.g. which density piece this chart belongs to).
    pub tag: usize,
}

/// Σ over charts of ∫ g(tag, u, k(u)) du, with u in polar coordinates.
///
/// `g` receives the kernel-space point and the kernel value there, so the
/// caller decides how the kernel enters (K·f, K²·f, K·u^α, …).
pub fn integrate_polar<G>(
    kernel: &Kernel,
    charts: &[PolarChart],
    g: &G,
    opts: &QuadOptions,
) -> Result<QuadratureResult>
where
    G: Fn(usize, &[f64], f64) -> f64 + Sync,
{
    let d = kernel.dim();
    if d > 3 {
        return Err(Error::InvalidParameter(format!("polar quadrature supports d <= 3, got {d}")));
    }
    let cells: Vec<Cell> = charts
        .iter()
        .enumerate()
        .map(|(i, ch)| {
            let (alo, ahi) = ch.angular.bounds();
            let mut lo = vec![ch.radial.t_lo];
            let mut hi = vec![ch.radial.t_hi];
            lo.extend(alo);
            hi.extend(ahi);
            Cell::new(lo, hi, i)
        })
        .collect();
    let power = (d - 1) as i32;
    let integrand = |chart: usize, p: &[f64]| {
        let ch = &charts[chart];
        let t = p[0];
        let kval = ch.radial.profile(kernel, t);
        if kval == 0.0 {
            return 0.0;
        }
        let r = ch.radial.radius(t);
        let mut u = [0.0f64; 3];
        let ajac = ch.angular.direction(&p[1..], &mut u[..d]);
        for x in u[..d].iter_mut() {
            *x *= r;
        }
        let jac = ch.radial.scale * r.powi(power) * ajac;
        jac * g(ch.tag, &u[..d], kval)
    };
    integrate_cells(cells, &integrand, opts)
}
