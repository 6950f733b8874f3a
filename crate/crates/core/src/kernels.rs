//! Kernel zoo and kernel diagnostics.
//!
//! All kinds except [`Kernel::ProductOf1D`] are radial, K(u) = k(|u|), and
//! are integrated in polar coordinates. The adversarial spike-train kernel
//! is a sum of disjoint rescaled bumps at integer radii; its spikes become
//! so thin that they are always integrated in their own local coordinate.

use std::f64::consts::{E, PI};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polar::{integrate_polar, AngularDomain, PolarChart, RadialSegment};
use crate::quadrature::{
    ball_volume, gauss_legendre, integrate_cells, integrate_radial, sphere_area, Cell, QuadOptions,
    QuadratureResult,
};
use crate::summation::CompensatedSum;

/// Beyond this radius Gaussian-type kernels are treated as zero
/// (the omitted mass is below 1e-25 for d ≤ 10 and moments ≤ 8).
pub const GAUSSIAN_CUTOFF: f64 = 12.0;
pub const MAX_MOMENT_ORDER: usize = 8;
pub const DEFAULT_N_MAX: u64 = 10_000;

const ORDER_TOL: f64 = 1e-8;
const DOUBLING_TOL: f64 = 1e-6;

/// Standard C^∞ bump exp(−1/(1−r²)) on (−1, 1).
#[inline]
pub fn bump(r: f64) -> f64 {
    let s = 1.0 - r * r;
    if s > 0.0 {
        (-1.0 / s).exp()
    } else {
        0.0
    }
}

fn gaussian_norm(d: usize) -> f64 {
    (2.0 * PI).powf(-(d as f64) / 2.0)
}

/// One-dimensional kernels usable as factors of a product kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Factor1D {
    Gaussian,
    Epanechnikov,
    HigherOrder4,
}

impl Factor1D {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Factor1D::Gaussian => gaussian_norm(1) * (-0.5 * x * x).exp(),
            Factor1D::Epanechnikov => {
                if x.abs() <= 1.0 {
                    0.75 * (1.0 - x * x)
                } else {
                    0.0
                }
            }
            Factor1D::HigherOrder4 => 0.5 * (3.0 - x * x) * gaussian_norm(1) * (-0.5 * x * x).exp(),
        }
    }

    pub(crate) fn knots(self) -> Vec<f64> {
        let c = GAUSSIAN_CUTOFF;
        match self {
            Factor1D::Gaussian => vec![-c, -4.0, 0.0, 4.0, c],
            Factor1D::Epanechnikov => vec![-1.0, 0.0, 1.0],
            Factor1D::HigherOrder4 => {
                let z = 3f64.sqrt();
                vec![-c, -z, 0.0, z, c]
            }
        }
    }

    pub(crate) fn support(self) -> f64 {
        match self {
            Factor1D::Epanechnikov => 1.0,
            _ => GAUSSIAN_CUTOFF,
        }
    }

    fn order(self) -> u32 {
        match self {
            Factor1D::HigherOrder4 => 4,
            _ => 2,
        }
    }

    fn non_negative(self) -> bool {
        !matches!(self, Factor1D::HigherOrder4)
    }
}

/// Parameters of the spike-train kernel
/// k(r) = c · Σ_{n=2}^{n_max} n^{−p} · bump(2·n^q·(r − n)), q = p + ℓ + d + 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdversarialParams {
    pub p: f64,
    pub ell: u32,
    pub dim: usize,
    pub n_max: u64,
    pub c: f64,
}

impl AdversarialParams {
    /// Unnormalized (c = 1) parameters; see [`normalize_adversarial`].
    pub fn new(p: f64, ell: u32, dim: usize) -> Result<Self> {
        let params = Self { p, ell, dim, n_max: DEFAULT_N_MAX, c: 1.0 };
        params.validate()?;
        Ok(params)
    }

    pub fn with_n_max(mut self, n_max: u64) -> Self {
        self.n_max = n_max;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.p >= 0.0 && self.p.is_finite()) {
            return Err(Error::InvalidParameter(format!("decay exponent p must be >= 0, got {}", self.p)));
        }
        if self.dim == 0 {
            return Err(Error::InvalidParameter("dimension must be >= 1".into()));
        }
        if self.n_max < 2 {
            return Err(Error::InvalidParameter("n_max must be >= 2".into()));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::InvalidParameter(format!("normalization c must be > 0, got {}", self.c)));
        }
        Ok(())
    }

    pub fn q(&self) -> f64 {
        self.p + self.ell as f64 + self.dim as f64 + 1.0
    }

    /// Half-width n^{−q}/2 of spike `n`.
    pub fn half_width(&self, n: u64) -> f64 {
        0.5 * (n as f64).powf(-self.q())
    }

    /// Height-scale c·n^{−p}; the spike peak is this times e^{−1}.
    pub fn amplitude(&self, n: u64) -> f64 {
        self.c * (n as f64).powf(-self.p)
    }

    /// Radial profile k(r). Spikes are disjoint, so only the spike nearest
    /// to r can be non-zero.
    pub fn profile(&self, r: f64) -> f64 {
        if !(r >= 1.5) {
            return 0.0;
        }
        let n = r.round();
        if n < 2.0 || n > self.n_max as f64 {
            return 0.0;
        }
        let n = n as u64;
        let t = 2.0 * (n as f64).powf(self.q()) * (r - n as f64);
        if t.abs() >= 1.0 {
            return 0.0;
        }
        self.amplitude(n) * bump(t)
    }

    /// S_{d−1} · Σ_{n=2}^{n_max} ∫ r^{d+j−1} k(r) dr, each spike integrated
    /// in its local coordinate with a fixed high-order rule.
    pub fn radial_series(&self, j: usize, n_max: u64) -> f64 {
        let a = (self.dim + j - 1) as f64;
        let rule = bump_rule();
        let mut acc = CompensatedSum::new();
        for n in 2..=n_max {
            let nf = n as f64;
            let s = self.half_width(n);
            let rel = s / nf;
            let local: f64 = rule.iter().map(|&(t, wb)| wb * (a * (rel * t).ln_1p()).exp()).sum();
            acc.add(self.amplitude(n) * s * nf.powf(a) * local);
        }
        sphere_area(self.dim) * acc.value()
    }
}

/// Composite Gauss–Legendre rule on [−1, 1] with the bump folded into the
/// weights: pairs (t_k, w_k·bump(t_k)).
fn bump_rule() -> &'static [(f64, f64)] {
    static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    RULE.get_or_init(|| {
        const PANELS: usize = 32;
        let (x, w) = gauss_legendre(24);
        let width = 2.0 / PANELS as f64;
        let mut out = Vec::with_capacity(PANELS * x.len());
        for p in 0..PANELS {
            let mid = -1.0 + (p as f64 + 0.5) * width;
            for (xi, wi) in x.iter().zip(&w) {
                let t = mid + 0.5 * width * xi;
                out.push((t, 0.5 * width * wi * bump(t)));
            }
        }
        out
    })
}

/// ∫_{−1}^{1} bump(t) dt from the fixed rule.
pub fn bump_integral() -> f64 {
    bump_rule().iter().map(|&(_, w)| w).sum()
}

/// Sets c so that the d-dimensional integral of the kernel is 1.
///
/// Idempotent: the normalizing integral is computed with c = 1 regardless
/// of the incoming value.
pub fn normalize_adversarial(params: AdversarialParams) -> Result<AdversarialParams> {
    params.validate()?;
    if params.q() <= 1.0 {
        return Err(Error::InvalidParameter(format!("q = p + ell + d + 1 must exceed 1, got {}", params.q())));
    }
    let unit = AdversarialParams { c: 1.0, ..params };
    let mass = unit.radial_series(0, unit.n_max);
    if !(mass > 0.0 && mass.is_finite()) {
        return Err(Error::QuadratureFailed(format!("spike-train mass is {mass}")));
    }
    Ok(AdversarialParams { c: 1.0 / mass, ..params })
}

/// Moment value together with its truncation-stability verdict.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentValue {
    pub value: f64,
    pub converged: bool,
}

/// Kinds of kernel, mirrored in the JSON `kind` field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelKind {
    #[serde(rename = "gaussian")]
    Gaussian,
    #[serde(rename = "epanechnikov")]
    Epanechnikov,
    #[serde(rename = "product_of_1d")]
    ProductOf1D,
    #[serde(rename = "higher_order4")]
    HigherOrder4,
    #[serde(rename = "adversarial_radial")]
    AdversarialRadial,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel {
    /// (2π)^{−d/2} exp(−|u|²/2)
    Gaussian { dim: usize },
    /// Radial Epanechnikov (d+2)/(2·V_d)·(1 − |u|²)₊
    Epanechnikov { dim: usize },
    /// Fourth-order Gaussian-based kernel ((d + 2 − |u|²)/2)·φ_d(u).
    HigherOrder4 { dim: usize },
    /// Π_i factor(u_i)
    ProductOf1D { dim: usize, factor: Factor1D },
    AdversarialRadial(AdversarialParams),
}

impl Kernel {
    pub fn gaussian(dim: usize) -> Self {
        Kernel::Gaussian { dim }
    }

    pub fn epanechnikov(dim: usize) -> Self {
        Kernel::Epanechnikov { dim }
    }

    pub fn higher_order4(dim: usize) -> Self {
        Kernel::HigherOrder4 { dim }
    }

    pub fn product(dim: usize, factor: Factor1D) -> Self {
        Kernel::ProductOf1D { dim, factor }
    }

    /// Builds and normalizes the spike-train kernel.
    pub fn adversarial(p: f64, ell: u32, dim: usize, n_max: u64) -> Result<Self> {
        let params = AdversarialParams::new(p, ell, dim)?.with_n_max(n_max);
        Ok(Kernel::AdversarialRadial(normalize_adversarial(params)?))
    }

    pub fn dim(&self) -> usize {
        match *self {
            Kernel::Gaussian { dim }
            | Kernel::Epanechnikov { dim }
            | Kernel::HigherOrder4 { dim }
            | Kernel::ProductOf1D { dim, .. } => dim,
            Kernel::AdversarialRadial(p) => p.dim,
        }
    }

    pub fn kind(&self) -> KernelKind {
        match self {
            Kernel::Gaussian { .. } => KernelKind::Gaussian,
            Kernel::Epanechnikov { .. } => KernelKind::Epanechnikov,
            Kernel::HigherOrder4 { .. } => KernelKind::HigherOrder4,
            Kernel::ProductOf1D { .. } => KernelKind::ProductOf1D,
            Kernel::AdversarialRadial(_) => KernelKind::AdversarialRadial,
        }
    }

    /// Order v (first non-vanishing moment) where known by construction.
    pub fn declared_order(&self) -> Option<u32> {
        match self {
            Kernel::Gaussian { .. } | Kernel::Epanechnikov { .. } => Some(2),
            Kernel::HigherOrder4 { .. } => Some(4),
            Kernel::ProductOf1D { factor, .. } => Some(factor.order()),
            Kernel::AdversarialRadial(_) => Some(2),
        }
    }

    /// Radius outside which the kernel vanishes; infinite for Gaussian types
    /// (which are cut at [`GAUSSIAN_CUTOFF`] by the integrators).
    pub fn support_radius(&self) -> f64 {
        match self {
            Kernel::Epanechnikov { .. } => 1.0,
            Kernel::ProductOf1D { dim, factor: Factor1D::Epanechnikov } => (*dim as f64).sqrt(),
            Kernel::AdversarialRadial(p) => p.n_max as f64 + p.half_width(p.n_max),
            _ => f64::INFINITY,
        }
    }

    /// Radius the integrators actually cover.
    pub fn effective_radius(&self) -> f64 {
        match self {
            Kernel::ProductOf1D { dim, factor } => factor.support() * (*dim as f64).sqrt(),
            Kernel::AdversarialRadial(_) => self.support_radius(),
            _ => self.support_radius().min(GAUSSIAN_CUTOFF),
        }
    }

    pub fn is_radial(&self) -> bool {
        !matches!(self, Kernel::ProductOf1D { .. })
    }

    pub fn is_non_negative(&self) -> bool {
        match self {
            Kernel::HigherOrder4 { .. } => false,
            Kernel::ProductOf1D { factor, .. } => factor.non_negative(),
            _ => true,
        }
    }

    pub fn is_symmetric(&self) -> bool {
        true
    }

    /// k(r) for radial kinds; NaN for product kernels.
    #[inline]
    pub fn radial_value(&self, r: f64) -> f64 {
        match *self {
            Kernel::Gaussian { dim } => gaussian_norm(dim) * (-0.5 * r * r).exp(),
            Kernel::Epanechnikov { dim } => {
                if r <= 1.0 {
                    (dim as f64 + 2.0) / (2.0 * ball_volume(dim)) * (1.0 - r * r)
                } else {
                    0.0
                }
            }
            Kernel::HigherOrder4 { dim } => {
                0.5 * (dim as f64 + 2.0 - r * r) * gaussian_norm(dim) * (-0.5 * r * r).exp()
            }
            Kernel::AdversarialRadial(p) => p.profile(r),
            Kernel::ProductOf1D { .. } => f64::NAN,
        }
    }

    pub fn eval(&self, u: &[f64]) -> Result<f64> {
        if u.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: u.len() });
        }
        Ok(self.eval_unchecked(u))
    }

    #[inline]
    pub fn eval_unchecked(&self, u: &[f64]) -> f64 {
        match self {
            Kernel::ProductOf1D { factor, .. } => u.iter().map(|&x| factor.eval(x)).product(),
            _ => self.radial_value(u.iter().map(|x| x * x).sum::<f64>().sqrt()),
        }
    }

    /// ψ(r) = sup_{|u| > r} |K(u)|.
    pub fn decay_envelope(&self, r: f64) -> f64 {
        let r = r.max(0.0);
        match *self {
            Kernel::Gaussian { .. } | Kernel::Epanechnikov { .. } => self.radial_value(r),
            Kernel::HigherOrder4 { dim } => {
                let d = dim as f64;
                let pos = if r * r < d + 2.0 { self.radial_value(r) } else { 0.0 };
                let neg_peak = (d + 4.0).sqrt().max(r);
                pos.max(self.radial_value(neg_peak).abs())
            }
            Kernel::AdversarialRadial(p) => adversarial_envelope(&p, r),
            Kernel::ProductOf1D { dim, factor } => match factor {
                Factor1D::Gaussian => Kernel::Gaussian { dim }.radial_value(r),
                Factor1D::Epanechnikov => {
                    let d = dim as f64;
                    factor.eval(r / d.sqrt()).powi(dim as i32)
                }
                Factor1D::HigherOrder4 => product_envelope_scan(self, r),
            },
        }
    }

    /// Radial pieces covering [r_lo, r_hi] ∩ support, in ascending order.
    pub fn radial_segments(&self, r_lo: f64, r_hi: f64) -> Vec<RadialSegment> {
        let r_lo = r_lo.max(0.0);
        let plain = |knots: &[f64]| -> Vec<RadialSegment> {
            knots
                .windows(2)
                .filter_map(|w| RadialSegment::plain(w[0], w[1]).clipped(r_lo, r_hi))
                .collect()
        };
        match *self {
            Kernel::Gaussian { .. } => plain(&[0.0, 3.0, 6.0, GAUSSIAN_CUTOFF]),
            Kernel::Epanechnikov { .. } => plain(&[0.0, 1.0]),
            Kernel::HigherOrder4 { dim } => {
                let z = (dim as f64 + 2.0).sqrt();
                plain(&[0.0, z, 6.0, GAUSSIAN_CUTOFF])
            }
            Kernel::AdversarialRadial(p) => {
                if r_hi < 1.5 {
                    return Vec::new();
                }
                let first = (r_lo.floor() as u64).saturating_sub(1).max(2);
                let last = (r_hi.ceil() as u64).saturating_add(1).min(p.n_max);
                (first..=last)
                    .filter_map(|n| {
                        RadialSegment::spike(n as f64, p.half_width(n), p.amplitude(n)).clipped(r_lo, r_hi)
                    })
                    .collect()
            }
            Kernel::ProductOf1D { .. } => Vec::new(),
        }
    }

    /// ∫ g(u)·K(u) du over the kernel support (d ≤ 3).
    pub fn integrate_against<G>(&self, g: &G, opts: &QuadOptions) -> Result<QuadratureResult>
    where
        G: Fn(&[f64]) -> f64 + Sync,
    {
        let d = self.dim();
        if d > 3 {
            return Err(Error::InvalidParameter(format!("kernel quadrature supports d <= 3, got {d}")));
        }
        match self {
            Kernel::ProductOf1D { factor, .. } => {
                let knots = factor.knots();
                let cells = box_cells(&vec![knots; d]);
                integrate_cells(cells, &|_, u: &[f64]| self.eval_unchecked(u) * g(u), opts)
            }
            _ => {
                let charts: Vec<PolarChart> = self
                    .radial_segments(0.0, f64::INFINITY)
                    .into_iter()
                    .flat_map(|seg| {
                        AngularDomain::full_sphere(d)
                            .into_iter()
                            .map(move |angular| PolarChart { radial: seg, angular, tag: 0 })
                    })
                    .collect();
                integrate_polar(self, &charts, &|_, u, k| k * g(u), opts)
            }
        }
    }

    /// μ_K(j) = ∫ |u|^j |K(u)| du.
    pub fn moment(&self, j: usize) -> Result<MomentValue> {
        if j > MAX_MOMENT_ORDER {
            return Err(Error::InvalidParameter(format!(
                "moment order {j} exceeds maximum {MAX_MOMENT_ORDER}"
            )));
        }
        let d = self.dim();
        let opts = QuadOptions::for_dim(1).with_tol(1e-13, 1e-15);
        let radial = |bps: &[f64]| -> Result<MomentValue> {
            let k = |r: f64| self.radial_value(r).abs();
            let res = integrate_radial(&k, d, j, bps, &opts)?;
            Ok(MomentValue { value: res.value, converged: res.converged })
        };
        match *self {
            Kernel::Gaussian { .. } => {
                let h = d as f64 / 2.0;
                let g = statrs::function::gamma::ln_gamma(h + j as f64 / 2.0) - statrs::function::gamma::ln_gamma(h);
                Ok(MomentValue { value: 2f64.powf(j as f64 / 2.0) * g.exp(), converged: true })
            }
            Kernel::Epanechnikov { .. } => radial(&[1.0]),
            Kernel::HigherOrder4 { .. } => radial(&[(d as f64 + 2.0).sqrt(), 6.0, GAUSSIAN_CUTOFF]),
            Kernel::AdversarialRadial(p) => adversarial_moment(&p, j),
            Kernel::ProductOf1D { factor, .. } => {
                if d > 3 {
                    return Err(Error::InvalidParameter("product kernel moments need d <= 3".into()));
                }
                let cells = box_cells(&vec![factor.knots(); d]);
                let o = QuadOptions::for_dim(d).with_tol(1e-10, 1e-13);
                let res = integrate_cells(
                    cells,
                    &|_, u: &[f64]| {
                        let r = u.iter().map(|x| x * x).sum::<f64>().sqrt();
                        r.powi(j as i32) * self.eval_unchecked(u).abs()
                    },
                    &o,
                )?;
                Ok(MomentValue { value: res.value, converged: res.converged })
            }
        }
    }

    /// Checks unit mass and vanishing mixed moments ∫u^α K for 1 ≤ |α| < v;
    /// also reports the |α| = v moments.
    pub fn verify_order(&self, v: u32) -> Result<OrderReport> {
        let d = self.dim();
        if d > 3 {
            return Err(Error::InvalidParameter("order verification supports d <= 3".into()));
        }
        if v < 1 {
            return Err(Error::InvalidParameter("order must be >= 1".into()));
        }
        let opts = QuadOptions::for_dim(d).with_tol(1e-12, 1e-13);
        let mass = self.integrate_against(&|_| 1.0, &opts)?;
        if !mass.converged {
            return Err(Error::QuadratureFailed(format!("kernel mass did not converge: {mass:?}")));
        }
        let mut moments = Vec::new();
        for total in 1..=v {
            for alpha in multi_indices(d, total) {
                let res = self.integrate_against(
                    &|u: &[f64]| u.iter().zip(&alpha).map(|(x, &a)| x.powi(a as i32)).product(),
                    &opts,
                )?;
                if !res.converged {
                    return Err(Error::QuadratureFailed(format!("moment {alpha:?} did not converge: {res:?}")));
                }
                let must_vanish = total < v;
                moments.push(MixedMoment {
                    pass: !must_vanish || res.value.abs() <= ORDER_TOL,
                    alpha,
                    value: res.value,
                    must_vanish,
                });
            }
        }
        let mass_pass = (mass.value - 1.0).abs() <= ORDER_TOL;
        let leading_nonzero = moments.iter().any(|m| !m.must_vanish && m.value.abs() > ORDER_TOL);
        let order_verified = mass_pass && moments.iter().all(|m| m.pass);
        Ok(OrderReport { order: v, mass: mass.value, mass_pass, moments, order_verified, leading_nonzero })
    }

    pub fn spec(&self) -> KernelSpec {
        let mut params = KernelParams::default();
        match *self {
            Kernel::ProductOf1D { factor, .. } => params.factor = Some(factor),
            Kernel::AdversarialRadial(p) => {
                params.p = Some(p.p);
                params.ell = Some(p.ell);
                params.n_max = Some(p.n_max);
                params.c = Some(p.c);
            }
            _ => {}
        }
        KernelSpec { kind: self.kind(), dim: self.dim(), params }
    }
}

fn adversarial_envelope(p: &AdversarialParams, r: f64) -> f64 {
    let peak = E.recip();
    let mut best: f64 = 0.0;
    // spike that may contain r
    let n = r.round().max(2.0);
    if n <= p.n_max as f64 {
        let nu = n as u64;
        let s = p.half_width(nu);
        if r >= n - s && r < n + s {
            let v = if r < n { p.amplitude(nu) * peak } else { p.profile(r) };
            best = best.max(v);
        }
    }
    // first spike centre strictly beyond r
    let next = (r.floor() + 1.0).max(2.0);
    if next <= p.n_max as f64 {
        best = best.max(p.amplitude(next as u64) * peak);
    }
    best
}

fn adversarial_moment(p: &AdversarialParams, j: usize) -> Result<MomentValue> {
    let n = p.n_max;
    let s1 = p.radial_series(j, n);
    let s2 = p.radial_series(j, 2 * n);
    let s4 = p.radial_series(j, 4 * n);
    let d1 = s2 - s1;
    let d2 = s4 - s2;
    // Increments that stay significant and do not shrink under doubling
    // mean the tail never settles; rounding-level increments are ignored.
    let significant = d1 > DOUBLING_TOL * s2.abs();
    if !s4.is_finite() || (significant && d2 >= 0.99 * d1) {
        return Err(Error::MomentDiverged {
            order: j,
            detail: format!("spike series partial sums {s1:e}, {s2:e}, {s4:e} do not settle"),
        });
    }
    Ok(MomentValue { value: s1, converged: (d1.abs() <= DOUBLING_TOL * s2.abs()) })
}

fn product_envelope_scan(kernel: &Kernel, r: f64) -> f64 {
    let d = kernel.dim();
    let radii: Vec<f64> = (0..=400).map(|i| r + GAUSSIAN_CUTOFF * i as f64 / 400.0).collect();
    let mut best: f64 = 0.0;
    let mut u = vec![0.0; d];
    let mut visit = |dir: &[f64]| {
        for &rho in &radii {
            for k in 0..d {
                u[k] = rho * dir[k];
            }
            best = best.max(kernel.eval_unchecked(&u).abs());
        }
    };
    match d {
        1 => {
            visit(&[1.0]);
            visit(&[-1.0]);
        }
        2 => {
            for i in 0..720 {
                let t = 2.0 * PI * i as f64 / 720.0;
                visit(&[t.cos(), t.sin()]);
            }
        }
        _ => {
            for i in 0..=90 {
                let phi = PI * i as f64 / 90.0;
                for k in 0..180 {
                    let t = 2.0 * PI * k as f64 / 180.0;
                    let mut dir = vec![0.0; d];
                    dir[0] = phi.sin() * t.cos();
                    dir[1] = phi.sin() * t.sin();
                    dir[2] = phi.cos();
                    visit(&dir);
                }
            }
        }
    }
    best
}

/// Tensor grid of cells from per-axis sorted knots.
pub(crate) fn box_cells(knots: &[Vec<f64>]) -> Vec<Cell> {
    let mut cells = vec![Cell::new(Vec::new(), Vec::new(), 0)];
    for axis in knots {
        let mut next = Vec::with_capacity(cells.len() * axis.len());
        for c in &cells {
            for w in axis.windows(2) {
                let mut lo = c.lo.clone();
                let mut hi = c.hi.clone();
                lo.push(w[0]);
                hi.push(w[1]);
                next.push(Cell::new(lo, hi, 0));
            }
        }
        cells = next;
    }
    cells
}

/// Exponent vectors α ∈ ℕ^d with |α| = total, in lexicographic order.
pub fn multi_indices(d: usize, total: u32) -> Vec<Vec<u32>> {
    if d == 1 {
        return vec![vec![total]];
    }
    let mut out = Vec::new();
    for first in (0..=total).rev() {
        for mut rest in multi_indices(d - 1, total - first) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixedMoment {
    pub alpha: Vec<u32>,
    pub value: f64,
    pub must_vanish: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderReport {
    pub order: u32,
    pub mass: f64,
    pub mass_pass: bool,
    pub moments: Vec<MixedMoment>,
    pub order_verified: bool,
    /// Some moment of total degree `order` is non-zero, i.e. the order is exact.
    pub leading_nonzero: bool,
}

/// JSON form `{kind, dim, params}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub dim: usize,
    #[serde(default)]
    pub params: KernelParams,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factor: Option<Factor1D>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ell: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_max: Option<u64>,
    /// Normalization constant; computed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
}

impl KernelSpec {
    pub fn build(&self) -> Result<Kernel> {
        let dim = self.dim;
        if dim == 0 {
            return Err(Error::InvalidParameter("kernel dimension must be >= 1".into()));
        }
        Ok(match self.kind {
            KernelKind::Gaussian => Kernel::gaussian(dim),
            KernelKind::Epanechnikov => Kernel::epanechnikov(dim),
            KernelKind::HigherOrder4 => Kernel::higher_order4(dim),
            KernelKind::ProductOf1D => Kernel::product(
                dim,
                self.params.factor.ok_or_else(|| {
                    Error::InvalidParameter("product_of_1d kernel needs params.factor".into())
                })?,
            ),
            KernelKind::AdversarialRadial => {
                let p = self.params.p.ok_or_else(|| {
                    Error::InvalidParameter("adversarial_radial kernel needs params.p".into())
                })?;
                let base = AdversarialParams::new(p, self.params.ell.unwrap_or(0), dim)?
                    .with_n_max(self.params.n_max.unwrap_or(DEFAULT_N_MAX));
                match self.params.c {
                    Some(c) => {
                        let params = AdversarialParams { c, ..base };
                        params.validate()?;
                        Kernel::AdversarialRadial(params)
                    }
                    None => Kernel::AdversarialRadial(normalize_adversarial(base)?),
                }
            }
        })
    }
}
