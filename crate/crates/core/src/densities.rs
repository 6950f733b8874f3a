//! Target densities with analytic derivative tensors and seeded samplers.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::SampleSet;
use crate::kernels::bump;
use crate::linalg::{norm, symmetric_eigen, Matrix};
use crate::quadrature::{integrate, integrate_radial, QuadOptions, RegionSpec};

/// Highest derivative order with analytic tensors for Gaussian mixtures.
pub const MAX_DERIV_ORDER: usize = 6;
/// Mixture components are treated as supported on the ball of this many
/// standard deviations (omitted mass < 1e-20 for d ≤ 3).
pub const COMPONENT_RADIUS_SDS: f64 = 10.0;

const SUP_NORM_SAFETY: f64 = 1.05;
const OP_NORM_DIRECTIONS: usize = 64;
const ZOOM_ROUNDS: usize = 7;
const MASS_TOL: f64 = 1e-6;
const FAR_MASS_TOL: f64 = 1e-8;

/// Symmetric j-tensor stored densely with d^j entries, index
/// i₁·d^{j−1} + … + i_j.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTensor {
    pub dim: usize,
    pub order: usize,
    pub data: Vec<f64>,
}

impl SymTensor {
    fn zeros(dim: usize, order: usize) -> Self {
        Self { dim, order, data: vec![0.0; dim.pow(order as u32)] }
    }

    /// Index tuple of flat position `flat`.
    pub fn indices(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.order];
        for k in (0..self.order).rev() {
            idx[k] = flat % self.dim;
            flat /= self.dim;
        }
        idx
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[idx.iter().fold(0, |acc, &i| acc * self.dim + i)]
    }

    /// T(v, …, v)
    pub fn contract(&self, v: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (flat, &t) in self.data.iter().enumerate() {
            if t == 0.0 {
                continue;
            }
            let mut w = t;
            let mut f = flat;
            for _ in 0..self.order {
                w *= v[f % self.dim];
                f /= self.dim;
            }
            acc += w;
        }
        acc
    }

    /// Euclidean operator norm sup_{|v|=1} |T(v,…,v)|: exact for order ≤ 2
    /// and for d = 1, otherwise the best of 64 seeded random directions and
    /// the coordinate axes.
    pub fn op_norm(&self) -> f64 {
        match self.order {
            0 => self.data[0].abs(),
            1 => norm(&self.data),
            2 => {
                let rows: Vec<Vec<f64>> = self.data.chunks(self.dim).map(|c| c.to_vec()).collect();
                let m = Matrix::from_rows(&rows).expect("square").symmetrized();
                symmetric_eigen(&m).values.iter().fold(0.0, |a: f64, l| a.max(l.abs()))
            }
            _ if self.dim == 1 => self.data[0].abs(),
            _ => {
                let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
                let mut best: f64 = 0.0;
                for axis in 0..self.dim {
                    let mut e = vec![0.0; self.dim];
                    e[axis] = 1.0;
                    best = best.max(self.contract(&e).abs());
                }
                for _ in 0..OP_NORM_DIRECTIONS {
                    let mut v: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
                    let n = norm(&v);
                    v.iter_mut().for_each(|x| *x /= n);
                    best = best.max(self.contract(&v).abs());
                }
                best
            }
        }
    }

    fn axpy(&mut self, a: f64, other: &SymTensor) {
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += a * y;
        }
    }
}

/// One weighted Gaussian N(mean, cov).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub cov: Matrix,
    precision: Matrix,
    /// L with L·Lᵀ = cov.
    factor: Matrix,
    log_norm: f64,
    max_sd: f64,
}

impl GaussianComponent {
    pub fn new(weight: f64, mean: Vec<f64>, cov: Matrix) -> Result<Self> {
        let d = mean.len();
        if d == 0 || cov.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, got: cov.dim() });
        }
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(Error::InvalidParameter(format!("component weight must be > 0, got {weight}")));
        }
        let asym = cov.max_relative_asymmetry();
        if !(asym <= 1e-12) {
            return Err(Error::NotSymmetric { max_asymmetry: asym });
        }
        let cov = cov.symmetrized();
        let eig = symmetric_eigen(&cov);
        let min = *eig.values.last().unwrap();
        if !(min > 0.0) {
            return Err(Error::NotPositiveDefinite { min_eigenvalue: min });
        }
        let mut precision = Matrix::zeros(d);
        let mut factor = Matrix::zeros(d);
        for i in 0..d {
            for j in 0..d {
                precision[(i, j)] =
                    (0..d).map(|k| eig.vectors[(i, k)] * eig.vectors[(j, k)] / eig.values[k]).sum();
                factor[(i, j)] = eig.vectors[(i, j)] * eig.values[j].sqrt();
            }
        }
        let log_det: f64 = eig.values.iter().map(|l| l.ln()).sum();
        let log_norm = -0.5 * (d as f64 * (2.0 * PI).ln() + log_det);
        Ok(Self { weight, mean, cov, precision, factor, log_norm, max_sd: eig.values[0].sqrt() })
    }

    fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Unweighted density.
    fn density(&self, x: &[f64]) -> f64 {
        let diff: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        self.density_at_offset(&diff)
    }

    #[inline]
    fn density_at_offset(&self, diff: &[f64]) -> f64 {
        let d = diff.len();
        let mut q = 0.0;
        for i in 0..d {
            let mut row = 0.0;
            for j in 0..d {
                row += self.precision[(i, j)] * diff[j];
            }
            q += row * diff[i];
        }
        (self.log_norm - 0.5 * q).exp()
    }

    /// D^j of the unweighted density via the multivariate Hermite recursion
    /// H_{S+i} = −y_i·H_S − Σ_{a∈S} P_{i a}·H_{S∖a}, with y = P(x − μ).
    fn deriv_tensor(&self, x: &[f64], order: usize) -> SymTensor {
        let d = self.dim();
        let diff: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        let y = self.precision.mul_vec(&diff);
        let mut prev2 = SymTensor::zeros(d, 0);
        let mut prev = SymTensor { dim: d, order: 0, data: vec![1.0] };
        for j in 1..=order {
            let mut next = SymTensor::zeros(d, j);
            for flat in 0..next.data.len() {
                let idx = next.indices(flat);
                let last = idx[j - 1];
                let head = &idx[..j - 1];
                let mut v = -y[last] * prev.get(head);
                for m in 0..j - 1 {
                    let mut rest: Vec<usize> = head.to_vec();
                    rest.remove(m);
                    v -= self.precision[(last, idx[m])] * prev2.get(&rest);
                }
                next.data[flat] = v;
            }
            prev2 = prev;
            prev = next;
        }
        let dens = self.density(x);
        prev.data.iter_mut().for_each(|v| *v *= dens);
        prev
    }

    fn sample_into<R: Rng>(&self, rng: &mut R, out: &mut [f64]) {
        let z: Vec<f64> = (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect();
        let lz = self.factor.mul_vec(&z);
        for (o, (m, v)) in out.iter_mut().zip(self.mean.iter().zip(lz)) {
            *o = m + v;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    pub dim: usize,
    pub components: Vec<GaussianComponent>,
}

impl GaussianMixture {
    pub fn new(components: Vec<GaussianComponent>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::InvalidParameter("mixture needs at least one component".into()))?;
        let dim = first.dim();
        if let Some(bad) = components.iter().find(|c| c.dim() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, got: bad.dim() });
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!("mixture weights sum to {total}, expected 1")));
        }
        let mix = Self { dim, components };
        if dim <= 3 {
            mix.check_mass()?;
        }
        Ok(mix)
    }

    fn check_mass(&self) -> Result<()> {
        let d = self.dim;
        let r = COMPONENT_RADIUS_SDS;
        let opts = QuadOptions::for_dim(d).with_tol(1e-9, 1e-12);
        let mut total = 0.0;
        for c in &self.components {
            // |det L| = sqrt(det cov)
            let det = (-c.log_norm - 0.5 * d as f64 * (2.0 * PI).ln()).exp();
            let res = integrate(
                &|z: &[f64]| {
                    let x: Vec<f64> = c.factor.mul_vec(z).iter().zip(&c.mean).map(|(a, b)| a + b).collect();
                    c.density(&x) * det
                },
                &RegionSpec::Box { lo: vec![-r; d], hi: vec![r; d] },
                &opts,
            )?;
            total += c.weight * res.value;
        }
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::QuadratureFailed(format!("mixture integrates to {total}")));
        }
        Ok(())
    }

    /// Standard normal in d dimensions.
    pub fn standard(d: usize) -> Self {
        Self::isotropic(&[(1.0, vec![0.0; d], 1.0)]).expect("valid")
    }

    /// Components N(mean, σ²I) given as (weight, mean, σ).
    pub fn isotropic(parts: &[(f64, Vec<f64>, f64)]) -> Result<Self> {
        let comps = parts
            .iter()
            .map(|(w, m, s)| {
                let d = m.len();
                GaussianComponent::new(*w, m.clone(), Matrix::diagonal(&vec![s * s; d]))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(comps)
    }
}

/// Member of the class of densities that share a fixed f₀ on the unit ball.
///
/// The density is `inner_mass`·N(0, σ²I) plus a C^∞ bump carrying the
/// remaining mass on the ball of diameter `shell_width` whose nearest point
/// is at `far_radius` along `far_direction`. On the unit ball it equals the
/// Gaussian part, which is f₀. The Gaussian is not truncated at the unit
/// sphere: a jump there would cut through every kernel chart and stall the
/// adaptive quadrature, while outside the ball the class leaves f free.
#[derive(Debug, Clone, PartialEq)]
pub struct FarMassDensity {
    pub dim: usize,
    pub inner_sigma: f64,
    pub inner_mass: f64,
    pub far_direction: Vec<f64>,
    pub far_radius: f64,
    pub shell_width: f64,
    inner_scale: f64,
    far_center: Vec<f64>,
    bump_norm: f64,
}

impl FarMassDensity {
    pub const DEFAULT_INNER_SIGMA: f64 = 0.5;
    pub const DEFAULT_INNER_MASS: f64 = 0.5;
    pub const DEFAULT_SHELL_WIDTH: f64 = 0.05;

    pub fn new(
        dim: usize,
        inner_sigma: f64,
        inner_mass: f64,
        far_direction: Vec<f64>,
        far_radius: f64,
        shell_width: f64,
    ) -> Result<Self> {
        if dim == 0 || far_direction.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: far_direction.len() });
        }
        if !(inner_mass > 0.0 && inner_mass < 1.0) {
            return Err(Error::InvalidParameter(format!("inner mass must be in (0, 1), got {inner_mass}")));
        }
        if !(inner_sigma > 0.0) || !(shell_width > 0.0) {
            return Err(Error::InvalidParameter("inner_sigma and shell_width must be > 0".into()));
        }
        if !(far_radius >= 1.0) {
            return Err(Error::InvalidParameter(format!("far radius must be >= 1, got {far_radius}")));
        }
        let n = norm(&far_direction);
        if !(n > 0.0) {
            return Err(Error::InvalidParameter("far direction must be non-zero".into()));
        }
        let dir: Vec<f64> = far_direction.iter().map(|x| x / n).collect();
        let inner_scale = inner_mass * (2.0 * PI * inner_sigma * inner_sigma).powf(-(dim as f64) / 2.0);
        let centre_dist = far_radius + 0.5 * shell_width;
        let far_center = dir.iter().map(|x| x * centre_dist).collect();
        let unit_opts = QuadOptions::for_dim(1).with_tol(1e-14, 1e-16);
        let bump_norm = integrate_radial(&bump, dim, 0, &[1.0], &unit_opts)?.value;
        let model = Self {
            dim,
            inner_sigma,
            inner_mass,
            far_direction: dir,
            far_radius,
            shell_width,
            inner_scale,
            far_center,
            bump_norm,
        };
        if dim <= 3 {
            model.check_mass()?;
        }
        Ok(model)
    }

    pub fn with_defaults(dim: usize, far_direction: Vec<f64>) -> Result<Self> {
        let w = Self::DEFAULT_SHELL_WIDTH;
        Self::new(dim, Self::DEFAULT_INNER_SIGMA, Self::DEFAULT_INNER_MASS, far_direction, 1.0 + w, w)
    }

    pub fn far_mass(&self) -> f64 {
        1.0 - self.inner_mass
    }

    pub fn far_center(&self) -> &[f64] {
        &self.far_center
    }

    pub fn far_bump_radius(&self) -> f64 {
        0.5 * self.shell_width
    }

    /// Mass of the Gaussian part inside the unit ball, ∫_{|x|≤1} f₀.
    pub fn mass_in_unit_ball(&self) -> f64 {
        let s2 = self.inner_sigma * self.inner_sigma;
        self.inner_mass * statrs::function::gamma::gamma_lr(self.dim as f64 / 2.0, 1.0 / (2.0 * s2))
    }

    /// The Gaussian part; on the unit ball this is f₀.
    pub fn inner_pdf(&self, x: &[f64]) -> f64 {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        self.inner_scale * (-0.5 * r2 / (self.inner_sigma * self.inner_sigma)).exp()
    }

    pub fn far_pdf(&self, x: &[f64]) -> f64 {
        let off: Vec<f64> = x.iter().zip(&self.far_center).map(|(a, b)| a - b).collect();
        self.far_pdf_offset(&off)
    }

    /// Far bump at `offset` from its centre.
    #[inline]
    pub fn far_pdf_offset(&self, offset: &[f64]) -> f64 {
        let rho = self.far_bump_radius();
        let dist2: f64 = offset.iter().map(|v| v * v).sum();
        if dist2 >= rho * rho {
            return 0.0;
        }
        self.far_mass() * bump(dist2.sqrt() / rho) / (self.bump_norm * rho.powi(self.dim as i32))
    }

    fn check_mass(&self) -> Result<()> {
        let opts = QuadOptions::for_dim(self.dim).with_tol(1e-11, 1e-14);
        let inner = integrate(
            &|x: &[f64]| self.inner_pdf(x),
            &RegionSpec::Ball { center: vec![0.0; self.dim], radius: COMPONENT_RADIUS_SDS * self.inner_sigma },
            &opts,
        )?;
        // far bump in its own unit-ball coordinates
        let far = integrate(
            &|v: &[f64]| self.far_mass() * bump(norm(v)) / self.bump_norm,
            &RegionSpec::Ball { center: vec![0.0; self.dim], radius: 1.0 },
            &opts,
        )?;
        let total = inner.value + far.value;
        if (total - 1.0).abs() > FAR_MASS_TOL {
            return Err(Error::QuadratureFailed(format!("far-mass density integrates to {total}")));
        }
        Ok(())
    }

    fn sample_into<R: Rng>(&self, rng: &mut R, out: &mut [f64]) {
        let d = self.dim;
        if rng.random::<f64>() < self.inner_mass {
            for o in out.iter_mut() {
                *o = self.inner_sigma * rng.sample::<f64, _>(StandardNormal);
            }
            return;
        }
        let peak = (-1f64).exp();
        loop {
            let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let n = norm(&v);
            let radius = rng.random::<f64>().powf(1.0 / d as f64);
            v.iter_mut().for_each(|x| *x *= radius / n);
            if rng.random::<f64>() * peak < bump(radius) {
                let rho = self.far_bump_radius();
                for (o, (c, vi)) in out.iter_mut().zip(self.far_center.iter().zip(&v)) {
                    *o = c + rho * vi;
                }
                return;
            }
        }
    }
}

/// Region where part of a density lives: a ball plus the piece index that
/// [`DensityModel::piece_pdf_offset`] understands. The pieces sum to the pdf.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityPiece {
    pub center: Vec<f64>,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DensityModel {
    GaussianMixture(GaussianMixture),
    FarMass(FarMassDensity),
}

impl From<GaussianMixture> for DensityModel {
    fn from(m: GaussianMixture) -> Self {
        DensityModel::GaussianMixture(m)
    }
}

impl From<FarMassDensity> for DensityModel {
    fn from(m: FarMassDensity) -> Self {
        DensityModel::FarMass(m)
    }
}

impl DensityModel {
    pub fn dim(&self) -> usize {
        match self {
            DensityModel::GaussianMixture(m) => m.dim,
            DensityModel::FarMass(m) => m.dim,
        }
    }

    pub fn max_deriv_order(&self) -> usize {
        match self {
            DensityModel::GaussianMixture(_) => MAX_DERIV_ORDER,
            DensityModel::FarMass(_) => 0,
        }
    }

    pub fn pdf(&self, x: &[f64]) -> Result<f64> {
        self.check_len(x)?;
        Ok(self.pdf_unchecked(x))
    }

    pub fn pdf_unchecked(&self, x: &[f64]) -> f64 {
        match self {
            DensityModel::GaussianMixture(m) => m.components.iter().map(|c| c.weight * c.density(x)).sum(),
            DensityModel::FarMass(m) => m.inner_pdf(x) + m.far_pdf(x),
        }
    }

    pub fn pieces(&self) -> Vec<DensityPiece> {
        match self {
            DensityModel::GaussianMixture(m) => m
                .components
                .iter()
                .map(|c| DensityPiece { center: c.mean.clone(), radius: COMPONENT_RADIUS_SDS * c.max_sd })
                .collect(),
            DensityModel::FarMass(m) => vec![
                DensityPiece { center: vec![0.0; m.dim], radius: COMPONENT_RADIUS_SDS * m.inner_sigma },
                DensityPiece { center: m.far_center.clone(), radius: m.far_bump_radius() },
            ],
        }
    }

    /// Value of piece `piece` at `offset` from the piece centre.
    #[inline]
    pub fn piece_pdf_offset(&self, piece: usize, offset: &[f64]) -> f64 {
        match self {
            DensityModel::GaussianMixture(m) => {
                let c = &m.components[piece];
                c.weight * c.density_at_offset(offset)
            }
            DensityModel::FarMass(m) => {
                if piece == 0 {
                    m.inner_pdf(offset)
                } else {
                    m.far_pdf_offset(offset)
                }
            }
        }
    }

    /// Order-j derivative tensor of the pdf at x.
    pub fn deriv_tensor(&self, x: &[f64], j: usize) -> Result<SymTensor> {
        self.check_len(x)?;
        if j == 0 {
            return Ok(SymTensor { dim: self.dim(), order: 0, data: vec![self.pdf_unchecked(x)] });
        }
        if j > self.max_deriv_order() {
            return Err(Error::OrderUnavailable { requested: j, max: self.max_deriv_order() });
        }
        let DensityModel::GaussianMixture(m) = self else { unreachable!() };
        let mut out = SymTensor::zeros(m.dim, j);
        for c in &m.components {
            out.axpy(c.weight, &c.deriv_tensor(x, j));
        }
        Ok(out)
    }

    /// Largest ‖D^j f‖ over the closed δ-ball around `center` (no safety
    /// factor).
    ///
    /// A deterministic grid of 33^min(d,2)·9^max(d−2,0) points on the
    /// bounding box, filtered to the ball, locates the candidates; the three
    /// best are then refined by repeatedly laying the same grid over the
    /// neighbouring cells. Without the refinement the estimate for a larger
    /// ball could miss a peak that a smaller ball's grid happened to hit.
    pub fn deriv_grid_max(&self, center: &[f64], delta: f64, j: usize) -> Result<f64> {
        self.check_len(center)?;
        if !(delta >= 0.0) {
            return Err(Error::InvalidParameter(format!("delta must be >= 0, got {delta}")));
        }
        if j > self.max_deriv_order() {
            return Err(Error::OrderUnavailable { requested: j, max: self.max_deriv_order() });
        }
        let d = self.dim();
        let counts: Vec<usize> = (0..d).map(|k| if k < 2 { 33 } else { 9 }).collect();
        let limit = delta * delta * (1.0 + 1e-12);
        let scan = |mid: &[f64], half: f64| -> Result<Vec<(f64, Vec<f64>)>> {
            let total: usize = counts.iter().product();
            let mut out = Vec::with_capacity(total);
            let mut x = vec![0.0; d];
            for flat in 0..total {
                let mut f = flat;
                let mut r2 = 0.0;
                for k in 0..d {
                    let n = counts[k];
                    let i = f % n;
                    f /= n;
                    x[k] = mid[k] + half * (2.0 * i as f64 / (n - 1) as f64 - 1.0);
                    r2 += (x[k] - center[k]).powi(2);
                }
                if r2 > limit {
                    continue;
                }
                out.push((self.deriv_tensor(&x, j)?.op_norm(), x.clone()));
            }
            Ok(out)
        };
        let mut found = scan(center, delta)?;
        found.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut best = found.first().map_or(0.0, |c| c.0);
        if delta == 0.0 {
            return Ok(best);
        }
        for (_, start) in found.into_iter().take(3) {
            let mut mid = start;
            let mut half = 2.0 * delta / 8.0;
            for _ in 0..ZOOM_ROUNDS {
                let mut local = scan(&mid, half)?;
                local.sort_by(|a, b| b.0.total_cmp(&a.0));
                if let Some((v, x)) = local.into_iter().next() {
                    best = best.max(v);
                    mid = x;
                }
                half /= 8.0;
            }
        }
        Ok(best)
    }

    /// B(δ): the grid maximum times the 1.05 safety factor.
    pub fn deriv_sup_norm(&self, center: &[f64], delta: f64, j: usize) -> Result<f64> {
        Ok(SUP_NORM_SAFETY * self.deriv_grid_max(center, delta, j)?)
    }

    /// n iid points, deterministic in `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<SampleSet> {
        if n == 0 {
            return Err(Error::EmptySamples);
        }
        let d = self.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut points = Vec::with_capacity(n);
        for _ in 0..n {
            let mut p = vec![0.0; d];
            match self {
                DensityModel::GaussianMixture(m) => {
                    let mut u: f64 = rng.random();
                    let mut chosen = m.components.len() - 1;
                    for (i, c) in m.components.iter().enumerate() {
                        if u < c.weight {
                            chosen = i;
                            break;
                        }
                        u -= c.weight;
                    }
                    m.components[chosen].sample_into(&mut rng, &mut p);
                }
                DensityModel::FarMass(m) => m.sample_into(&mut rng, &mut p),
            }
            points.push(p);
        }
        let mut set = SampleSet::new(points)?;
        set.source_seed = Some(seed);
        Ok(set)
    }

    /// Largest standard deviation along any axis (pooled over components).
    pub fn marginal_sd(&self) -> f64 {
        match self {
            DensityModel::GaussianMixture(m) => {
                let d = m.dim;
                let mut worst: f64 = 0.0;
                for k in 0..d {
                    let mean: f64 = m.components.iter().map(|c| c.weight * c.mean[k]).sum();
                    let var: f64 = m
                        .components
                        .iter()
                        .map(|c| c.weight * (c.cov[(k, k)] + (c.mean[k] - mean).powi(2)))
                        .sum();
                    worst = worst.max(var.sqrt());
                }
                worst
            }
            DensityModel::FarMass(m) => m.far_radius + m.shell_width,
        }
    }

    pub fn spec(&self) -> DensitySpec {
        match self {
            DensityModel::GaussianMixture(m) => DensitySpec::GaussianMixture {
                dim: m.dim,
                components: m
                    .components
                    .iter()
                    .map(|c| ComponentSpec { weight: c.weight, mean: c.mean.clone(), cov: c.cov.to_rows() })
                    .collect(),
            },
            DensityModel::FarMass(m) => DensitySpec::FarMass {
                dim: m.dim,
                inner_sigma: Some(m.inner_sigma),
                inner_mass: Some(m.inner_mass),
                far_direction: Some(m.far_direction.clone()),
                far_radius: Some(m.far_radius),
                shell_width: Some(m.shell_width),
            },
        }
    }

    fn check_len(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSpec {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

/// JSON density description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DensitySpec {
    GaussianMixture {
        dim: usize,
        components: Vec<ComponentSpec>,
    },
    FarMass {
        dim: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        inner_sigma: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        inner_mass: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        far_direction: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        far_radius: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        shell_width: Option<f64>,
    },
}

impl DensitySpec {
    pub fn build(&self) -> Result<DensityModel> {
        match self {
            DensitySpec::GaussianMixture { dim, components } => {
                let comps = components
                    .iter()
                    .map(|c| {
                        if c.mean.len() != *dim {
                            return Err(Error::DimensionMismatch { expected: *dim, got: c.mean.len() });
                        }
                        let cov = Matrix::from_rows(&c.cov).ok_or_else(|| {
                            Error::InvalidParameter("covariance must be a square matrix".into())
                        })?;
                        GaussianComponent::new(c.weight, c.mean.clone(), cov)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(GaussianMixture::new(comps)?.into())
            }
            DensitySpec::FarMass { dim, inner_sigma, inner_mass, far_direction, far_radius, shell_width } => {
                let w = shell_width.unwrap_or(FarMassDensity::DEFAULT_SHELL_WIDTH);
                let dir = far_direction.clone().unwrap_or_else(|| {
                    let mut e = vec![0.0; *dim];
                    if let Some(first) = e.first_mut() {
                        *first = 1.0;
                    }
                    e
                });
                Ok(FarMassDensity::new(
                    *dim,
                    inner_sigma.unwrap_or(FarMassDensity::DEFAULT_INNER_SIGMA),
                    inner_mass.unwrap_or(FarMassDensity::DEFAULT_INNER_MASS),
                    dir,
                    far_radius.unwrap_or(1.0 + w),
                    w,
                )?
                .into())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const INV_SQRT_2PI: f64 = 0.3989422804014327;

    #[test]
    fn pdf_values() {
        let std = DensityModel::from(GaussianMixture::standard(1));
        assert!((std.pdf(&[0.0]).unwrap() - INV_SQRT_2PI).abs() < 1e-15);
        let mix: DensityModel =
            GaussianMixture::isotropic(&[(0.5, vec![-1.0], 1.0), (0.5, vec![1.0], 1.0)]).unwrap().into();
        let expect = INV_SQRT_2PI * (-0.5f64).exp();
        assert!((mix.pdf(&[0.0]).unwrap() - expect).abs() < 1e-15);
        assert!(matches!(mix.pdf(&[0.0, 1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn weights_must_sum_to_one() {
        let err = GaussianMixture::isotropic(&[(0.5, vec![0.0], 1.0)]).unwrap_err();
        assert!(matches!(err, Error::InvalidParameter(_)));
    }

    #[test]
    fn far_mass_agrees_with_inner_on_unit_ball() {
        let fm = FarMassDensity::with_defaults(2, vec![1.0, 0.0]).unwrap();
        let model = DensityModel::from(fm.clone());
        for i in 0..10 {
            for k in 0..10 {
                let r = i as f64 / 9.0;
                let t = 2.0 * PI * k as f64 / 10.0;
                let x = [r * t.cos(), r * t.sin()];
                assert_eq!(model.pdf(&x).unwrap(), fm.inner_pdf(&x));
            }
        }
        assert!(model.pdf(&[1.075, 0.0]).unwrap() > fm.inner_pdf(&[1.075, 0.0]));
        assert_eq!(model.pdf(&[0.0, 1.075]).unwrap(), fm.inner_pdf(&[0.0, 1.075]));
    }

    #[test]
    fn derivative_examples() {
        let m = DensityModel::from(GaussianMixture::standard(1));
        assert_eq!(m.deriv_tensor(&[0.0], 1).unwrap().data[0], 0.0);
        assert!((m.deriv_tensor(&[0.0], 2).unwrap().data[0] + INV_SQRT_2PI).abs() < 1e-15);
        assert_eq!(m.deriv_tensor(&[0.3], 0).unwrap().data[0], m.pdf(&[0.3]).unwrap());
        // He_4(x) = x^4 - 6x^2 + 3
        let x: f64 = 0.7;
        let expect = (x.powi(4) - 6.0 * x * x + 3.0) * m.pdf(&[x]).unwrap();
        assert!((m.deriv_tensor(&[x], 4).unwrap().data[0] - expect).abs() < 1e-14);
        assert!(matches!(m.deriv_tensor(&[0.0], 7), Err(Error::OrderUnavailable { .. })));
    }

    #[test]
    fn tensors_are_symmetric() {
        let comp = GaussianComponent::new(
            1.0,
            vec![0.1, -0.2, 0.3],
            Matrix::from_rows(&[vec![1.0, 0.3, 0.1], vec![0.3, 0.8, -0.2], vec![0.1, -0.2, 1.5]]).unwrap(),
        )
        .unwrap();
        let m = DensityModel::from(GaussianMixture::new(vec![comp]).unwrap());
        for j in 2..=4 {
            let t = m.deriv_tensor(&[0.4, 0.2, -0.5], j).unwrap();
            for flat in 0..t.data.len() {
                let mut idx = t.indices(flat);
                let v = t.data[flat];
                idx.reverse();
                assert!((t.get(&idx) - v).abs() < 1e-15);
                idx.rotate_left(1);
                assert!((t.get(&idx) - v).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn second_derivative_matches_finite_differences() {
        let comp = GaussianComponent::new(
            1.0,
            vec![0.2, -0.1],
            Matrix::from_rows(&[vec![0.7, 0.2], vec![0.2, 0.5]]).unwrap(),
        )
        .unwrap();
        let m = DensityModel::from(GaussianMixture::new(vec![comp]).unwrap());
        let x = [0.3, 0.4];
        let v = [0.6, -0.8];
        let step = 1e-4;
        let at = |s: f64| m.pdf(&[x[0] + s * v[0], x[1] + s * v[1]]).unwrap();
        let fd = (at(step) - 2.0 * at(0.0) + at(-step)) / (step * step);
        let exact = m.deriv_tensor(&x, 2).unwrap().contract(&v);
        assert!((fd - exact).abs() <= 1e-5 * exact.abs(), "{fd} vs {exact}");
    }

    #[test]
    fn sup_norm_grid() {
        let m = DensityModel::from(GaussianMixture::standard(1));
        // |f''| = |x^2 - 1|·φ(x) peaks at the centre for small δ
        let b = m.deriv_grid_max(&[0.0], 0.1, 2).unwrap();
        assert!((b - INV_SQRT_2PI).abs() < 1e-15);
        // peak of |f''| off-grid: refined to the true maximum at x = 0
        let b = m.deriv_grid_max(&[1.2], 3.0, 2).unwrap();
        assert!((b - INV_SQRT_2PI).abs() < 1e-12, "{b}");
        assert!((m.deriv_sup_norm(&[0.0], 0.1, 2).unwrap() - 1.05 * INV_SQRT_2PI).abs() < 1e-15);
        let at_center = m.deriv_grid_max(&[0.5], 0.0, 2).unwrap();
        assert_eq!(at_center, m.deriv_tensor(&[0.5], 2).unwrap().op_norm());
        let mut prev = 0.0;
        for delta in [0.1, 0.5, 1.0, 2.0, 3.0] {
            let b = m.deriv_grid_max(&[1.2], delta, 2).unwrap();
            assert!(b >= prev * (1.0 - 1e-14), "{delta}: {b} < {prev}");
            prev = b;
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let m = DensityModel::from(GaussianMixture::standard(1));
        assert_eq!(m.sample(100, 7).unwrap(), m.sample(100, 7).unwrap());
        assert_ne!(m.sample(100, 7).unwrap(), m.sample(100, 8).unwrap());
        assert!(matches!(m.sample(0, 7), Err(Error::EmptySamples)));
        let n = 100_000;
        let s = m.sample(n, 42).unwrap();
        let mean: f64 = s.points().iter().map(|p| p[0]).sum::<f64>() / n as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt());
    }

    #[test]
    fn far_mass_samples_respect_support() {
        let fm = FarMassDensity::with_defaults(2, vec![0.0, 1.0]).unwrap();
        let m = DensityModel::from(fm.clone());
        let s = m.sample(20_000, 3).unwrap();
        let mut far = 0;
        for p in s.points() {
            let off: Vec<f64> = p.iter().zip(fm.far_center()).map(|(a, b)| a - b).collect();
            if norm(&off) <= fm.far_bump_radius() {
                far += 1;
                let r = norm(p);
                assert!(r >= fm.far_radius - 1e-12 && r <= fm.far_radius + fm.shell_width + 1e-12);
            }
        }
        let frac = far as f64 / 20_000.0;
        assert!((frac - 0.5).abs() < 0.02);
    }

    #[test]
    fn density_spec_json() {
        let spec: DensitySpec = serde_json::from_str(
            r#"{"kind":"gaussian_mixture","dim":1,"components":[{"weight":1.0,"mean":[0.5],"cov":[[2.0]]}]}"#,
        )
        .unwrap();
        let m = spec.build().unwrap();
        assert_eq!(m.spec(), spec);
        let spec: DensitySpec = serde_json::from_str(r#"{"kind":"far_mass","dim":2}"#).unwrap();
        let m = spec.build().unwrap();
        assert!(matches!(m, DensityModel::FarMass(_)));
    }
}
