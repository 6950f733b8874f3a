//! Deterministic adaptive Gauss–Legendre quadrature on unions of boxes.
//!
//! Every integral in the crate funnels through [`integrate_cells`]: a global
//! adaptive scheme that keeps a priority queue of tensor-product cells, scores
//! each cell by the difference between its own Gauss–Legendre rule and the sum
//! of the same rule on its `2^d` dyadic children, and bisects the worst cell
//! until the summed error estimate meets the tolerance.
//!
//! Cells carry a `chart` index so callers can integrate in local coordinates
//! (for example one chart per kernel spike) and still share one error budget.

mod convolution;

pub use convolution::{convolve_at, convolve_power_at};

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::PI;
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::summation::CompensatedSum;

/// Tolerances and limits for the adaptive engine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_depth: u32,
    pub max_cells: usize,
    /// Gauss–Legendre nodes per axis.
    pub nodes: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self::for_dim(1)
    }
}

impl QuadOptions {
    pub fn for_dim(d: usize) -> Self {
        let (rel_tol, nodes) = match d {
            0 | 1 => (1e-9, 10),
            2 => (1e-7, 8),
            _ => (1e-6, 6),
        };
        Self { rel_tol, abs_tol: 1e-13, max_depth: 40, max_cells: 400_000, nodes }
    }

    pub fn with_tol(mut self, rel_tol: f64, abs_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self.abs_tol = abs_tol;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.rel_tol >= 0.0 && self.abs_tol >= 0.0 && self.rel_tol + self.abs_tol > 0.0) {
            return Err(Error::InvalidParameter(
                "quadrature tolerances must be non-negative and not both zero".into(),
            ));
        }
        if !(2..=64).contains(&self.nodes) {
            return Err(Error::InvalidParameter("nodes per axis must be in 2..=64".into()));
        }
        Ok(())
    }

    pub fn tolerance_for(&self, value: f64) -> f64 {
        self.abs_tol.max(self.rel_tol * value.abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureResult {
    pub value: f64,
    pub error_estimate: f64,
    pub nodes_used: u64,
    pub converged: bool,
}

impl QuadratureResult {
    pub fn zero() -> Self {
        Self { value: 0.0, error_estimate: 0.0, nodes_used: 0, converged: true }
    }

    /// Turns a non-converged result into [`Error::MaxSubdivisionsExceeded`].
    pub fn require_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::MaxSubdivisionsExceeded {
                value: self.value,
                error_estimate: self.error_estimate,
            })
        }
    }
}

/// Axis-aligned box in the integration coordinates of `chart`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub chart: usize,
}

impl Cell {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, chart: usize) -> Self {
        debug_assert_eq!(lo.len(), hi.len());
        Self { lo, hi, chart }
    }

    pub fn interval(lo: f64, hi: f64, chart: usize) -> Self {
        Self::new(vec![lo], vec![hi], chart)
    }

    fn dim(&self) -> usize {
        self.lo.len()
    }

    fn children(&self) -> Vec<Cell> {
        let d = self.dim();
        (0..1usize << d)
            .map(|mask| {
                let mut lo = self.lo.clone();
                let mut hi = self.hi.clone();
                for k in 0..d {
                    let mid = 0.5 * (self.lo[k] + self.hi[k]);
                    if mask >> k & 1 == 0 {
                        hi[k] = mid;
                    } else {
                        lo[k] = mid;
                    }
                }
                Cell { lo, hi, chart: self.chart }
            })
            .collect()
    }
}

/// Integration region for [`integrate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegionSpec {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
    Annulus { center: Vec<f64>, inner: f64, outer: f64 },
}

impl RegionSpec {
    pub fn dim(&self) -> usize {
        match self {
            RegionSpec::Box { lo, .. } => lo.len(),
            RegionSpec::Ball { center, .. } | RegionSpec::Annulus { center, .. } => center.len(),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            RegionSpec::Box { lo, hi } => {
                lo.len() == hi.len() && !lo.is_empty() && lo.iter().zip(hi).all(|(a, b)| a < b)
            }
            RegionSpec::Ball { center, radius } => !center.is_empty() && *radius > 0.0,
            RegionSpec::Annulus { center, inner, outer } => {
                !center.is_empty() && *inner >= 0.0 && outer > inner
            }
        };
        if !ok {
            return Err(Error::InvalidParameter(format!("degenerate region {self:?}")));
        }
        Ok(())
    }
}

/// Gauss–Legendre nodes and weights on [-1, 1], ascending.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    let mf = m as f64;
    for i in 0..m.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (mf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(m, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(m, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[m - 1 - i] = x;
        weights[i] = w;
        weights[m - 1 - i] = w;
    }
    if m % 2 == 1 {
        nodes[m / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(m: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=m {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = m as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

fn cached_rule(m: usize) -> &'static (Vec<f64>, Vec<f64>) {
    static RULES: OnceLock<Vec<(Vec<f64>, Vec<f64>)>> = OnceLock::new();
    let rules = RULES.get_or_init(|| (0..=64).map(gauss_legendre).collect());
    &rules[m]
}

/// Tensor GL rule on one cell: (value, ∫|f| estimate).
fn tensor_rule<F>(f: &F, cell: &Cell, rule: &(Vec<f64>, Vec<f64>), point: &mut [f64]) -> (f64, f64)
where
    F: Fn(usize, &[f64]) -> f64,
{
    let d = cell.dim();
    let (nodes, weights) = rule;
    let m = nodes.len();
    let half: Vec<f64> = (0..d).map(|k| 0.5 * (cell.hi[k] - cell.lo[k])).collect();
    let mid: Vec<f64> = (0..d).map(|k| 0.5 * (cell.hi[k] + cell.lo[k])).collect();
    let jac: f64 = half.iter().product();
    let total = m.pow(d as u32);
    let mut idx = vec![0usize; d];
    let mut acc = CompensatedSum::new();
    let mut abs_acc = 0.0;
    for _ in 0..total {
        let mut w = jac;
        for k in 0..d {
            point[k] = mid[k] + half[k] * nodes[idx[k]];
            w *= weights[idx[k]];
        }
        let v = f(cell.chart, &point[..d]);
        acc.add(w * v);
        abs_acc += (w * v).abs();
        for k in 0..d {
            idx[k] += 1;
            if idx[k] < m {
                break;
            }
            idx[k] = 0;
        }
    }
    (acc.value(), abs_acc)
}

struct LiveCell {
    cell: Cell,
    depth: u32,
    value: f64,
    error: f64,
    abs_value: f64,
    child_values: Vec<f64>,
    seq: u64,
}

impl PartialEq for LiveCell {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for LiveCell {}
impl PartialOrd for LiveCell {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for LiveCell {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error
            .total_cmp(&other.error)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

fn evaluate_cell<F>(f: &F, cell: Cell, coarse: Option<f64>, m: usize, depth: u32, seq: u64) -> (LiveCell, u64)
where
    F: Fn(usize, &[f64]) -> f64,
{
    let rule = cached_rule(m);
    let d = cell.dim();
    let mut point = vec![0.0; d];
    let per_rule = m.pow(d as u32) as u64;
    let mut used = 0;
    let coarse = match coarse {
        Some(c) => c,
        None => {
            used += per_rule;
            tensor_rule(f, &cell, rule, &mut point).0
        }
    };
    let mut child_values = Vec::with_capacity(1 << d);
    let mut fine = CompensatedSum::new();
    let mut abs_value = 0.0;
    for child in cell.children() {
        let (v, a) = tensor_rule(f, &child, rule, &mut point);
        used += per_rule;
        fine.add(v);
        abs_value += a;
        child_values.push(v);
    }
    let value = fine.value();
    let error = (value - coarse).abs();
    let error = if error.is_nan() { f64::INFINITY } else { error };
    (
        LiveCell { cell, depth, value, error, abs_value, child_values, seq },
        used,
    )
}

const ROUNDOFF_FACTOR: f64 = 50.0 * f64::EPSILON;

/// Global adaptive integration of `f(chart, x)` over the union of `cells`.
///
/// Never fails on non-convergence: the best estimate is returned with
/// `converged = false` (callers decide whether that is fatal).
pub fn integrate_cells<F>(cells: Vec<Cell>, f: &F, opts: &QuadOptions) -> Result<QuadratureResult>
where
    F: Fn(usize, &[f64]) -> f64 + Sync,
{
    opts.validate()?;
    if cells.is_empty() {
        return Ok(QuadratureResult::zero());
    }
    let m = opts.nodes;
    let evaluated: Vec<(LiveCell, u64)> = cells
        .into_par_iter()
        .enumerate()
        .map(|(i, c)| evaluate_cell(f, c, None, m, 0, i as u64))
        .collect();

    let mut next_seq = evaluated.len() as u64;
    let mut nodes_used: u64 = 0;
    let mut heap = BinaryHeap::with_capacity(evaluated.len());
    let mut done: Vec<LiveCell> = Vec::new();
    let mut total_value = 0.0;
    let mut total_error = 0.0;
    for (c, used) in evaluated {
        nodes_used += used;
        total_value += c.value;
        total_error += c.error;
        heap.push(c);
    }

    let mut converged = false;
    loop {
        if total_error <= opts.tolerance_for(total_value) {
            converged = true;
            break;
        }
        if heap.len() + done.len() >= opts.max_cells {
            break;
        }
        let Some(worst) = heap.pop() else { break };
        if !worst.error.is_finite() && worst.depth >= opts.max_depth {
            done.push(worst);
            break;
        }
        if worst.depth >= opts.max_depth || worst.error <= ROUNDOFF_FACTOR * worst.abs_value {
            done.push(worst);
            continue;
        }
        total_value -= worst.value;
        total_error -= worst.error;
        let children = worst.cell.children();
        for (child, coarse) in children.into_iter().zip(worst.child_values) {
            let (c, used) = evaluate_cell(f, child, Some(coarse), m, worst.depth + 1, next_seq);
            next_seq += 1;
            nodes_used += used;
            total_value += c.value;
            total_error += c.error;
            heap.push(c);
        }
        if !total_error.is_finite() {
            total_error = heap.iter().chain(done.iter()).map(|c| c.error).sum();
        }
    }

    // Canonical final reduction, independent of pop order.
    let mut all: Vec<LiveCell> = heap.into_vec();
    all.append(&mut done);
    all.sort_by_key(|c| c.seq);
    let value = all.iter().map(|c| c.value).collect::<CompensatedSum>().value();
    let error_estimate = all.iter().map(|c| c.error).sum::<f64>();
    let converged = converged || error_estimate <= opts.tolerance_for(value);
    Ok(QuadratureResult { value, error_estimate, nodes_used, converged })
}

/// Integrates a plain function over a box, ball or annulus (d ≤ 3).
///
/// Balls and annuli are mapped to polar (d = 2) or spherical (d = 3)
/// coordinates; in d = 1 they become one or two intervals.
pub fn integrate<F>(f: &F, region: &RegionSpec, opts: &QuadOptions) -> Result<QuadratureResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    region.validate()?;
    let d = region.dim();
    if d > 3 {
        return Err(Error::InvalidParameter(format!(
            "tensor quadrature supports d <= 3, got {d}"
        )));
    }
    match region {
        RegionSpec::Box { lo, hi } => {
            integrate_cells(vec![Cell::new(lo.clone(), hi.clone(), 0)], &|_, x: &[f64]| f(x), opts)
        }
        RegionSpec::Ball { center, radius } => integrate_shell(f, center, 0.0, *radius, opts),
        RegionSpec::Annulus { center, inner, outer } => {
            integrate_shell(f, center, *inner, *outer, opts)
        }
    }
}

fn integrate_shell<F>(f: &F, center: &[f64], inner: f64, outer: f64, opts: &QuadOptions) -> Result<QuadratureResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let d = center.len();
    match d {
        1 => {
            let c = center[0];
            let cells = vec![
                Cell::interval(c - outer, c - inner, 0),
                Cell::interval(c + inner, c + outer, 0),
            ];
            integrate_cells(cells, &|_, x: &[f64]| f(x), opts)
        }
        2 => {
            let g = |_: usize, p: &[f64]| {
                let (r, t) = (p[0], p[1]);
                let x = [center[0] + r * t.cos(), center[1] + r * t.sin()];
                r * f(&x)
            };
            integrate_cells(vec![Cell::new(vec![inner, 0.0], vec![outer, 2.0 * PI], 0)], &g, opts)
        }
        _ => {
            let g = |_: usize, p: &[f64]| {
                let (r, phi, theta) = (p[0], p[1], p[2]);
                let s = phi.sin();
                let x = [
                    center[0] + r * s * theta.cos(),
                    center[1] + r * s * theta.sin(),
                    center[2] + r * phi.cos(),
                ];
                r * r * s * f(&x)
            };
            integrate_cells(
                vec![Cell::new(vec![inner, 0.0, 0.0], vec![outer, PI, 2.0 * PI], 0)],
                &g,
                opts,
            )
        }
    }
}

/// Surface area of the unit sphere S^{d-1}: 2π^{d/2}/Γ(d/2).
pub fn sphere_area(d: usize) -> f64 {
    let h = d as f64 / 2.0;
    2.0 * PI.powf(h) / statrs::function::gamma::gamma(h)
}

/// Volume of the unit ball in R^d.
pub fn ball_volume(d: usize) -> f64 {
    sphere_area(d) / d as f64
}

const MAX_DOUBLINGS: usize = 64;

/// S_{d-1}·∫₀^∞ r^{d+j-1}·profile(r) dr.
///
/// The segments between consecutive `breakpoints` are integrated together;
/// the tail beyond the last breakpoint is extended by doubling the upper
/// limit until the added piece is below tolerance. Breakpoints must cover
/// every feature the adaptive rule could otherwise miss (spikes).
pub fn integrate_radial<F>(
    profile: &F,
    d: usize,
    j: usize,
    breakpoints: &[f64],
    opts: &QuadOptions,
) -> Result<QuadratureResult>
where
    F: Fn(f64) -> f64 + Sync,
{
    if d == 0 {
        return Err(Error::InvalidParameter("dimension must be >= 1".into()));
    }
    let mut knots: Vec<f64> = std::iter::once(0.0)
        .chain(breakpoints.iter().copied().filter(|&b| b > 0.0))
        .collect();
    if knots.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter("breakpoints must be sorted".into()));
    }
    knots.dedup();
    let power = (d + j - 1) as i32;
    let g = |_: usize, p: &[f64]| p[0].powi(power) * profile(p[0]);

    let cells: Vec<Cell> = knots.windows(2).map(|w| Cell::interval(w[0], w[1], 0)).collect();
    let mut total = integrate_cells(cells, &g, opts)?;
    let mut lo = *knots.last().unwrap();
    let mut hi = if lo > 0.0 { 2.0 * lo } else { 1.0 };
    let mut settled = false;
    for _ in 0..MAX_DOUBLINGS {
        let piece = integrate_cells(vec![Cell::interval(lo, hi, 0)], &g, opts)?;
        total.value += piece.value;
        total.error_estimate += piece.error_estimate;
        total.nodes_used += piece.nodes_used;
        total.converged &= piece.converged;
        if !total.value.is_finite() {
            break;
        }
        if piece.value.abs() <= opts.tolerance_for(total.value) {
            settled = true;
            break;
        }
        lo = hi;
        hi *= 2.0;
    }
    if !settled {
        return Err(Error::MomentDiverged {
            order: j,
            detail: format!("radial tail did not settle by r = {hi:e}"),
        });
    }
    let s = sphere_area(d);
    total.value *= s;
    total.error_estimate *= s;
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> QuadOptions {
        QuadOptions::for_dim(1).with_tol(1e-13, 1e-14)
    }

    #[test]
    fn legendre_rule_is_exact_for_degree_2m_minus_1() {
        for m in [2, 5, 8, 10, 16] {
            let (x, w) = gauss_legendre(m);
            for deg in 0..(2 * m) {
                let q: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((q - exact).abs() < 1e-13, "m={m} deg={deg} q={q}");
            }
        }
    }

    #[test]
    fn constant_over_unit_square() {
        let r = integrate(
            &|_: &[f64]| 1.0,
            &RegionSpec::Box { lo: vec![0.0, 0.0], hi: vec![1.0, 1.0] },
            &QuadOptions::for_dim(2),
        )
        .unwrap();
        assert!((r.value - 1.0).abs() < 1e-12);
        assert!(r.converged);
    }

    #[test]
    fn gaussian_over_wide_interval() {
        let phi = |x: &[f64]| (-0.5 * x[0] * x[0]).exp() / (2.0 * PI).sqrt();
        let r = integrate(&phi, &RegionSpec::Box { lo: vec![-8.0], hi: vec![8.0] }, &opts()).unwrap();
        assert!((r.value - 1.0).abs() < 1e-10, "{r:?}");
    }

    #[test]
    fn square_over_unit_interval() {
        let r = integrate(&|x: &[f64]| x[0] * x[0], &RegionSpec::Box { lo: vec![0.0], hi: vec![1.0] }, &opts())
            .unwrap();
        assert!((r.value - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn ball_areas_and_volumes() {
        let one = |_: &[f64]| 1.0;
        let disk = integrate(&one, &RegionSpec::Ball { center: vec![0.3, -1.0], radius: 1.0 }, &QuadOptions::for_dim(2))
            .unwrap();
        assert!((disk.value - PI).abs() < 1e-10);
        let ball = integrate(&one, &RegionSpec::Ball { center: vec![0.0; 3], radius: 2.0 }, &QuadOptions::for_dim(3))
            .unwrap();
        assert!((ball.value - 4.0 / 3.0 * PI * 8.0).abs() < 1e-8);
        let seg = integrate(&one, &RegionSpec::Annulus { center: vec![1.0], inner: 0.5, outer: 2.0 }, &opts()).unwrap();
        assert!((seg.value - 3.0).abs() < 1e-13);
    }

    #[test]
    fn sphere_constants() {
        assert!((sphere_area(1) - 2.0).abs() < 1e-14);
        assert!((sphere_area(2) - 2.0 * PI).abs() < 1e-13);
        assert!((sphere_area(3) - 4.0 * PI).abs() < 1e-13);
        assert!((ball_volume(2) - PI).abs() < 1e-13);
    }

    #[test]
    fn radial_gaussian_normalization() {
        let k = |r: f64| (-0.5 * r * r).exp() / (2.0 * PI).sqrt();
        let r = integrate_radial(&k, 1, 0, &[], &opts()).unwrap();
        assert!((r.value - 1.0).abs() < 1e-12, "{r:?}");
    }

    #[test]
    fn radial_indicator_gives_disk_area() {
        let k = |r: f64| if r <= 1.0 { 1.0 } else { 0.0 };
        let r = integrate_radial(&k, 2, 0, &[1.0], &opts()).unwrap();
        assert!((r.value - PI).abs() < 1e-12);
    }

    #[test]
    fn radial_heavy_tail_diverges() {
        let k = |r: f64| 1.0 / (1.0 + r);
        let err = integrate_radial(&k, 1, 0, &[], &opts()).unwrap_err();
        assert!(matches!(err, Error::MomentDiverged { .. }));
    }

    #[test]
    fn non_convergence_is_reported() {
        let tight = QuadOptions { max_cells: 4, ..opts() };
        let r = integrate(&|x: &[f64]| (1.0 / (x[0] + 1e-9)).sin(), &RegionSpec::Box { lo: vec![0.0], hi: vec![1.0] }, &tight)
            .unwrap();
        assert!(!r.converged);
        assert!(r.require_converged().is_err());
    }

    #[test]
    fn region_additivity_ball_plus_annulus() {
        let f = |x: &[f64]| (-(x[0] * x[0] + 2.0 * x[1] * x[1])).exp() * (1.0 + x[0]);
        let o = QuadOptions::for_dim(2).with_tol(1e-10, 1e-13);
        let c = vec![0.2, 0.1];
        let inner = integrate(&f, &RegionSpec::Ball { center: c.clone(), radius: 0.4 }, &o).unwrap();
        let shell = integrate(&f, &RegionSpec::Annulus { center: c.clone(), inner: 0.4, outer: 3.0 }, &o).unwrap();
        let whole = integrate(&f, &RegionSpec::Ball { center: c, radius: 3.0 }, &o).unwrap();
        let slack = inner.error_estimate + shell.error_estimate + whole.error_estimate + 1e-12;
        assert!((inner.value + shell.value - whole.value).abs() <= slack);
    }
}
