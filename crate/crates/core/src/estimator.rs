//! The kernel density estimator: scaled kernels and sample averages.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::bandwidth::BandwidthMatrix;
use crate::error::{Error, Result};
use crate::kernels::Kernel;
use crate::report::fmt_float;
use crate::summation::pairwise_sum;

/// n points in R^d, optionally tagged with the seed that generated them.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    dim: usize,
    points: Vec<Vec<f64>>,
    pub source_seed: Option<u64>,
}

impl SampleSet {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        let dim = points.first().ok_or(Error::EmptySamples)?.len();
        if dim == 0 {
            return Err(Error::InvalidParameter("points must have at least one coordinate".into()));
        }
        if let Some(bad) = points.iter().find(|p| p.len() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, got: bad.len() });
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("sample coordinates must be finite".into()));
        }
        Ok(Self { dim, points, source_seed: None })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    /// Reads a CSV with header `x1,…,xd` and one point per row.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers()?.clone();
        for (i, name) in headers.iter().enumerate() {
            if name.trim() != format!("x{}", i + 1) {
                return Err(Error::InvalidParameter(format!(
                    "expected column header x{}, found {name:?}",
                    i + 1
                )));
            }
        }
        let mut points = Vec::new();
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            let p = record
                .iter()
                .map(|f| {
                    f.trim().parse::<f64>().map_err(|e| {
                        Error::InvalidParameter(format!("row {}: cannot parse {f:?}: {e}", row + 1))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            points.push(p);
        }
        let set = Self::new(points)?;
        if set.dim != headers.len() {
            return Err(Error::DimensionMismatch { expected: headers.len(), got: set.dim });
        }
        Ok(set)
    }

    pub fn read_csv_path(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record((1..=self.dim).map(|i| format!("x{i}")))?;
        for p in &self.points {
            w.write_record(p.iter().map(|&v| fmt_float(v)))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// K_h(u) = |h|⁻¹·K(h⁻¹u).
pub fn scaled_kernel_eval(kernel: &Kernel, h: &BandwidthMatrix, u: &[f64]) -> Result<f64> {
    if h.dim() != kernel.dim() {
        return Err(Error::DimensionMismatch { expected: kernel.dim(), got: h.dim() });
    }
    if u.len() != kernel.dim() {
        return Err(Error::DimensionMismatch { expected: kernel.dim(), got: u.len() });
    }
    Ok(kernel.eval_unchecked(&h.apply_inverse(u)?) / h.det())
}

/// n⁻¹·Σᵢ K_h(x′ − xᵢ) for every query x′.
///
/// The samples are visited in lexicographic order of their coordinates and
/// summed with [`pairwise_sum`], so the result does not depend on the order
/// of the input, on the thread count, or on the run.
pub fn kde_estimate(
    samples: &SampleSet,
    kernel: &Kernel,
    h: &BandwidthMatrix,
    queries: &[Vec<f64>],
) -> Result<Vec<f64>> {
    let d = kernel.dim();
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    for dim in [samples.dim(), h.dim()] {
        if dim != d {
            return Err(Error::DimensionMismatch { expected: d, got: dim });
        }
    }
    if let Some(q) = queries.iter().find(|q| q.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, got: q.len() });
    }
    let order = canonical_order(samples.points());
    let inv = h.inverse();
    let inv_det = 1.0 / h.det();
    let n = samples.len() as f64;
    Ok(queries
        .par_iter()
        .map(|x| {
            let mut diff = vec![0.0; d];
            let terms: Vec<f64> = order
                .iter()
                .map(|&i| {
                    for (k, slot) in diff.iter_mut().enumerate() {
                        *slot = x[k] - samples.points[i][k];
                    }
                    kernel.eval_unchecked(&inv.mul_vec(&diff)) * inv_det
                })
                .collect();
            pairwise_sum(&terms) / n
        })
        .collect())
}

/// Indices of `points` sorted lexicographically by coordinate (total order
/// on f64; ties keep the lower index first, which only matters for exact
/// duplicates whose terms are identical anyway).
pub fn canonical_order(points: &[Vec<f64>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .iter()
            .zip(&points[b])
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    order
}
