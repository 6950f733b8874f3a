//! Kernel density estimation with general bandwidth matrices: kernels,
//! densities, the estimator, its exact bias and the bias expansion terms,
//! a remainder bound, and a lab for the spike-train lower bound.

// `!(x > 0.0)` is used on purpose: it rejects NaN along with the bad range.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops read more clearly where several arrays share the index.
#![allow(clippy::needless_range_loop)]

pub mod bandwidth;
pub mod bias_analysis;
pub mod densities;
pub mod error;
pub mod estimator;
pub mod fit;
pub mod kernels;
pub mod linalg;
pub mod lower_bound_lab;
pub mod polar;
pub mod quadrature;
pub mod report;
pub mod summation;

pub use bandwidth::{BandwidthMatrix, BandwidthSpec};
pub use densities::{DensityModel, DensitySpec, FarMassDensity, GaussianComponent, GaussianMixture, SymTensor};
pub use error::{Error, Result};
pub use estimator::{kde_estimate, scaled_kernel_eval, SampleSet};
pub use kernels::{AdversarialParams, Factor1D, Kernel, KernelKind, KernelSpec};
pub use linalg::Matrix;
pub use quadrature::{QuadOptions, QuadratureResult, RegionSpec};
