//! One function per subcommand. Each resolves its parameter record,
//! validates paths, computes, and returns the artifacts to write.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use kdebias_core::bias_analysis::{bias_report, bias_scaling_study, mse_study, BiasReport, NORMAL_REFERENCE};
use kdebias_core::densities::ComponentSpec;
use kdebias_core::estimator::kde_estimate;
use kdebias_core::kernels::{KernelParams, MomentValue, OrderReport, MAX_MOMENT_ORDER};
use kdebias_core::lower_bound_lab::{
    blowup_sweep, geometric, moment_finiteness_report, spike_decay_deviation, FarPlacement, ScheduleKind,
};
use kdebias_core::report::{fmt_float, to_csv_bytes};
use kdebias_core::{
    AdversarialParams, BandwidthSpec, DensitySpec, Error, Kernel, KernelKind, KernelSpec, QuadOptions, SampleSet,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::config::{require_input, require_output, resolve, sibling_csv, QuadConfig};
use crate::output::{report_json, Artifacts};

/// Global settings shared by every command.
pub struct RunContext {
    pub seed: u64,
    pub quad: QuadConfig,
    pub file_params: Map<String, Value>,
}

/// What a command hands back to `main`.
pub struct Outcome {
    pub artifacts: Artifacts,
    pub summary: Vec<String>,
    /// Printed to stdout when no output file was requested.
    pub stdout: Option<Vec<u8>>,
}

#[derive(Serialize)]
struct Resolved<'a, P: Serialize> {
    seed: u64,
    quad: QuadOptions,
    params: &'a P,
}

fn gaussian_kernel() -> KernelSpec {
    KernelSpec { kind: KernelKind::Gaussian, dim: 1, params: KernelParams::default() }
}

fn standard_normal() -> DensitySpec {
    DensitySpec::GaussianMixture {
        dim: 1,
        components: vec![ComponentSpec { weight: 1.0, mean: vec![0.0], cov: vec![vec![1.0]] }],
    }
}

fn build_kernel(spec: &KernelSpec) -> Result<Kernel> {
    spec.build().context("building kernel")
}

fn check_dims(kernel: &Kernel, density_dim: usize, points: &[Vec<f64>]) -> Result<()> {
    let d = kernel.dim();
    if density_dim != d {
        bail!(Error::DimensionMismatch { expected: d, got: density_dim });
    }
    if let Some(p) = points.iter().find(|p| p.len() != d) {
        bail!(Error::DimensionMismatch { expected: d, got: p.len() });
    }
    Ok(())
}

fn point_label(x: &[f64]) -> String {
    let parts: Vec<String> = x.iter().map(|v| format!("{v}")).collect();
    format!("({})", parts.join(","))
}

// ---------------------------------------------------------------- kernel-info

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelInfoParams {
    pub kernel: KernelSpec,
    /// Highest absolute moment μ_K(j) to tabulate.
    pub max_moment: usize,
    /// Order to verify through mixed moments; skipped when absent.
    pub order: Option<u32>,
    /// Radii at which the decay envelope is tabulated.
    pub envelope_radii: Vec<f64>,
    pub out: Option<PathBuf>,
}

impl Default for KernelInfoParams {
    fn default() -> Self {
        Self {
            kernel: gaussian_kernel(),
            max_moment: 4,
            order: None,
            envelope_radii: vec![0.0, 0.5, 1.0, 2.0, 4.0, 8.0],
            out: None,
        }
    }
}

#[derive(Serialize)]
struct MomentEntry {
    j: usize,
    value: Option<f64>,
    converged: bool,
    error: Option<String>,
}

#[derive(Serialize)]
struct EnvelopeEntry {
    r: f64,
    psi: f64,
}

#[derive(Serialize)]
struct KernelInfo {
    kind: KernelKind,
    dim: usize,
    declared_order: Option<u32>,
    support_radius: f64,
    radial: bool,
    symmetric: bool,
    non_negative: bool,
    adversarial: Option<AdversarialParams>,
    moments: Vec<MomentEntry>,
    order_report: Option<OrderReport>,
    envelope: Vec<EnvelopeEntry>,
}

pub fn kernel_info(ctx: &RunContext, flags: Map<String, Value>) -> Result<Outcome> {
    let p: KernelInfoParams = resolve(&ctx.file_params, flags)?;
    if let Some(out) = &p.out {
        require_output(out)?;
    }
    if p.max_moment > MAX_MOMENT_ORDER {
        bail!(Error::InvalidParameter(format!("max_moment must be <= {MAX_MOMENT_ORDER}")));
    }
    let kernel = build_kernel(&p.kernel)?;
    let quad = ctx.quad.apply(QuadOptions::for_dim(kernel.dim()))?;
    let moments = (0..=p.max_moment)
        .map(|j| match kernel.moment(j) {
            Ok(MomentValue { value, converged }) => Ok(MomentEntry { j, value: Some(value), converged, error: None }),
            Err(e @ Error::MomentDiverged { .. }) => {
                Ok(MomentEntry { j, value: None, converged: false, error: Some(e.to_string()) })
            }
            Err(e) => Err(e),
        })
        .collect::<kdebias_core::Result<Vec<_>>>()?;
    let order_report = p.order.map(|v| kernel.verify_order(v)).transpose()?;
    let info = KernelInfo {
        kind: kernel.kind(),
        dim: kernel.dim(),
        declared_order: kernel.declared_order(),
        support_radius: kernel.support_radius(),
        radial: kernel.is_radial(),
        symmetric: kernel.is_symmetric(),
        non_negative: kernel.is_non_negative(),
        adversarial: match kernel {
            Kernel::AdversarialRadial(a) => Some(a),
            _ => None,
        },
        moments,
        order_report,
        envelope: p.envelope_radii.iter().map(|&r| EnvelopeEntry { r, psi: kernel.decay_envelope(r) }).collect(),
    };
    let mut summary = vec![format!(
        "kernel-info kind={:?} dim={} declared_order={:?}",
        info.kind, info.dim, info.declared_order
    )];
    for m in &info.moments {
        summary.push(match m.value {
            Some(v) => format!("  mu_K({}) = {} converged={}", m.j, fmt_float(v), m.converged),
            None => format!("  mu_K({}) diverged", m.j),
        });
    }
    let bytes = report_json("kernel-info", &Resolved { seed: ctx.seed, quad, params: &p }, &info)?;
    let mut artifacts = Artifacts::default();
    let stdout = match &p.out {
        Some(out) => {
            artifacts.add(out.clone(), bytes);
            None
        }
        None => Some(bytes),
    };
    Ok(Outcome { artifacts, summary, stdout })
}

// ------------------------------------------------------------------- estimate

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateParams {
    pub samples: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub kernel: KernelSpec,
    pub bandwidth: Option<BandwidthSpec>,
    pub out: Option<PathBuf>,
}

impl Default for EstimateParams {
    fn default() -> Self {
        Self { samples: None, queries: None, kernel: gaussian_kernel(), bandwidth: None, out: None }
    }
}

fn required<'a, T>(value: &'a Option<T>, name: &str) -> Result<&'a T> {
    value.as_ref().ok_or_else(|| anyhow::anyhow!(Error::InvalidParameter(format!("--{name} is required"))))
}

pub fn estimate(ctx: &RunContext, flags: Map<String, Value>) -> Result<Outcome> {
    let p: EstimateParams = resolve(&ctx.file_params, flags)?;
    let samples_path = required(&p.samples, "samples")?;
    let queries_path = required(&p.queries, "queries")?;
    let out = required(&p.out, "out")?;
    require_input(samples_path)?;
    require_input(queries_path)?;
    require_output(out)?;
    let h = required(&p.bandwidth, "bandwidth")?.build()?;
    let kernel = build_kernel(&p.kernel)?;
    let samples = SampleSet::read_csv_path(samples_path)
        .with_context(|| format!("reading samples {}", samples_path.display()))?;
    let queries = SampleSet::read_csv_path(queries_path)
        .with_context(|| format!("reading queries {}", queries_path.display()))?;
    let values = kde_estimate(&samples, &kernel, &h, queries.points())?;
    let d = kernel.dim();
    let mut header: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
    header.push("estimate".into());
    let rows: Vec<Vec<String>> = queries
        .points()
        .iter()
        .zip(&values)
        .map(|(q, v)| q.iter().chain(std::iter::once(v)).map(|&x| fmt_float(x)).collect())
        .collect();
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut artifacts = Artifacts::default();
    artifacts.add(out.clone(), to_csv_bytes(&header_refs, &rows)?);
    let summary = vec![format!(
        "estimate n={} queries={} -> {}",
        samples.len(),
        queries.len(),
        out.display()
    )];
    Ok(Outcome { artifacts, summary, stdout: None })
}

// ---------------------------------------------------------------- bias-report

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BiasReportParams {
    pub kernel: KernelSpec,
    pub density: DensitySpec,
    /// Full bandwidth matrices; ignored when `h` is given.
    pub bandwidths: Vec<BandwidthSpec>,
    /// Scalar bandwidths h·I.
    pub h: Option<Vec<f64>>,
    pub queries: Vec<Vec<f64>>,
    /// Expansion order.
    pub k: usize,
    /// Split radius; ‖h‖^{1/2} when absent.
    pub delta: Option<f64>,
    pub out: Option<PathBuf>,
    pub csv: Option<PathBuf>,
}

impl Default for BiasReportParams {
    fn default() -> Self {
        Self {
            kernel: gaussian_kernel(),
            density: standard_normal(),
            bandwidths: Vec::new(),
            h: Some(vec![0.5]),
            queries: vec![vec![0.0]],
            k: 2,
            delta: None,
            out: None,
            csv: None,
        }
    }
}

fn bandwidth_list(d: usize, h: &Option<Vec<f64>>, mats: &[BandwidthSpec]) -> Result<Vec<BandwidthSpec>> {
    let list: Vec<BandwidthSpec> = match h {
        Some(scalars) => scalars
            .iter()
            .map(|&s| BandwidthSpec((0..d).map(|i| (0..d).map(|j| if i == j { s } else { 0.0 }).collect()).collect()))
            .collect(),
        None => mats.to_vec(),
    };
    if list.is_empty() {
        bail!(Error::InvalidParameter("no bandwidths given".into()));
    }
    Ok(list)
}

pub fn bias_report_cmd(ctx: &RunContext, flags: Map<String, Value>) -> Result<Outcome> {
    let p: BiasReportParams = resolve(&ctx.file_params, flags)?;
    let out = required(&p.out, "out")?;
    require_output(out)?;
    let csv_path = p.csv.clone().unwrap_or_else(|| sibling_csv(out));
    require_output(&csv_path)?;
    let kernel = build_kernel(&p.kernel)?;
    let model = p.density.build().context("building density")?;
    check_dims(&kernel, model.dim(), &p.queries)?;
    let d = kernel.dim();
    let quad = ctx.quad.apply(QuadOptions::for_dim(d))?;
    let bandwidths = bandwidth_list(d, &p.h, &p.bandwidths)?;
    let hs = bandwidths.iter().map(|b| b.build()).collect::<kdebias_core::Result<Vec<_>>>()?;
    let cells: Vec<(usize, usize)> =
        (0..hs.len()).flat_map(|i| (0..p.queries.len()).map(move |q| (i, q))).collect();
    let reports: Vec<BiasReport> = cells
        .par_iter()
        .map(|&(i, q)| {
            bias_report(&kernel, &hs[i], &model, &p.queries[q], p.k, p.delta, &quad).with_context(|| {
                format!("cell h={:?} x={}", bandwidths[i].0, point_label(&p.queries[q]))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = reports
        .iter()
        .map(|r| {
            format!(
                "bias-report |h|={} x={} bias={} remainder={} bound={} ok={}",
                fmt_float(r.h_norm),
                point_label(&r.x_query),
                fmt_float(r.exact_bias),
                fmt_float(r.empirical_remainder),
                fmt_float(r.bound_total * r.h_norm.powi(r.k as i32)),
                r.bound_satisfied
            )
        })
        .collect();
    let mut header: Vec<String> = vec!["bandwidth_index".into(), "h_norm".into()];
    header.extend((1..=d).map(|i| format!("x{i}")));
    header.extend(
        [
            "exact_bias",
            "moment_sum",
            "empirical_remainder",
            "delta",
            "tail_term",
            "taylor_term",
            "bound_total",
            "margin_ratio",
            "bound_satisfied",
        ]
        .map(String::from),
    );
    let rows: Vec<Vec<String>> = cells
        .iter()
        .zip(&reports)
        .map(|(&(i, _), r)| {
            let mut row = vec![i.to_string(), fmt_float(r.h_norm)];
            row.extend(r.x_query.iter().map(|&v| fmt_float(v)));
            row.extend(
                [
                    r.exact_bias,
                    r.moment_terms.iter().sum(),
                    r.empirical_remainder,
                    r.delta_used,
                    r.bound_components.tail_term,
                    r.bound_components.taylor_term,
                    r.bound_total,
                    r.margin_ratio,
                ]
                .map(fmt_float),
            );
            row.push(r.bound_satisfied.to_string());
            row
        })
        .collect();
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut artifacts = Artifacts::default();
    artifacts.add(out.clone(), report_json("bias-report", &Resolved { seed: ctx.seed, quad, params: &p }, &reports)?);
    artifacts.add(csv_path, to_csv_bytes(&header_refs, &rows)?);
    Ok(Outcome { artifacts, summary, stdout: None })
}

// --------------------------------------------------------------- bias-scaling

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BiasScalingParams {
    pub kernel: KernelSpec,
    pub density: DensitySpec,
    pub queries: Vec<Vec<f64>>,
    pub h_start: f64,
    pub h_ratio: f64,
    pub h_steps: usize,
    pub out: Option<PathBuf>,
    pub csv: Option<PathBuf>,
}

impl Default for BiasScalingParams {
    fn default() -> Self {
        Self {
            kernel: gaussian_kernel(),
            density: standard_normal(),
            queries: vec![vec![0.0]],
            h_start: 0.25,
            h_ratio: 0.5,
            h_steps: 6,
            out: None,
            csv: None,
        }
    }
}

/// Default tolerances for scaling fits: the smallest biases are tiny, so
/// the usual relative tolerance is tightened by four orders of magnitude.
pub fn scaling_quad(d: usize) -> QuadOptions {
    let base = QuadOptions::for_dim(d);
    base.with_tol(base.rel_tol * 1e-4, 1e-15)
}

pub fn bias_scaling(ctx: &RunContext, flags: Map<String, Value>) -> Result<Outcome> {
    let p: BiasScalingParams = resolve(&ctx.file_params, flags)?;
    let out = required(&p.out, "out")?;
    require_output(out)?;
    let csv_path = p.csv.clone().unwrap_or_else(|| sibling_csv(out));
    require_output(&csv_path)?;
    let kernel = build_kernel(&p.kernel)?;
    let model = p.density.build().context("building density")?;
    check_dims(&kernel, model.dim(), &p.queries)?;
    let quad = ctx.quad.apply(scaling_quad(kernel.dim()))?;
    let hs = geometric(p.h_start, p.h_ratio, p.h_steps);
    let studies = p
        .queries
        .iter()
        .map(|x| {
            bias_scaling_study(&kernel, &model, x, &hs, &quad)
                .with_context(|| format!("cell x={}", point_label(x)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut summary = Vec::new();
    let mut rows = Vec::new();
    for (qi, s) in studies.iter().enumerate() {
        for pt in &s.points {
            summary.push(format!(
                "bias-scaling x={} h={} bias={} included={}",
                point_label(&s.x_query),
                fmt_float(pt.h),
                fmt_float(pt.exact_bias),
                pt.included
            ));
            rows.push(vec![
                qi.to_string(),
                fmt_float(pt.h),
                fmt_float(pt.exact_bias),
                fmt_float(pt.error_estimate),
                pt.included.to_string(),
            ]);
        }
        summary.push(format!(
            "bias-scaling x={} slope={} stderr={}",
            point_label(&s.x_query),
            fmt_float(s.fit.slope),
            fmt_float(s.fit.slope_stderr)
        ));
    }
    let mut artifacts = Artifacts::default();
    artifacts.add(out.clone(), report_json("bias-scaling", &Resolved { seed: ctx.seed, quad, params: &p }, &studies)?);
    artifacts.add(
        csv_path,
        to_csv_bytes(&["query_index", "h", "exact_bias", "error_estimate", "included"], &rows)?,
    );
    Ok(Outcome { artifacts, summary, stdout: None })
}

// ---------------------------------------------------------------- mse-scaling

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MseScalingParams {
    pub kernel: KernelSpec,
    pub density: DensitySpec,
    pub query: Vec<f64>,
    pub n_values: Vec<u64>,
    pub replicates: usize,
    /// Multiplier of σ̂ in h(n) = c0·σ̂·n^{−1/(4+d)}.
    pub c0: f64,
    pub out: Option<PathBuf>,
    pub csv: Option<PathBuf>,
}

impl Default for MseScalingParams {
    fn default() -> Self {
        Self {
            kernel: gaussian_kernel(),
            density: standard_normal(),
            query: vec![0.0],
            n_values: (10..=17).map(|e| 1u64 << e).collect(),
            replicates: 200,
            c0: NORMAL_REFERENCE,
            out: None,
            csv: None,
        }
    }
}

pub fn mse_scaling(ctx: &RunContext, flags: Map<String, Value>) -> Result<Outcome> {
    let p: MseScalingParams = resolve(&ctx.file_params, flags)?;
    let out = required(&p.out, "out")?;
    require_output(out)?;
    let csv_path = p.csv.clone().unwrap_or_else(|| sibling_csv(out));
    require_output(&csv_path)?;
    let kernel = build_kernel(&p.kernel)?;
    let model = p.density.build().context("building density")?;
    check_dims(&kernel, model.dim(), std::slice::from_ref(&p.query))?;
    let quad = ctx.quad.apply(QuadOptions::for_dim(kernel.dim()))?;
    let study = mse_study(&kernel, &model, &p.query, &p.n_values, p.replicates, ctx.seed, p.c0)?;
    let mut summary: Vec<String> = study
        .rows
        .iter()
        .map(|r| format!("mse-scaling n={} h={} mse={}", r.n, fmt_float(r.mean_h), fmt_float(r.mse)))
        .collect();
    summary.push(format!(
        "mse-scaling slope={} bootstrap_stderr={} predicted={}",
        fmt_float(study.fit.slope),
        fmt_float(study.slope_stderr_bootstrap),
        fmt_float(study.predicted_slope)
    ));
    let rows: Vec<Vec<String>> = study
        .rows
        .iter()
        .map(|r| {
            vec![r.n.to_string(), fmt_float(r.mean_h), fmt_float(r.mse), fmt_float(r.mse_stderr), fmt_float(r.mean_error)]
        })
        .collect();
    let mut artifacts = Artifacts::default();
    artifacts.add(out.clone(), report_json("mse-scaling", &Resolved { seed: ctx.seed, quad, params: &p }, &study)?);
    artifacts.add(csv_path, to_csv_bytes(&["n", "mean_h", "mse", "mse_stderr", "mean_error"], &rows)?);
    Ok(Outcome { artifacts, summary, stdout: None })
}

// ---------------------------------------------------------------- blowup-demo

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlacementName {
    SpikeAligned,
    Fixed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlowupParams {
    pub p: f64,
    pub ell: u32,
    pub dim: usize,
    pub n_max: u64,
    pub schedule: ScheduleKind,
    pub eps_start: f64,
    pub eps_ratio: f64,
    pub eps_steps: usize,
    pub placement: PlacementName,
    /// Used by the fixed placement only.
    pub far_radius: f64,
    /// Used by the fixed placement only.
    pub shell_width: f64,
    pub out: Option<PathBuf>,
    pub csv: Option<PathBuf>,
}

impl Default for BlowupParams {
    fn default() -> Self {
        Self {
            p: 1.0,
            ell: 2,
            dim: 2,
            n_max: kdebias_core::kernels::DEFAULT_N_MAX,
            schedule: ScheduleKind::Balanced,
            eps_start: 0.5,
            eps_ratio: 0.5,
            eps_steps: 6,
            placement: PlacementName::SpikeAligned,
            far_radius: 1.05,
            shell_width: 0.05,
            out: None,
            csv: None,
        }
    }
}

fn adversarial_params(p: f64, ell: u32, dim: usize, n_max: u64) -> Result<AdversarialParams> {
    match Kernel::adversarial(p, ell, dim, n_max)? {
        Kernel::AdversarialRadial(a) => Ok(a),
        _ => unreachable!("adversarial constructor returns the spike-train kernel"),
    }
}

pub fn blowup_demo(ctx: &RunContext, flags: Map<String, Value>) -> Result<Outcome> {
    let p: BlowupParams = resolve(&ctx.file_params, flags)?;
    let out = required(&p.out, "out")?;
    require_output(out)?;
    let csv_path = p.csv.clone().unwrap_or_else(|| sibling_csv(out));
    require_output(&csv_path)?;
    let params = adversarial_params(p.p, p.ell, p.dim, p.n_max)?;
    let quad = ctx.quad.apply(QuadOptions::for_dim(p.dim))?;
    let placement = match p.placement {
        PlacementName::SpikeAligned => FarPlacement::SpikeAligned,
        PlacementName::Fixed => FarPlacement::Fixed { radius: p.far_radius, width: p.shell_width },
    };
    let eps = geometric(p.eps_start, p.eps_ratio, p.eps_steps);
    let run = blowup_sweep(params, p.schedule, &eps, placement, &quad)?;
    let mut summary: Vec<String> = run
        .steps
        .iter()
        .map(|s| {
            format!(
                "blowup-demo eps={} value={} predicted={} converged={} envelope_ok={}",
                fmt_float(s.eps),
                fmt_float(s.value),
                fmt_float(s.predicted),
                s.converged,
                s.envelope_holds
            )
        })
        .collect();
    summary.push(format!(
        "blowup-demo slope={} predicted_slope={} increasing={}",
        fmt_float(run.fit.slope),
        fmt_float(run.predicted_slope),
        run.strictly_increasing
    ));
    let rows: Vec<Vec<String>> = run
        .steps
        .iter()
        .map(|s| {
            vec![
                fmt_float(s.eps),
                fmt_float(s.value),
                fmt_float(s.predicted),
                fmt_float(s.error_estimate),
                s.converged.to_string(),
                fmt_float(s.lower_envelope),
            ]
        })
        .collect();
    let mut artifacts = Artifacts::default();
    artifacts.add(out.clone(), report_json("blowup-demo", &Resolved { seed: ctx.seed, quad, params: &p }, &run)?);
    artifacts.add(
        csv_path,
        to_csv_bytes(&["eps", "value", "predicted", "error_estimate", "converged", "lower_envelope"], &rows)?,
    );
    Ok(Outcome { artifacts, summary, stdout: None })
}

// -------------------------------------------------------------------- moments

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MomentsParams {
    pub p: f64,
    pub ell: u32,
    pub dim: usize,
    pub n_max: u64,
    /// Highest order; defaults to ell.
    pub j_max: Option<usize>,
    pub out: Option<PathBuf>,
}

impl Default for MomentsParams {
    fn default() -> Self {
        Self { p: 1.0, ell: 2, dim: 1, n_max: kdebias_core::kernels::DEFAULT_N_MAX, j_max: None, out: None }
    }
}

#[derive(Serialize)]
struct MomentsResult {
    params: AdversarialParams,
    rows: Vec<kdebias_core::lower_bound_lab::MomentRow>,
    spike_decay_deviation: f64,
}

pub fn moments(ctx: &RunContext, flags: Map<String, Value>) -> Result<Outcome> {
    let p: MomentsParams = resolve(&ctx.file_params, flags)?;
    if let Some(out) = &p.out {
        require_output(out)?;
    }
    let params = adversarial_params(p.p, p.ell, p.dim, p.n_max)?;
    let rows = moment_finiteness_report(&params, p.j_max.unwrap_or(p.ell as usize))?;
    let result = MomentsResult { params, spike_decay_deviation: spike_decay_deviation(&params), rows };
    let mut summary: Vec<String> = result
        .rows
        .iter()
        .map(|r| {
            format!(
                "moments j={} value={} rel_change={} converged={}",
                r.j,
                fmt_float(r.value),
                fmt_float(r.rel_change),
                r.converged
            )
        })
        .collect();
    summary.push(format!("moments spike_decay_deviation={}", fmt_float(result.spike_decay_deviation)));
    let quad = ctx.quad.apply(QuadOptions::for_dim(1))?;
    let bytes = report_json("moments", &Resolved { seed: ctx.seed, quad, params: &p }, &result)?;
    let mut artifacts = Artifacts::default();
    let stdout = match &p.out {
        Some(out) => {
            artifacts.add(out.clone(), bytes);
            None
        }
        None => Some(bytes),
    };
    Ok(Outcome { artifacts, summary, stdout })
}
