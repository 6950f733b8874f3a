mod commands;
mod config;
mod output;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{Map, Value};

use commands::{Outcome, RunContext};
use config::{parse_list, FileConfig, Flags, QuadConfig};

/// Kernel density estimation with general bandwidth matrices: exact bias,
/// remainder bounds, scaling studies and the spike-train lower-bound lab.
#[derive(Parser)]
#[command(name = "kdebias", version)]
struct Cli {
    /// JSON config file. Keys are command parameters plus `seed`, `threads`
    /// and `quad`. Command-line flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads. Results do not depend on this value.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Master RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Relative tolerance of adaptive quadrature.
    #[arg(long, global = true)]
    rel_tol: Option<f64>,
    /// Absolute tolerance of adaptive quadrature.
    #[arg(long, global = true)]
    abs_tol: Option<f64>,
    /// Maximum subdivision depth of adaptive quadrature.
    #[arg(long, global = true)]
    max_depth: Option<u32>,
    #[command(subcommand)]
    command: Command,
}

/// Kernel, density and bandwidth flags take JSON, inline or as a file path.
#[derive(Subcommand)]
enum Command {
    /// Moments, order check and decay envelope of a kernel.
    KernelInfo(KernelInfoArgs),
    /// Evaluate the estimator at query points from sample and query CSVs.
    Estimate(EstimateArgs),
    /// Exact bias, moment terms and remainder bound per bandwidth and query.
    BiasReport(BiasReportArgs),
    /// Log-log slope of the exact bias over a geometric bandwidth ladder.
    BiasScaling(BiasScalingArgs),
    /// Monte Carlo mean squared error over sample sizes.
    MseScaling(MseScalingArgs),
    /// Convolution blow-up of a spike-train kernel against a far-mass density.
    BlowupDemo(BlowupArgs),
    /// Convergence table for the radial moments of a spike-train kernel.
    Moments(MomentsArgs),
}

#[derive(Args)]
struct KernelInfoArgs {
    /// Kernel spec JSON: {"kind", "dim", "params"}.
    #[arg(long)]
    kernel: Option<String>,
    /// Highest absolute moment to tabulate.
    #[arg(long)]
    max_moment: Option<usize>,
    /// Verify the vanishing-moment conditions up to this order.
    #[arg(long)]
    order: Option<u32>,
    /// Comma-separated radii for the decay envelope.
    #[arg(long)]
    envelope_radii: Option<String>,
    /// Output JSON path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    /// Sample CSV with header x1..xd.
    #[arg(long)]
    samples: Option<PathBuf>,
    /// Query CSV with header x1..xd.
    #[arg(long)]
    queries: Option<PathBuf>,
    /// Kernel spec JSON.
    #[arg(long)]
    kernel: Option<String>,
    /// Bandwidth matrix JSON, a list of rows.
    #[arg(long)]
    bandwidth: Option<String>,
    /// Output CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BiasReportArgs {
    /// Kernel spec JSON.
    #[arg(long)]
    kernel: Option<String>,
    /// Density spec JSON.
    #[arg(long)]
    density: Option<String>,
    /// JSON list of bandwidth matrices.
    #[arg(long)]
    bandwidths: Option<String>,
    /// Comma-separated scalar bandwidths h, meaning h·I. Overrides --bandwidths.
    #[arg(long)]
    h: Option<String>,
    /// JSON list of query points.
    #[arg(long)]
    queries: Option<String>,
    /// Expansion order k.
    #[arg(long)]
    k: Option<usize>,
    /// Split radius δ; ‖h‖^(1/2) when absent.
    #[arg(long)]
    delta: Option<f64>,
    /// Output JSON path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output CSV path; next to --out when absent.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct BiasScalingArgs {
    /// Kernel spec JSON.
    #[arg(long)]
    kernel: Option<String>,
    /// Density spec JSON.
    #[arg(long)]
    density: Option<String>,
    /// JSON list of query points.
    #[arg(long)]
    queries: Option<String>,
    /// Largest bandwidth of the ladder.
    #[arg(long)]
    h_start: Option<f64>,
    /// Ratio between consecutive bandwidths.
    #[arg(long)]
    h_ratio: Option<f64>,
    /// Number of bandwidths.
    #[arg(long)]
    h_steps: Option<usize>,
    /// Output JSON path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output CSV path; next to --out when absent.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct MseScalingArgs {
    /// Kernel spec JSON.
    #[arg(long)]
    kernel: Option<String>,
    /// Density spec JSON.
    #[arg(long)]
    density: Option<String>,
    /// Query point, comma-separated.
    #[arg(long)]
    query: Option<String>,
    /// Comma-separated sample sizes.
    #[arg(long)]
    n_values: Option<String>,
    /// Monte Carlo replicates per sample size.
    #[arg(long)]
    replicates: Option<usize>,
    /// Bandwidth multiplier c0 in h = c0·σ̂·n^(−1/(4+d)).
    #[arg(long)]
    c0: Option<f64>,
    /// Output JSON path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output CSV path; next to --out when absent.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct BlowupArgs {
    /// Spike decay exponent p.
    #[arg(long)]
    p: Option<f64>,
    /// Number of finite moments ℓ.
    #[arg(long)]
    ell: Option<u32>,
    /// Dimension (1 or 2).
    #[arg(long)]
    dim: Option<usize>,
    /// Number of spikes.
    #[arg(long)]
    n_max: Option<u64>,
    /// Eigenvalue schedule: balanced or unbalanced.
    #[arg(long)]
    schedule: Option<String>,
    /// Largest ε.
    #[arg(long)]
    eps_start: Option<f64>,
    /// Ratio between consecutive ε.
    #[arg(long)]
    eps_ratio: Option<f64>,
    /// Number of ε values.
    #[arg(long)]
    eps_steps: Option<usize>,
    /// Far-mass placement: spike_aligned or fixed.
    #[arg(long)]
    placement: Option<String>,
    /// Far-mass radius for the fixed placement.
    #[arg(long)]
    far_radius: Option<f64>,
    /// Far-mass width for the fixed placement.
    #[arg(long)]
    shell_width: Option<f64>,
    /// Output JSON path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output CSV path; next to --out when absent.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct MomentsArgs {
    /// Spike decay exponent p.
    #[arg(long)]
    p: Option<f64>,
    /// Number of finite moments ℓ.
    #[arg(long)]
    ell: Option<u32>,
    /// Dimension.
    #[arg(long)]
    dim: Option<usize>,
    /// Number of spikes.
    #[arg(long)]
    n_max: Option<u64>,
    /// Highest moment order; ℓ when absent.
    #[arg(long)]
    j_max: Option<usize>,
    /// Output JSON path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn collect_flags(command: &Command) -> Result<(&'static str, Map<String, Value>)> {
    let mut f = Flags::default();
    let name = match command {
        Command::KernelInfo(a) => {
            f.set_json("kernel", a.kernel.as_deref())?;
            f.set("max_moment", a.max_moment)?;
            f.set("order", a.order)?;
            f.set("envelope_radii", a.envelope_radii.as_deref().map(parse_list::<f64>).transpose()?)?;
            f.set("out", a.out.as_ref())?;
            "kernel-info"
        }
        Command::Estimate(a) => {
            f.set("samples", a.samples.as_ref())?;
            f.set("queries", a.queries.as_ref())?;
            f.set_json("kernel", a.kernel.as_deref())?;
            f.set_json("bandwidth", a.bandwidth.as_deref())?;
            f.set("out", a.out.as_ref())?;
            "estimate"
        }
        Command::BiasReport(a) => {
            f.set_json("kernel", a.kernel.as_deref())?;
            f.set_json("density", a.density.as_deref())?;
            if a.bandwidths.is_some() && a.h.is_none() {
                // An explicit matrix list replaces the default scalar list.
                f.0.insert("h".into(), Value::Null);
            }
            f.set_json("bandwidths", a.bandwidths.as_deref())?;
            f.set("h", a.h.as_deref().map(parse_list::<f64>).transpose()?)?;
            f.set_json("queries", a.queries.as_deref())?;
            f.set("k", a.k)?;
            f.set("delta", a.delta)?;
            f.set("out", a.out.as_ref())?;
            f.set("csv", a.csv.as_ref())?;
            "bias-report"
        }
        Command::BiasScaling(a) => {
            f.set_json("kernel", a.kernel.as_deref())?;
            f.set_json("density", a.density.as_deref())?;
            f.set_json("queries", a.queries.as_deref())?;
            f.set("h_start", a.h_start)?;
            f.set("h_ratio", a.h_ratio)?;
            f.set("h_steps", a.h_steps)?;
            f.set("out", a.out.as_ref())?;
            f.set("csv", a.csv.as_ref())?;
            "bias-scaling"
        }
        Command::MseScaling(a) => {
            f.set_json("kernel", a.kernel.as_deref())?;
            f.set_json("density", a.density.as_deref())?;
            f.set("query", a.query.as_deref().map(parse_list::<f64>).transpose()?)?;
            f.set("n_values", a.n_values.as_deref().map(parse_list::<u64>).transpose()?)?;
            f.set("replicates", a.replicates)?;
            f.set("c0", a.c0)?;
            f.set("out", a.out.as_ref())?;
            f.set("csv", a.csv.as_ref())?;
            "mse-scaling"
        }
        Command::BlowupDemo(a) => {
            f.set("p", a.p)?;
            f.set("ell", a.ell)?;
            f.set("dim", a.dim)?;
            f.set("n_max", a.n_max)?;
            f.set("schedule", a.schedule.as_ref())?;
            f.set("eps_start", a.eps_start)?;
            f.set("eps_ratio", a.eps_ratio)?;
            f.set("eps_steps", a.eps_steps)?;
            f.set("placement", a.placement.as_ref())?;
            f.set("far_radius", a.far_radius)?;
            f.set("shell_width", a.shell_width)?;
            f.set("out", a.out.as_ref())?;
            f.set("csv", a.csv.as_ref())?;
            "blowup-demo"
        }
        Command::Moments(a) => {
            f.set("p", a.p)?;
            f.set("ell", a.ell)?;
            f.set("dim", a.dim)?;
            f.set("n_max", a.n_max)?;
            f.set("j_max", a.j_max)?;
            f.set("out", a.out.as_ref())?;
            "moments"
        }
    };
    Ok((name, f.0))
}

fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(path) => {
            config::require_input(path)?;
            FileConfig::load(path)?
        }
        None => FileConfig::empty(),
    };
    let file_quad = file.quad;
    let quad = QuadConfig {
        rel_tol: cli.rel_tol.or(file_quad.rel_tol),
        abs_tol: cli.abs_tol.or(file_quad.abs_tol),
        max_depth: cli.max_depth.or(file_quad.max_depth),
    };
    let ctx = RunContext { seed: cli.seed.or(file.seed).unwrap_or(0), quad, file_params: file.params };
    let threads = cli.threads.or(file.threads).unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().context("starting thread pool")?;
    let (name, flags) = collect_flags(&cli.command)?;
    let outcome: Outcome = pool.install(|| match cli.command {
        Command::KernelInfo(_) => commands::kernel_info(&ctx, flags),
        Command::Estimate(_) => commands::estimate(&ctx, flags),
        Command::BiasReport(_) => commands::bias_report_cmd(&ctx, flags),
        Command::BiasScaling(_) => commands::bias_scaling(&ctx, flags),
        Command::MseScaling(_) => commands::mse_scaling(&ctx, flags),
        Command::BlowupDemo(_) => commands::blowup_demo(&ctx, flags),
        Command::Moments(_) => commands::moments(&ctx, flags),
    })
    .with_context(|| format!("{name} failed"))?;
    outcome.artifacts.write_all()?;
    let mut stdout = std::io::stdout().lock();
    match outcome.stdout {
        Some(bytes) => stdout.write_all(&bytes)?,
        None => {
            for line in outcome.summary {
                writeln!(stdout, "{line}")?;
            }
        }
    }
    Ok(())
}

/// Exit status: 3 for numerical failures, 2 for everything else (bad
/// input, unreadable files, invalid parameters).
fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err
        .chain()
        .filter_map(|e| e.downcast_ref::<kdebias_core::Error>())
        .any(kdebias_core::Error::is_numerical);
    if numerical {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
