use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use hexfusion::consensus::ConsensusOptions;
use hexfusion::field::{eval, GaussianParams, NoiseStream};
use hexfusion::harness::io::{
    create, estimate_rows, open, read_estimates_csv, read_json, trace_rows, write_estimates_csv,
    write_json, write_trace_csv,
};
use hexfusion::harness::{
    compare_methods, fuse, node_quality, run_experiment, ExperimentConfig, FusionContext,
    FusionMethod, FusionNode, HarnessError, NoiseLevel, NoiseReading, FUSED_CHANNELS,
};
use hexfusion::lattice::{generate_honeycomb, preset_twelve_node_network, HexNetwork};
use hexfusion::sensitivity::{
    closed_form_variances_with, monte_carlo_variances, numeric_oracle_variances, ClosedFormVariant,
};
use hexfusion::spacing::{minimize_spacing, sweep_lopt_map, write_sweep_csv, AxisRange};
use hexfusion::Channel;

#[derive(Parser)]
#[command(
    name = "hexfusion",
    version,
    about = "Gaussian field estimation on honeycomb sensor networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a honeycomb network and write it as JSON.
    Tessellate(TessellateArgs),
    /// Sample a noisy field on a network and invert at every inner node.
    Estimate(EstimateArgs),
    /// Error variances of the four estimated quantities.
    Sensitivity(SensitivityArgs),
    /// Edge length minimising one channel's error variance.
    OptimizeSpacing(SpacingArgs),
    /// Fuse per-node estimates by consensus.
    Fuse(FuseArgs),
    /// Run a configured multi-trial experiment.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct TessellateArgs {
    #[arg(long, required_unless_present = "preset")]
    rings: Option<usize>,
    #[arg(long)]
    edge: f64,
    /// Named layout; `paper12` is the twelve-node network with six inner nodes.
    #[arg(long, conflicts_with = "rings")]
    preset: Option<String>,
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true, default_value = "0,0")]
    origin: [f64; 2],
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    net: PathBuf,
    /// `C1,C2,m1,m2`
    #[arg(long, value_parser = parse_params, allow_hyphen_values = true)]
    truth: GaussianParams,
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SensitivityArgs {
    #[arg(long, value_parser = parse_params, allow_hyphen_values = true)]
    params: GaussianParams,
    #[arg(long)]
    edge: f64,
    #[arg(long)]
    sigma2: f64,
    /// Linearised variances from the numerically inverted Jacobian.
    #[arg(long, group = "source")]
    oracle: bool,
    /// Closed-form variances (default).
    #[arg(long, group = "source")]
    closed_form: bool,
    /// Empirical variances from N noisy inversions.
    #[arg(long, group = "source", value_name = "N")]
    monte_carlo: Option<usize>,
    /// Closed forms with the uncorrected amplitude and width prefactors.
    #[arg(long)]
    uncorrected: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SpacingArgs {
    #[arg(long)]
    channel: Channel,
    /// `C1,C2,m1,m2`; with `--sweep` only C2 is used.
    #[arg(long, value_parser = parse_params, allow_hyphen_values = true)]
    params: GaussianParams,
    /// `m1lo:m1hi:n,m2lo:m2hi:n`
    #[arg(long, value_parser = parse_sweep, allow_hyphen_values = true)]
    sweep: Option<(AxisRange, AxisRange)>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FuseArgs {
    #[arg(long)]
    method: FusionMethod,
    #[arg(long)]
    estimates: PathBuf,
    #[arg(long)]
    net: PathBuf,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    #[arg(long, default_value_t = 10_000)]
    max_iter: usize,
    /// Per-step CSV trace with columns `t,node,channel,x,s`.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Override the noise as `σ² = frac · peak` (see `--noise-reading`).
    #[arg(long)]
    noise_variance_frac: Option<f64>,
    #[arg(long, value_parser = parse_reading, requires = "noise_variance_frac", default_value = "peak")]
    noise_reading: NoiseReading,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Also write the per-channel method ranking as JSON.
    #[arg(long)]
    ranking: Option<PathBuf>,
}

fn parse_floats<const N: usize>(s: &str) -> Result<[f64; N], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}")))
        .collect::<Result<_, _>>()?;
    v.try_into()
        .map_err(|_| format!("expected {N} comma-separated numbers"))
}

fn parse_pair(s: &str) -> Result<[f64; 2], String> {
    parse_floats::<2>(s)
}

fn parse_params(s: &str) -> Result<GaussianParams, String> {
    GaussianParams::from_array(parse_floats::<4>(s)?).map_err(|e| e.to_string())
}

fn parse_sweep(s: &str) -> Result<(AxisRange, AxisRange), String> {
    let (a, b) = s
        .split_once(',')
        .ok_or("expected two ranges separated by a comma")?;
    Ok((a.parse()?, b.parse()?))
}

fn parse_reading(s: &str) -> Result<NoiseReading, String> {
    match s {
        "peak" => Ok(NoiseReading::Peak),
        "peak-squared" => Ok(NoiseReading::PeakSquared),
        _ => Err(format!("unknown noise reading `{s}` (peak, peak-squared)")),
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<(), HarnessError> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    let _ = writeln!(out);
    Ok(())
}

fn tessellate(a: TessellateArgs) -> Result<(), HarnessError> {
    let net = match (a.preset.as_deref(), a.rings) {
        (Some("paper12"), _) => preset_twelve_node_network(a.edge)?,
        (Some(other), _) => return Err(HarnessError::Config(format!("unknown preset `{other}`"))),
        (None, Some(r)) => generate_honeycomb(r, a.edge, a.origin)?,
        (None, None) => {
            return Err(HarnessError::Config(
                "either --rings or --preset is required".into(),
            ))
        }
    };
    write_json(&a.out, &net)?;
    print_json(&serde_json::json!({
        "nodes": net.len(),
        "edges": net.edges().len(),
        "inner": net.inner().len(),
    }))
}

fn estimate(a: EstimateArgs) -> Result<(), HarnessError> {
    if !(a.sigma >= 0.0 && a.sigma.is_finite()) {
        return Err(HarnessError::Config(format!(
            "sigma {} is invalid",
            a.sigma
        )));
    }
    let net: HexNetwork = read_json(&a.net)?;
    let ctx = FusionContext::new(net)?;
    let mut values: Vec<f64> = ctx.net.nodes().iter().map(|&p| eval(&a.truth, p)).collect();
    NoiseStream::new(a.seed).perturb(&mut values, a.sigma);
    let sigma2 = a.sigma * a.sigma;
    let estimates = ctx.estimate(&values);
    let nodes = ctx.fusion_nodes(&estimates, sigma2);
    let rows = estimate_rows(&ctx, &estimates, &nodes, sigma2);
    write_estimates_csv(create(&a.out)?, &rows)?;
    print_json(&serde_json::json!({
        "inner": rows.len(),
        "valid": rows.iter().filter(|r| r.valid).count(),
    }))
}

fn sensitivity(a: SensitivityArgs) -> Result<(), HarnessError> {
    if let Some(n) = a.monte_carlo {
        let report = monte_carlo_variances(a.edge, &a.params, a.sigma2.sqrt(), n, a.seed)?;
        return print_json(&report);
    }
    let set = if a.oracle {
        numeric_oracle_variances(a.edge, &a.params, a.sigma2)?
    } else {
        let variant = if a.uncorrected {
            ClosedFormVariant::Uncorrected
        } else {
            ClosedFormVariant::Corrected
        };
        closed_form_variances_with(a.edge, &a.params, a.sigma2, variant)
    };
    print_json(&set)
}

fn optimize_spacing(a: SpacingArgs) -> Result<(), HarnessError> {
    match a.sweep {
        Some((m1, m2)) => {
            let points = sweep_lopt_map(a.channel, m1, m2, a.params.c2(), 1.0)?;
            match &a.out {
                Some(path) => write_sweep_csv(create(path)?, &points)?,
                None => write_sweep_csv(std::io::stdout().lock(), &points)?,
            }
            Ok(())
        }
        None => {
            let result = minimize_spacing(a.channel, &a.params, 1.0)?;
            if let Some(path) = &a.out {
                let point = hexfusion::spacing::SweepPoint {
                    m1: a.params.m1(),
                    m2: a.params.m2(),
                    channel: a.channel,
                    l_opt: Some(result.l_opt),
                    s_at_opt: Some(result.s_at_opt),
                };
                write_sweep_csv(create(path)?, &[point])?;
            }
            print_json(&result)
        }
    }
}

#[derive(Serialize)]
struct FuseOutput {
    method: FusionMethod,
    c1: f64,
    c2: f64,
    m1: f64,
    m2: f64,
    converged: bool,
    iterations: usize,
}

fn fuse_cmd(a: FuseArgs) -> Result<(), HarnessError> {
    if a.method == FusionMethod::Raw {
        return Err(HarnessError::Config(
            "`raw` is not a fusion method here".into(),
        ));
    }
    let net: HexNetwork = read_json(&a.net)?;
    let ctx = FusionContext::new(net)?;
    let rows = read_estimates_csv(open(&a.estimates)?)?;
    let sigma2 = rows.first().map_or(0.0, |r| r.sigma2);
    let l = ctx.net.edge_length();
    let mut nodes = Vec::with_capacity(ctx.frames.len());
    for frame in &ctx.frames {
        let row = rows.iter().find(|r| r.node == frame.node).ok_or_else(|| {
            HarnessError::Config(format!("no estimate row for inner node {}", frame.node))
        })?;
        let global = row.params_global();
        let local = global.and_then(|g| g.with_center(frame.apply(g.center())).ok());
        let fallback = local.map_or([f64::INFINITY; 3], |p| node_quality(&p, l, sigma2));
        let pick = |v: Option<f64>, k: usize| {
            if global.is_some() {
                v.unwrap_or(fallback[k])
            } else {
                f64::INFINITY
            }
        };
        nodes.push(FusionNode {
            frame: *frame,
            global,
            local,
            quality: [pick(row.s_c1, 0), pick(row.s_c2, 1), pick(row.s_center, 2)],
        });
    }
    let opts = ConsensusOptions {
        tol: a.tol,
        max_iter: a.max_iter,
        record_trace: a.trace.is_some(),
        ..ConsensusOptions::default()
    };
    let run = fuse(&ctx, &nodes, a.method, sigma2, &opts)?
        .ok_or_else(|| HarnessError::Config("no node holds a valid estimate".into()))?;
    if let Some(path) = &a.trace {
        let ids: Vec<usize> = ctx.frames.iter().map(|f| f.node).collect();
        let labelled: Vec<(&str, &_)> = FUSED_CHANNELS
            .iter()
            .copied()
            .zip(run.reports.iter())
            .collect();
        write_trace_csv(create(path)?, &trace_rows(&ids, &labelled))?;
    }
    let out = FuseOutput {
        method: a.method,
        c1: run.estimate.c1,
        c2: run.estimate.c2,
        m1: run.estimate.m1,
        m2: run.estimate.m2,
        converged: run.converged,
        iterations: run.iterations,
    };
    if let Some(path) = &a.out {
        write_json(path, &out)?;
    }
    print_json(&out)
}

fn experiment(a: ExperimentArgs) -> Result<(), HarnessError> {
    let mut config: ExperimentConfig = read_json(&a.config)?;
    if let Some(frac) = a.noise_variance_frac {
        config.noise = NoiseLevel::VarianceFrac {
            variance_frac: frac,
            reading: a.noise_reading,
        };
    }
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    if let Some(trials) = a.trials {
        config.trials = trials;
    }
    let result = run_experiment(&config)?;
    write_json(&a.out, &result)?;
    if let Some(path) = &a.ranking {
        write_json(path, &compare_methods(&result)?)?;
    }
    print_json(&result.aggregates)
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Tessellate(a) => tessellate(a),
        Command::Estimate(a) => estimate(a),
        Command::Sensitivity(a) => sensitivity(a),
        Command::OptimizeSpacing(a) => optimize_spacing(a),
        Command::Fuse(a) => fuse_cmd(a),
        Command::Experiment(a) => experiment(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
