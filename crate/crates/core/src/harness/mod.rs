//! End-to-end experiments: noisy sampling of a known field, per-node
//! estimation, fusion by several methods and error bookkeeping.

mod compare;
pub mod io;

pub use compare::{
    bootstrap_median_ci, bootstrap_preference, compare_methods, median, ChannelRanking, RankEntry,
    BOOTSTRAP_RESAMPLES,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consensus::{
    average_consensus, joint_recompute, metropolis_weights, run_wise, two_channel_fusion,
    ConsensusOptions, FusionError, FusionGraph, FusionReport, S_MIN,
};
use crate::estimator::{estimate_with_frame, InversionError, LocalEstimate};
use crate::field::{eval, GaussianParams, NoiseStream, ParamError, Point};
use crate::lattice::{
    generate_honeycomb, local_frame, preset_twelve_node_network, HexNetwork, LatticeError,
    LocalFrame,
};
use crate::sensitivity::{closed_form_variances, SensitivityError};
use crate::spacing::SpacingError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Sensitivity(#[from] SensitivityError),
    #[error(transparent)]
    Spacing(#[from] SpacingError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("method comparison needs at least two methods")]
    NeedTwoMethods,
}

impl HarnessError {
    /// Stable machine-readable error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::Io { .. } => "io",
            HarnessError::Json(_) => "json",
            HarnessError::Csv(_) => "csv",
            HarnessError::Lattice(_) => "lattice",
            HarnessError::Fusion(_) => "fusion",
            HarnessError::Param(_) => "params",
            HarnessError::Sensitivity(_) => "sensitivity",
            HarnessError::Spacing(_) => "spacing",
            HarnessError::Config(_) => "config",
            HarnessError::NeedTwoMethods => "need-two-methods",
        }
    }
}

/// How the network is built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NetworkLayout {
    /// `{"preset": "paper12", "edge": 1.0}`
    Preset { preset: String, edge: f64 },
    /// `{"rings": 1, "edge": 1.0, "origin": [0, 0]}`
    Rings {
        rings: usize,
        edge: f64,
        #[serde(default)]
        origin: Point,
    },
}

impl NetworkLayout {
    pub fn build(&self) -> Result<HexNetwork, HarnessError> {
        match self {
            NetworkLayout::Preset { preset, edge } => match preset.as_str() {
                "paper12" => Ok(preset_twelve_node_network(*edge)?),
                other => Err(HarnessError::Config(format!("unknown preset `{other}`"))),
            },
            NetworkLayout::Rings {
                rings,
                edge,
                origin,
            } => Ok(generate_honeycomb(*rings, *edge, *origin)?),
        }
    }
}

/// How a "fraction of the peak" noise level is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseReading {
    /// `σ² = frac · C1`
    #[default]
    Peak,
    /// `σ² = frac · C1²`
    PeakSquared,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NoiseLevel {
    Sigma {
        sigma: f64,
    },
    VarianceFrac {
        variance_frac: f64,
        #[serde(default)]
        reading: NoiseReading,
    },
}

impl NoiseLevel {
    pub fn sigma(&self, truth: &GaussianParams) -> f64 {
        match *self {
            NoiseLevel::Sigma { sigma } => sigma,
            NoiseLevel::VarianceFrac {
                variance_frac,
                reading,
            } => match reading {
                NoiseReading::Peak => (variance_frac * truth.c1()).sqrt(),
                NoiseReading::PeakSquared => (variance_frac * truth.c1() * truth.c1()).sqrt(),
            },
        }
    }
}

/// Fusion methods. Textual form: `raw`, `average`, `two-channel`, `wise`,
/// `recompute`, `hybrid:K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum FusionMethod {
    /// No fusion; errors are the median over valid nodes.
    Raw,
    /// Metropolis (doubly stochastic) consensus: the arithmetic mean.
    Average,
    /// Inverse-variance weighting via two average consensus runs.
    TwoChannel,
    /// Variance-weighted consensus on `(x, s)`.
    Wise,
    /// Qualities recomputed from the current estimate every step.
    Recompute,
    /// Recompute, then `k` quality-only consensus steps before each update.
    Hybrid(usize),
}

impl FusionMethod {
    pub const ALL_DEFAULT: [FusionMethod; 6] = [
        FusionMethod::Raw,
        FusionMethod::Average,
        FusionMethod::TwoChannel,
        FusionMethod::Wise,
        FusionMethod::Recompute,
        FusionMethod::Hybrid(5),
    ];
}

impl fmt::Display for FusionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FusionMethod::Raw => f.write_str("raw"),
            FusionMethod::Average => f.write_str("average"),
            FusionMethod::TwoChannel => f.write_str("two-channel"),
            FusionMethod::Wise => f.write_str("wise"),
            FusionMethod::Recompute => f.write_str("recompute"),
            FusionMethod::Hybrid(k) => write!(f, "hybrid:{k}"),
        }
    }
}

impl FromStr for FusionMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "raw" => Ok(FusionMethod::Raw),
            "average" => Ok(FusionMethod::Average),
            "two-channel" => Ok(FusionMethod::TwoChannel),
            "wise" => Ok(FusionMethod::Wise),
            "recompute" => Ok(FusionMethod::Recompute),
            other => match other.strip_prefix("hybrid:") {
                Some(k) => k
                    .parse()
                    .map(FusionMethod::Hybrid)
                    .map_err(|_| format!("bad inner step count in `{other}`")),
                None => Err(format!("unknown fusion method `{other}`")),
            },
        }
    }
}

impl TryFrom<String> for FusionMethod {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<FusionMethod> for String {
    fn from(m: FusionMethod) -> String {
        m.to_string()
    }
}

fn default_tol() -> f64 {
    1e-9
}

fn default_max_iter() -> usize {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub network: NetworkLayout,
    pub truth: GaussianParams,
    pub noise: NoiseLevel,
    #[serde(default)]
    pub seed: u64,
    pub methods: Vec<FusionMethod>,
    pub trials: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

impl ExperimentConfig {
    /// The twelve-node setup: unit field, edge 1, `σ² = 0.01 · C1`.
    pub fn twelve_node_setup(center: Point, trials: usize, seed: u64) -> Self {
        ExperimentConfig {
            network: NetworkLayout::Preset {
                preset: "paper12".into(),
                edge: 1.0,
            },
            truth: GaussianParams::new(1.0, 1.0, center[0], center[1]).expect("valid truth"),
            noise: NoiseLevel::VarianceFrac {
                variance_frac: 0.01,
                reading: NoiseReading::Peak,
            },
            seed,
            methods: FusionMethod::ALL_DEFAULT.to_vec(),
            trials,
            tol: default_tol(),
            max_iter: default_max_iter(),
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.trials == 0 {
            return Err(HarnessError::Config("trials must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(HarnessError::Config(
                "at least one fusion method is required".into(),
            ));
        }
        let sigma = self.noise.sigma(&self.truth);
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(HarnessError::Config(format!(
                "noise level {sigma} is invalid"
            )));
        }
        if !(self.tol > 0.0) {
            return Err(HarnessError::Config("tol must be positive".into()));
        }
        Ok(())
    }

    pub fn consensus_options(&self) -> ConsensusOptions {
        ConsensusOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            ..ConsensusOptions::default()
        }
    }
}

/// Seed of trial `k`: SplitMix64 applied to `seed + 0x9E3779B97F4A7C15 · (k + 1)`.
pub fn trial_seed(seed: u64, trial: usize) -> u64 {
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(trial as u64 + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fused values of the four parameters. Not validated: a fused width or
/// amplitude is only as good as the inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusedEstimate {
    pub c1: f64,
    pub c2: f64,
    pub m1: f64,
    pub m2: f64,
}

/// Error channels used for comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorChannel {
    C1,
    C2,
    M1,
    M2,
    /// Euclidean distance between fused and true centre.
    Center,
}

impl ErrorChannel {
    pub const ALL: [ErrorChannel; 5] = [
        ErrorChannel::C1,
        ErrorChannel::C2,
        ErrorChannel::M1,
        ErrorChannel::M2,
        ErrorChannel::Center,
    ];
}

/// Absolute errors against the truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelErrors {
    pub c1: f64,
    pub c2: f64,
    pub m1: f64,
    pub m2: f64,
    pub center: f64,
}

impl ChannelErrors {
    pub fn of(est: &FusedEstimate, truth: &GaussianParams) -> Self {
        let (d1, d2) = (est.m1 - truth.m1(), est.m2 - truth.m2());
        ChannelErrors {
            c1: (est.c1 - truth.c1()).abs(),
            c2: (est.c2 - truth.c2()).abs(),
            m1: d1.abs(),
            m2: d2.abs(),
            center: d1.hypot(d2),
        }
    }

    pub fn get(&self, ch: ErrorChannel) -> f64 {
        match ch {
            ErrorChannel::C1 => self.c1,
            ErrorChannel::C2 => self.c2,
            ErrorChannel::M1 => self.m1,
            ErrorChannel::M2 => self.m2,
            ErrorChannel::Center => self.center,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub method: FusionMethod,
    /// `None` for [`FusionMethod::Raw`] and when the method had no input.
    pub estimate: Option<FusedEstimate>,
    pub errors: Option<ChannelErrors>,
    pub converged: bool,
    pub iterations: usize,
    /// Why fusion broke down in this trial, if it did.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub estimates: Vec<LocalEstimate>,
    pub outcomes: Vec<MethodOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSummary {
    pub channel: ErrorChannel,
    /// Trials contributing an error.
    pub count: usize,
    pub median: Option<f64>,
    pub mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodAggregate {
    pub method: FusionMethod,
    /// Trials where the method produced no estimate.
    pub failed_trials: usize,
    pub channels: Vec<ChannelSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscardStats {
    pub node_estimates: usize,
    pub invalid: usize,
    pub non_positive_measurement: usize,
    pub width_degenerate: usize,
    pub non_finite: usize,
    /// Trials in which no node produced a valid estimate.
    pub trials_without_estimate: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub sigma: f64,
    pub trials: Vec<TrialRecord>,
    pub aggregates: Vec<MethodAggregate>,
    pub discards: DiscardStats,
}

/// Everything fusion needs about one estimating node.
#[derive(Debug, Clone)]
pub struct FusionNode {
    pub frame: LocalFrame,
    pub global: Option<GaussianParams>,
    pub local: Option<GaussianParams>,
    /// Presumed variances `(C1, C2, centre)`; `+∞` for invalid estimates.
    pub quality: [f64; 3],
}

impl FusionNode {
    /// Qualities from the closed-form variances at the node's own estimate.
    pub fn from_estimate(frame: LocalFrame, est: &LocalEstimate, l: f64, sigma2: f64) -> Self {
        let quality = match est.params_local {
            Some(local) => node_quality(&local, l, sigma2),
            None => [f64::INFINITY; 3],
        };
        FusionNode {
            frame,
            global: est.params_global,
            local: est.params_local,
            quality,
        }
    }
}

/// `(S(C1), S(C2), S(|m|) + |m|² S(θ))` evaluated at a local estimate.
pub fn node_quality(local: &GaussianParams, l: f64, sigma2: f64) -> [f64; 3] {
    let v = closed_form_variances(l, local, sigma2);
    [v.c1, v.c2, v.center_quality(local.center_norm())]
}

/// Network, graph and frames shared by every trial.
pub struct FusionContext {
    pub net: HexNetwork,
    pub graph: FusionGraph,
    /// Frame of each fusion node, indexed like the graph.
    pub frames: Vec<LocalFrame>,
}

impl FusionContext {
    pub fn new(net: HexNetwork) -> Result<Self, HarnessError> {
        if net.inner().is_empty() {
            return Err(HarnessError::Config("network has no inner nodes".into()));
        }
        let (graph, ids) = FusionGraph::from_network(&net)?;
        let frames = ids
            .iter()
            .map(|&i| local_frame(&net, i))
            .collect::<Result<_, _>>()?;
        Ok(FusionContext { net, graph, frames })
    }

    pub fn estimate(&self, values: &[f64]) -> Vec<LocalEstimate> {
        let l = self.net.edge_length();
        self.frames
            .iter()
            .map(|f| estimate_with_frame(f, l, values))
            .collect()
    }

    pub fn fusion_nodes(&self, estimates: &[LocalEstimate], sigma2: f64) -> Vec<FusionNode> {
        let l = self.net.edge_length();
        self.frames
            .iter()
            .zip(estimates)
            .map(|(f, e)| FusionNode::from_estimate(*f, e, l, sigma2))
            .collect()
    }
}

/// Output of one fusion method over all four parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionRun {
    pub estimate: FusedEstimate,
    pub converged: bool,
    pub iterations: usize,
    /// Reports in channel order `c1, c2, m1, m2`.
    pub reports: Vec<FusionReport>,
}

pub const FUSED_CHANNELS: [&str; 4] = ["c1", "c2", "m1", "m2"];

/// Fuses the nodes' estimates with `method`. Invalid nodes keep their place
/// in the graph: their starting value is the mean of the valid estimates and
/// their quality is infinite (clamped to a negligible weight). Returns `None`
/// when no node has a valid estimate, or for [`FusionMethod::Raw`].
pub fn fuse(
    ctx: &FusionContext,
    nodes: &[FusionNode],
    method: FusionMethod,
    sigma2: f64,
    opts: &ConsensusOptions,
) -> Result<Option<FusionRun>, HarnessError> {
    let valid: Vec<&GaussianParams> = nodes.iter().filter_map(|n| n.global.as_ref()).collect();
    if valid.is_empty() || method == FusionMethod::Raw {
        return Ok(None);
    }
    let mut mean = [0.0; 4];
    for p in &valid {
        for (m, v) in mean.iter_mut().zip(p.to_array()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= valid.len() as f64);
    let x0: Vec<Vec<f64>> = (0..4)
        .map(|k| {
            nodes
                .iter()
                .map(|n| n.global.map_or(mean[k], |g| g.to_array()[k]))
                .collect()
        })
        .collect();
    let quality = |q: usize| -> Vec<f64> { nodes.iter().map(|n| n.quality[q]).collect() };
    let graph = &ctx.graph;
    let l = ctx.net.edge_length();

    let reports: Vec<FusionReport> = match method {
        FusionMethod::Raw => unreachable!(),
        FusionMethod::Average => {
            let p = metropolis_weights(graph);
            x0.iter()
                .map(|x| average_consensus(graph, x, &p, opts))
                .collect::<Result<_, _>>()?
        }
        FusionMethod::TwoChannel => {
            let floor = |v: Vec<f64>| -> Vec<f64> {
                v.into_iter()
                    .map(|s| {
                        if s.is_nan() {
                            f64::INFINITY
                        } else {
                            s.max(S_MIN)
                        }
                    })
                    .collect()
            };
            let (s1, s2, sc) = (floor(quality(0)), floor(quality(1)), floor(quality(2)));
            vec![
                two_channel_fusion(graph, &x0[0], &s1, opts)?,
                two_channel_fusion(graph, &x0[1], &s2, opts)?,
                two_channel_fusion(graph, &x0[2], &sc, opts)?,
                two_channel_fusion(graph, &x0[3], &sc, opts)?,
            ]
        }
        FusionMethod::Wise => vec![
            run_wise(graph, &x0[0], &quality(0), opts)?,
            run_wise(graph, &x0[1], &quality(1), opts)?,
            run_wise(graph, &x0[2], &quality(2), opts)?,
            run_wise(graph, &x0[3], &quality(2), opts)?,
        ],
        FusionMethod::Recompute | FusionMethod::Hybrid(_) => {
            let k_bar = match method {
                FusionMethod::Hybrid(k) => k,
                _ => 0,
            };
            let c1_fn = |i: usize, v: &[f64]| {
                recomputed(nodes, i, l, sigma2, |local| local.with_c1(v[0]).ok(), 0)
            };
            let c2_fn = |i: usize, v: &[f64]| {
                recomputed(nodes, i, l, sigma2, |local| local.with_c2(v[0]).ok(), 1)
            };
            let center_fn = |i: usize, v: &[f64]| {
                let frame = &nodes[i].frame;
                recomputed(
                    nodes,
                    i,
                    l,
                    sigma2,
                    |local| local.with_center(frame.apply([v[0], v[1]])).ok(),
                    2,
                )
            };
            let mut out = joint_recompute(graph, &x0[0..1], c1_fn, k_bar, opts)?;
            out.extend(joint_recompute(graph, &x0[1..2], c2_fn, k_bar, opts)?);
            out.extend(joint_recompute(graph, &x0[2..4], center_fn, k_bar, opts)?);
            out
        }
    };
    let estimate = FusedEstimate {
        c1: reports[0].x_star,
        c2: reports[1].x_star,
        m1: reports[2].x_star,
        m2: reports[3].x_star,
    };
    Ok(Some(FusionRun {
        estimate,
        converged: reports.iter().all(|r| r.converged),
        iterations: reports.iter().map(|r| r.iterations).max().unwrap_or(0),
        reports,
    }))
}

// Variance of channel `q` at the node's local estimate with one parameter
// replaced by its current consensus value.
fn recomputed(
    nodes: &[FusionNode],
    i: usize,
    l: f64,
    sigma2: f64,
    update: impl Fn(&GaussianParams) -> Option<GaussianParams>,
    q: usize,
) -> f64 {
    nodes[i]
        .local
        .as_ref()
        .and_then(update)
        .map_or(f64::INFINITY, |p| node_quality(&p, l, sigma2)[q])
}

fn raw_errors(estimates: &[LocalEstimate], truth: &GaussianParams) -> Option<ChannelErrors> {
    let errs: Vec<ChannelErrors> = estimates
        .iter()
        .filter_map(|e| e.params_global)
        .map(|g| {
            let [c1, c2, m1, m2] = g.to_array();
            ChannelErrors::of(&FusedEstimate { c1, c2, m1, m2 }, truth)
        })
        .collect();
    if errs.is_empty() {
        return None;
    }
    let med = |ch: ErrorChannel| {
        let mut v: Vec<f64> = errs.iter().map(|e| e.get(ch)).collect();
        median(&mut v).expect("non-empty")
    };
    Some(ChannelErrors {
        c1: med(ErrorChannel::C1),
        c2: med(ErrorChannel::C2),
        m1: med(ErrorChannel::M1),
        m2: med(ErrorChannel::M2),
        center: med(ErrorChannel::Center),
    })
}

/// Runs every trial of `config`. Trials are independent; trial `k` draws its
/// noise from [`trial_seed`]`(seed, k)` in node-index order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult, HarnessError> {
    config.validate()?;
    let ctx = FusionContext::new(config.network.build()?)?;
    let truth = config.truth;
    let sigma = config.noise.sigma(&truth);
    let sigma2 = sigma * sigma;
    let opts = config.consensus_options();
    let clean: Vec<f64> = ctx.net.nodes().iter().map(|&p| eval(&truth, p)).collect();

    let mut trials = Vec::with_capacity(config.trials);
    for k in 0..config.trials {
        let seed = trial_seed(config.seed, k);
        let mut values = clean.clone();
        NoiseStream::new(seed).perturb(&mut values, sigma);
        let estimates = ctx.estimate(&values);
        let nodes = ctx.fusion_nodes(&estimates, sigma2);
        let mut outcomes = Vec::with_capacity(config.methods.len());
        for &method in &config.methods {
            let outcome = if method == FusionMethod::Raw {
                let errors = raw_errors(&estimates, &truth);
                MethodOutcome {
                    method,
                    estimate: None,
                    errors,
                    converged: true,
                    iterations: 0,
                    failure: errors.is_none().then(|| "no valid local estimate".into()),
                }
            } else {
                let failed = |why: String| MethodOutcome {
                    method,
                    estimate: None,
                    errors: None,
                    converged: false,
                    iterations: 0,
                    failure: Some(why),
                };
                match fuse(&ctx, &nodes, method, sigma2, &opts) {
                    Ok(Some(run)) => MethodOutcome {
                        method,
                        estimate: Some(run.estimate),
                        errors: Some(ChannelErrors::of(&run.estimate, &truth)),
                        converged: run.converged,
                        iterations: run.iterations,
                        failure: None,
                    },
                    Ok(None) => failed("no valid local estimate".into()),
                    // e.g. every valid node reports an infinite variance
                    Err(HarnessError::Fusion(e)) => failed(e.to_string()),
                    Err(e) => return Err(e),
                }
            };
            outcomes.push(outcome);
        }
        trials.push(TrialRecord {
            trial: k,
            seed,
            estimates,
            outcomes,
        });
    }
    let aggregates = aggregate(&config.methods, &trials);
    let discards = discard_stats(&trials);
    Ok(ExperimentResult {
        config: config.clone(),
        sigma,
        trials,
        aggregates,
        discards,
    })
}

/// Errors of `method` on `channel`, one per trial that produced an estimate.
pub fn method_errors(
    trials: &[TrialRecord],
    method: FusionMethod,
    channel: ErrorChannel,
) -> Vec<f64> {
    trials
        .iter()
        .filter_map(|t| t.outcomes.iter().find(|o| o.method == method))
        .filter_map(|o| o.errors.map(|e| e.get(channel)))
        .collect()
}

/// Per-method, per-channel medians and means recomputed from trial records.
pub fn aggregate(methods: &[FusionMethod], trials: &[TrialRecord]) -> Vec<MethodAggregate> {
    methods
        .iter()
        .map(|&method| {
            let failed_trials = trials
                .iter()
                .filter(|t| {
                    t.outcomes
                        .iter()
                        .any(|o| o.method == method && o.errors.is_none())
                })
                .count();
            let channels = ErrorChannel::ALL
                .iter()
                .map(|&channel| {
                    let mut errs = method_errors(trials, method, channel);
                    let count = errs.len();
                    let mean = (count > 0).then(|| errs.iter().sum::<f64>() / count as f64);
                    ChannelSummary {
                        channel,
                        count,
                        median: median(&mut errs),
                        mean,
                    }
                })
                .collect();
            MethodAggregate {
                method,
                failed_trials,
                channels,
            }
        })
        .collect()
}

pub fn discard_stats(trials: &[TrialRecord]) -> DiscardStats {
    let mut s = DiscardStats {
        node_estimates: 0,
        invalid: 0,
        non_positive_measurement: 0,
        width_degenerate: 0,
        non_finite: 0,
        trials_without_estimate: 0,
    };
    for t in trials {
        s.node_estimates += t.estimates.len();
        if t.estimates.iter().all(|e| !e.is_valid()) {
            s.trials_without_estimate += 1;
        }
        for e in &t.estimates {
            if let Some(f) = e.failure {
                s.invalid += 1;
                match f {
                    InversionError::NonPositiveMeasurement => s.non_positive_measurement += 1,
                    InversionError::WidthDegenerate => s.width_degenerate += 1,
                    InversionError::NonFinite => s.non_finite += 1,
                }
            }
        }
    }
    s
}
