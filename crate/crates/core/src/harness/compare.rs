use serde::{Deserialize, Serialize};

use super::{
    method_errors, ErrorChannel, ExperimentResult, FusionMethod, HarnessError, TrialRecord,
};
use crate::field::NoiseStream;

pub const BOOTSTRAP_RESAMPLES: usize = 1000;

/// Median of a slice (mean of the two middle values for even lengths).
/// Reorders the slice.
pub fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Percentile interval of the median over `resamples` bootstrap draws.
pub fn bootstrap_median_ci(
    errors: &[f64],
    resamples: usize,
    level: f64,
    seed: u64,
) -> Option<(f64, f64)> {
    if errors.is_empty() || resamples == 0 {
        return None;
    }
    let mut rng = NoiseStream::new(seed);
    let mut buf = vec![0.0; errors.len()];
    let mut medians: Vec<f64> = (0..resamples)
        .map(|_| {
            for b in buf.iter_mut() {
                *b = errors[rng.next_index(errors.len())];
            }
            median(&mut buf).expect("non-empty")
        })
        .collect();
    medians.sort_by(f64::total_cmp);
    let tail = 0.5 * (1.0 - level);
    let at = |q: f64| medians[((q * (resamples - 1) as f64).round() as usize).min(resamples - 1)];
    Some((at(tail), at(1.0 - tail)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub method: FusionMethod,
    pub median: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRanking {
    pub channel: ErrorChannel,
    /// Ascending median error; methods without any estimate are left out.
    pub ranking: Vec<RankEntry>,
}

/// Ranks the configured methods by median error on every channel, with 90%
/// bootstrap intervals of the median.
pub fn compare_methods(result: &ExperimentResult) -> Result<Vec<ChannelRanking>, HarnessError> {
    let methods = &result.config.methods;
    if methods.len() < 2 {
        return Err(HarnessError::NeedTwoMethods);
    }
    let seed = result.config.seed ^ 0xB007_5742_u64;
    Ok(ErrorChannel::ALL
        .iter()
        .map(|&channel| {
            let mut ranking: Vec<RankEntry> = methods
                .iter()
                .filter_map(|&method| {
                    let errs = method_errors(&result.trials, method, channel);
                    let (ci_low, ci_high) =
                        bootstrap_median_ci(&errs, BOOTSTRAP_RESAMPLES, 0.9, seed)?;
                    Some(RankEntry {
                        method,
                        median: median(&mut errs.clone())?,
                        ci_low,
                        ci_high,
                        trials: errs.len(),
                    })
                })
                .collect();
            // stable: ties keep configuration order
            ranking.sort_by(|a, b| a.median.total_cmp(&b.median));
            ChannelRanking { channel, ranking }
        })
        .collect())
}

/// Fraction of paired bootstrap resamples (over trials where both methods
/// produced an estimate) in which the median error of `a` does not exceed
/// that of `b`.
pub fn bootstrap_preference(
    trials: &[TrialRecord],
    a: FusionMethod,
    b: FusionMethod,
    channel: ErrorChannel,
    resamples: usize,
    seed: u64,
) -> Option<f64> {
    let pairs: Vec<(f64, f64)> = trials
        .iter()
        .filter_map(|t| {
            let ea = t.outcomes.iter().find(|o| o.method == a)?.errors?;
            let eb = t.outcomes.iter().find(|o| o.method == b)?.errors?;
            Some((ea.get(channel), eb.get(channel)))
        })
        .collect();
    if pairs.is_empty() || resamples == 0 {
        return None;
    }
    let mut rng = NoiseStream::new(seed);
    let (mut va, mut vb) = (vec![0.0; pairs.len()], vec![0.0; pairs.len()]);
    let mut wins = 0usize;
    for _ in 0..resamples {
        for k in 0..pairs.len() {
            let (x, y) = pairs[rng.next_index(pairs.len())];
            va[k] = x;
            vb[k] = y;
        }
        if median(&mut va) <= median(&mut vb) {
            wins += 1;
        }
    }
    Some(wins as f64 / resamples as f64)
}
