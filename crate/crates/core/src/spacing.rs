//! Optimal edge length: `argmin_{l > 0} S(l)` for one variance channel.
//!
//! The error variances have several local minima in `l` and the global
//! argmin jumps discontinuously as the centre moves, so the search is a
//! dense log-spaced scan followed by golden-section refinement of every
//! grid-local minimum. `σ²` is a global factor of every `S` and does not
//! enter the argmin; it only scales the reported values.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::GaussianParams;
pub use crate::sensitivity::Channel;
use crate::sensitivity::{closed_form_variances_with, ClosedFormVariant};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpacingError {
    #[error("{0:?} variance is not finite anywhere on the search grid")]
    NoFiniteValue(Channel),
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpacingOptions {
    pub grid_points: usize,
    /// Grid spans `[lo_factor · L, hi_factor · L]` with `L = √C2 + |m|`.
    pub lo_factor: f64,
    pub hi_factor: f64,
    pub variant: ClosedFormVariant,
}

impl Default for SpacingOptions {
    fn default() -> Self {
        SpacingOptions {
            grid_points: 2000,
            lo_factor: 1e-2,
            hi_factor: 20.0,
            variant: ClosedFormVariant::Corrected,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpacingResult {
    pub channel: Channel,
    pub l_opt: f64,
    pub s_at_opt: f64,
    pub bracket: (f64, f64),
    /// Every refined local minimum `(l, S)`, ascending in `l`.
    pub local_minima: Vec<(f64, f64)>,
}

/// Unit-noise variance of `channel` as a function of the edge length.
pub fn channel_variance(
    channel: Channel,
    params: &GaussianParams,
    l: f64,
    variant: ClosedFormVariant,
) -> f64 {
    let v = closed_form_variances_with(l, params, 1.0, variant).get(channel);
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

pub fn minimize_spacing(
    channel: Channel,
    params: &GaussianParams,
    sigma2: f64,
) -> Result<SpacingResult, SpacingError> {
    minimize_spacing_with(channel, params, sigma2, &SpacingOptions::default())
}

pub fn minimize_spacing_with(
    channel: Channel,
    params: &GaussianParams,
    sigma2: f64,
    opts: &SpacingOptions,
) -> Result<SpacingResult, SpacingError> {
    if opts.grid_points < 3 {
        return Err(SpacingError::InvalidArgument(
            "grid needs at least 3 points",
        ));
    }
    if !(opts.lo_factor > 0.0 && opts.hi_factor > opts.lo_factor) {
        return Err(SpacingError::InvalidArgument(
            "grid bounds must satisfy 0 < lo < hi",
        ));
    }
    if !(sigma2.is_finite() && sigma2 >= 0.0) {
        return Err(SpacingError::InvalidArgument(
            "sigma2 must be finite and non-negative",
        ));
    }
    let scale = params.c2().sqrt() + params.center_norm();
    let (lo, hi) = (opts.lo_factor * scale, opts.hi_factor * scale);
    let n = opts.grid_points;
    let step = (hi / lo).ln() / (n - 1) as f64;
    let grid: Vec<f64> = (0..n).map(|i| lo * (step * i as f64).exp()).collect();
    let f = |l: f64| channel_variance(channel, params, l, opts.variant);
    let values: Vec<f64> = grid.iter().map(|&l| f(l)).collect();

    let mut minima: Vec<(f64, f64)> = Vec::new();
    for i in 0..n {
        let v = values[i];
        if !v.is_finite() {
            continue;
        }
        let left = if i == 0 { f64::INFINITY } else { values[i - 1] };
        let right = if i + 1 == n {
            f64::INFINITY
        } else {
            values[i + 1]
        };
        if !((v <= left && v < right) || (v < left && v <= right)) {
            continue;
        }
        let a = grid[i.saturating_sub(1)];
        let b = grid[(i + 1).min(n - 1)];
        let (x, fx) = golden_section(&f, a, b, 1e-12);
        let candidate = if fx <= v { (x, fx) } else { (grid[i], v) };
        if let Some(last) = minima.last() {
            if (candidate.0 - last.0).abs() <= 1e-9 * candidate.0 {
                continue;
            }
        }
        minima.push(candidate);
    }
    let Some(&(l_opt, s_unit)) = minima
        .iter()
        .min_by(|a, b| a.1.partial_cmp(&b.1).expect("finite minima"))
    else {
        return Err(SpacingError::NoFiniteValue(channel));
    };
    Ok(SpacingResult {
        channel,
        l_opt,
        s_at_opt: sigma2 * s_unit,
        bracket: (lo, hi),
        local_minima: minima.into_iter().map(|(l, s)| (l, sigma2 * s)).collect(),
    })
}

/// Golden-section search on `[a, b]`; returns the best probe seen.
pub fn golden_section(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64, rel_tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    let mut best = if fc <= fd { (c, fc) } else { (d, fd) };
    for _ in 0..200 {
        if (b - a) <= rel_tol * (a.abs() + b.abs()) {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
        for (x, fx) in [(c, fc), (d, fd)] {
            if fx < best.1 {
                best = (x, fx);
            }
        }
    }
    best
}

/// Root `l > √C2` of `(l²/C2 - 1) e^{2 l²/C2} = 3`, the stationary point of
/// the width variance when the centre sits on the node. Bisection on
/// `[√C2, 2√C2]`.
pub fn canonical_root(c2: f64) -> f64 {
    let g = |l: f64| {
        let u = l * l / c2;
        (u - 1.0) * (2.0 * u).exp() - 3.0
    };
    let s = c2.sqrt();
    let (mut lo, mut hi) = (s, 2.0 * s);
    while hi - lo > 1e-13 * s {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Bounds on the width-optimal spacing: `(√C2 - |m|, √2 √C2 + |m|)`.
/// The lower bound is vacuous when non-positive.
pub fn spacing_bounds(c2: f64, mod_m: f64) -> (f64, f64) {
    let s = c2.sqrt();
    (s - mod_m, std::f64::consts::SQRT_2 * s + mod_m)
}

/// `lo:hi:n` sample specification of one centre coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisRange {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl AxisRange {
    pub fn values(&self) -> Vec<f64> {
        match self.n {
            0 => Vec::new(),
            1 => vec![self.lo],
            n => (0..n)
                .map(|i| self.lo + (self.hi - self.lo) * i as f64 / (n - 1) as f64)
                .collect(),
        }
    }
}

impl std::str::FromStr for AxisRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let [lo, hi, n] = parts[..] else {
            return Err(format!("expected lo:hi:n, got `{s}`"));
        };
        let num = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("`{x}`: {e}"));
        Ok(AxisRange {
            lo: num(lo)?,
            hi: num(hi)?,
            n: n.trim().parse().map_err(|e| format!("`{n}`: {e}"))?,
        })
    }
}

/// One cell of an `l_opt` heat map. `l_opt` is `None` where the channel is
/// nowhere finite (e.g. the polar channels at `m = 0`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub m1: f64,
    pub m2: f64,
    pub channel: Channel,
    pub l_opt: Option<f64>,
    #[serde(rename = "S_at_opt")]
    pub s_at_opt: Option<f64>,
}

/// `l_opt` over a grid of centre positions (row-major in `m1`, then `m2`).
pub fn sweep_lopt_map(
    channel: Channel,
    m1: AxisRange,
    m2: AxisRange,
    c2: f64,
    sigma2: f64,
) -> Result<Vec<SweepPoint>, SpacingError> {
    if m1.n == 0 || m2.n == 0 {
        return Err(SpacingError::InvalidArgument("sweep grid is empty"));
    }
    let mut out = Vec::with_capacity(m1.n * m2.n);
    for &a in &m1.values() {
        for &b in &m2.values() {
            let params = GaussianParams::new(1.0, c2, a, b)
                .map_err(|_| SpacingError::InvalidArgument("invalid width or centre"))?;
            let (l_opt, s_at_opt) = match minimize_spacing(channel, &params, sigma2) {
                Ok(r) => (Some(r.l_opt), Some(r.s_at_opt)),
                Err(SpacingError::NoFiniteValue(_)) => (None, None),
                Err(e) => return Err(e),
            };
            out.push(SweepPoint {
                m1: a,
                m2: b,
                channel,
                l_opt,
                s_at_opt,
            });
        }
    }
    Ok(out)
}

/// CSV with header `m1,m2,channel,l_opt,S_at_opt`; missing values are empty.
pub fn write_sweep_csv<W: Write>(out: W, points: &[SweepPoint]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}
