//! First-order error variances of the four-point estimates.
//!
//! Readings carry i.i.d. additive noise of variance `σ²`. To first order the
//! parameter error is `(DΦ)⁻¹ Δ`, so each variance is `σ²` times a squared row
//! norm of the inverse Jacobian. Three routes are provided:
//!
//! - [`closed_form_variances`]: explicit expressions in `l`, `C1`, `C2`, `m`.
//! - [`numeric_oracle_variances`]: the finite-difference Jacobian inverted
//!   numerically. This is the reference the closed forms are checked against.
//! - [`monte_carlo_variances`]: repeated noisy inversions.
//!
//! Two of the closed forms are easy to get wrong: the `C2` prefactor must be
//! `exp(2|m|²/C2)`, not `exp(2|m|/C2)`, and the `C1` prefactor must be
//! `1/(9 l⁴)`, not `9/l⁴`. [`ClosedFormVariant::Uncorrected`] keeps the wrong
//! prefactors so the oracle check can show the difference; the default is
//! [`ClosedFormVariant::Corrected`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::invert_measurements;
use crate::field::{
    forward_phi, jacobian_phi, GaussianParams, NoiseStream, DEFAULT_JACOBIAN_STEP, SQRT_3,
};
use nalgebra::Matrix4;

/// Jacobians with a 2-norm condition number above this are rejected.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SensitivityError {
    #[error("forward-map Jacobian is numerically singular (condition number {0:e})")]
    SingularJacobian(f64),
    #[error("only {valid} of {trials} Monte Carlo trials inverted successfully")]
    TooFewValidSamples { valid: usize, trials: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
}

/// Which scalar error variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    C1,
    C2,
    /// Distance of the centre from the node, `|m|`.
    ModM,
    /// Polar angle of the centre, `atan2(m2, m1)`.
    Angle,
}

impl Channel {
    pub const ALL: [Channel; 4] = [Channel::C1, Channel::C2, Channel::ModM, Channel::Angle];

    pub fn name(&self) -> &'static str {
        match self {
            Channel::C1 => "c1",
            Channel::C2 => "c2",
            Channel::ModM => "modm",
            Channel::Angle => "angle",
        }
    }
}

impl std::str::FromStr for Channel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "c1" => Ok(Channel::C1),
            "c2" => Ok(Channel::C2),
            "modm" | "|m|" => Ok(Channel::ModM),
            "angle" | "theta" => Ok(Channel::Angle),
            other => Err(format!(
                "unknown channel `{other}` (expected c1, c2, modm, angle)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceSource {
    ClosedForm,
    ClosedFormUncorrected,
    NumericOracle,
    MonteCarlo,
}

/// Error variances of `C1`, `C2`, `|m|` and the centre angle.
///
/// Entries are non-negative and may be `+∞` where the geometry carries no
/// information (the polar channels at `m = 0`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceSet {
    pub c1: f64,
    pub c2: f64,
    pub modm: f64,
    pub angle: f64,
    pub source: VarianceSource,
}

impl VarianceSet {
    pub fn get(&self, channel: Channel) -> f64 {
        match channel {
            Channel::C1 => self.c1,
            Channel::C2 => self.c2,
            Channel::ModM => self.modm,
            Channel::Angle => self.angle,
        }
    }

    /// Isotropic variance of the Cartesian centre: radial plus tangential,
    /// `S(|m|) + |m|² S(θ)`.
    pub fn center_quality(&self, center_norm: f64) -> f64 {
        if !(self.modm.is_finite() && self.angle.is_finite()) {
            return f64::INFINITY;
        }
        self.modm + center_norm * center_norm * self.angle
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClosedFormVariant {
    /// Prefactors that agree with the inverse-Jacobian oracle.
    #[default]
    Corrected,
    /// `exp(2|m|/C2)` in the width and `9/l⁴` in the amplitude variance.
    Uncorrected,
}

/// Closed-form variances with the corrected prefactors.
pub fn closed_form_variances(l: f64, params: &GaussianParams, sigma2: f64) -> VarianceSet {
    closed_form_variances_with(l, params, sigma2, ClosedFormVariant::Corrected)
}

pub fn closed_form_variances_with(
    l: f64,
    params: &GaussianParams,
    sigma2: f64,
    variant: ClosedFormVariant,
) -> VarianceSet {
    let (c1, c2, m1, m2) = (params.c1(), params.c2(), params.m1(), params.m2());
    let r2 = m1 * m1 + m2 * m2;
    let r = r2.sqrt();
    let l2 = l * l;
    let l4 = l2 * l2;

    // one exponential per neighbour, labels 2, 3, 4
    let e2 = (2.0 * l * (l - 2.0 * m2) / c2).exp();
    let e3 = (2.0 * l * (l + SQRT_3 * m1 + m2) / c2).exp();
    let e4 = (2.0 * l * (l - SQRT_3 * m1 + m2) / c2).exp();
    let g = (2.0 * r2 / c2).exp();

    let (c2_pre, c1_pre) = match variant {
        ClosedFormVariant::Corrected => (g, g / (9.0 * l4)),
        ClosedFormVariant::Uncorrected => ((2.0 * r / c2).exp(), 9.0 * g / l4),
    };

    let var_c2 = sigma2 * c2.powi(4) * c2_pre / (9.0 * c1 * c1 * l4) * (9.0 + e2 + e3 + e4);

    let var_c1 = sigma2
        * c1_pre
        * (9.0 * (r2 - l2).powi(2)
            + (r2 + 2.0 * l * m2).powi(2) * e2
            + (r2 - l * (SQRT_3 * m1 + m2)).powi(2) * e3
            + (r2 + l * (SQRT_3 * m1 - m2)).powi(2) * e4);

    let (var_modm, var_angle) = if r2 == 0.0 {
        (f64::INFINITY, f64::INFINITY)
    } else {
        let modm = sigma2 * c2 * c2 * g / (36.0 * c1 * c1 * l4 * r2)
            * (36.0 * r2 * r2
                + (2.0 * r2 + 2.0 * l * m2).powi(2) * e2
                + (2.0 * r2 - l * (SQRT_3 * m1 + m2)).powi(2) * e3
                + (2.0 * r2 + l * (SQRT_3 * m1 - m2)).powi(2) * e4);
        let angle = sigma2 * c2 * c2 * g / (36.0 * c1 * c1 * l2 * r2 * r2)
            * (4.0 * m1 * m1 * e2
                + (m1 - SQRT_3 * m2).powi(2) * e3
                + (m1 + SQRT_3 * m2).powi(2) * e4);
        (modm, angle)
    };

    VarianceSet {
        c1: nan_to_inf(var_c1),
        c2: nan_to_inf(var_c2),
        modm: nan_to_inf(var_modm),
        angle: nan_to_inf(var_angle),
        source: match variant {
            ClosedFormVariant::Corrected => VarianceSource::ClosedForm,
            ClosedFormVariant::Uncorrected => VarianceSource::ClosedFormUncorrected,
        },
    }
}

// overflowing exponentials can produce inf * 0
fn nan_to_inf(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

/// `(DΦ)⁻¹` from the finite-difference Jacobian: rows are the parameters
/// `(C1, C2, m1, m2)`, columns the readings `(μ1..μ4)`.
pub fn error_gain_matrix(
    l: f64,
    params: &GaussianParams,
) -> Result<Matrix4<f64>, SensitivityError> {
    let jac = jacobian_phi(params, l, DEFAULT_JACOBIAN_STEP);
    if !jac.iter().all(|v| v.is_finite()) {
        return Err(SensitivityError::SingularJacobian(f64::INFINITY));
    }
    let sv = jac.singular_values();
    let (max, min) = sv.iter().fold((0.0f64, f64::INFINITY), |(hi, lo), &s| {
        (hi.max(s), lo.min(s))
    });
    let cond = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(cond <= MAX_CONDITION) {
        return Err(SensitivityError::SingularJacobian(cond));
    }
    jac.try_inverse()
        .ok_or(SensitivityError::SingularJacobian(cond))
}

/// First-order variances of `(C1, C2, m1, m2)` from the oracle.
pub fn oracle_parameter_variances(
    l: f64,
    params: &GaussianParams,
    sigma2: f64,
) -> Result<[f64; 4], SensitivityError> {
    let a = error_gain_matrix(l, params)?;
    Ok(std::array::from_fn(|k| sigma2 * a.row(k).norm_squared()))
}

/// Variance set from the numerically inverted Jacobian. The polar channels
/// chain the gradient of `|m|` and `atan2(m2, m1)` through the centre rows.
pub fn numeric_oracle_variances(
    l: f64,
    params: &GaussianParams,
    sigma2: f64,
) -> Result<VarianceSet, SensitivityError> {
    let a = error_gain_matrix(l, params)?;
    let row_sq = |k: usize| sigma2 * a.row(k).norm_squared();
    let (m1, m2) = (params.m1(), params.m2());
    let r2 = m1 * m1 + m2 * m2;
    let (modm, angle) = if r2 == 0.0 {
        (f64::INFINITY, f64::INFINITY)
    } else {
        let r = r2.sqrt();
        let chained = |g1: f64, g2: f64| {
            sigma2
                * (0..4)
                    .map(|j| (g1 * a[(2, j)] + g2 * a[(3, j)]).powi(2))
                    .sum::<f64>()
        };
        (chained(m1 / r, m2 / r), chained(-m2 / r2, m1 / r2))
    };
    Ok(VarianceSet {
        c1: row_sq(0),
        c2: row_sq(1),
        modm,
        angle,
        source: VarianceSource::NumericOracle,
    })
}

/// Empirical variances with the fraction of failed inversions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub variances: VarianceSet,
    pub trials: usize,
    pub valid: usize,
    pub discard_rate: f64,
}

/// Repeats noise + inversion `trials` times. Variances are mean squared
/// deviations from the true values; the angle deviation is wrapped into
/// `(-π, π]`. Failed inversions are discarded and counted.
pub fn monte_carlo_variances(
    l: f64,
    params: &GaussianParams,
    sigma: f64,
    trials: usize,
    seed: u64,
) -> Result<MonteCarloReport, SensitivityError> {
    if trials == 0 {
        return Err(SensitivityError::InvalidArgument(
            "trials must be at least 1",
        ));
    }
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(SensitivityError::InvalidArgument(
            "sigma must be finite and non-negative",
        ));
    }
    let clean = forward_phi(params, l);
    let (true_r, true_theta) = (params.center_norm(), params.center_angle());
    let mut stream = NoiseStream::new(seed);
    let mut sums = [0.0f64; 4];
    let mut valid = 0usize;
    for _ in 0..trials {
        let mut quad = clean;
        stream.perturb(&mut quad.mu, sigma);
        let Ok(est) = invert_measurements(&quad) else {
            continue;
        };
        valid += 1;
        sums[0] += (est.c1() - params.c1()).powi(2);
        sums[1] += (est.c2() - params.c2()).powi(2);
        sums[2] += (est.center_norm() - true_r).powi(2);
        sums[3] += wrap_pi(est.center_angle() - true_theta).powi(2);
    }
    if 2 * valid < trials {
        return Err(SensitivityError::TooFewValidSamples { valid, trials });
    }
    let n = valid as f64;
    Ok(MonteCarloReport {
        variances: VarianceSet {
            c1: sums[0] / n,
            c2: sums[1] / n,
            modm: sums[2] / n,
            angle: sums[3] / n,
            source: VarianceSource::MonteCarlo,
        },
        trials,
        valid,
        discard_rate: (trials - valid) as f64 / trials as f64,
    })
}

pub(crate) fn wrap_pi(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut a = a % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}
