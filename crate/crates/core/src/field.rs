//! Gaussian field model, the four-point forward map and measurement noise.
//!
//! The canonical measurement frame places an inner node at the origin and its
//! three neighbours at `(0, l)`, `(-√3 l/2, -l/2)` and `(√3 l/2, -l/2)`. The
//! forward map `Φ` sends the field parameters to the four readings taken at
//! those positions, in that order (centre, north, south-west, south-east).

use nalgebra::Matrix4;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A point of the plane, `[x, y]`.
pub type Point = [f64; 2];

pub const SQRT_3: f64 = 1.732_050_807_568_877_2;

/// Default relative step of the finite-difference Jacobian.
pub const DEFAULT_JACOBIAN_STEP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("amplitude C1 must be finite and positive, got {0}")]
    Amplitude(f64),
    #[error("width C2 must be finite and positive, got {0}")]
    Width(f64),
    #[error("centre coordinates must be finite, got ({0}, {1})")]
    Center(f64, f64),
}

/// The four parameters of `F(x) = C1 exp(-|x - m|^2 / C2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct GaussianParams {
    c1: f64,
    c2: f64,
    m1: f64,
    m2: f64,
}

#[derive(Serialize, Deserialize)]
struct RawParams {
    c1: f64,
    c2: f64,
    m1: f64,
    m2: f64,
}

impl TryFrom<RawParams> for GaussianParams {
    type Error = ParamError;

    fn try_from(raw: RawParams) -> Result<Self, ParamError> {
        GaussianParams::new(raw.c1, raw.c2, raw.m1, raw.m2)
    }
}

impl From<GaussianParams> for RawParams {
    fn from(p: GaussianParams) -> Self {
        RawParams {
            c1: p.c1,
            c2: p.c2,
            m1: p.m1,
            m2: p.m2,
        }
    }
}

impl GaussianParams {
    pub fn new(c1: f64, c2: f64, m1: f64, m2: f64) -> Result<Self, ParamError> {
        if !(c1.is_finite() && c1 > 0.0) {
            return Err(ParamError::Amplitude(c1));
        }
        if !(c2.is_finite() && c2 > 0.0) {
            return Err(ParamError::Width(c2));
        }
        if !(m1.is_finite() && m2.is_finite()) {
            return Err(ParamError::Center(m1, m2));
        }
        Ok(GaussianParams { c1, c2, m1, m2 })
    }

    /// Parameters in the fixed order `(C1, C2, m1, m2)`.
    pub fn from_array(v: [f64; 4]) -> Result<Self, ParamError> {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.c1, self.c2, self.m1, self.m2]
    }

    pub fn c1(&self) -> f64 {
        self.c1
    }

    pub fn c2(&self) -> f64 {
        self.c2
    }

    pub fn m1(&self) -> f64 {
        self.m1
    }

    pub fn m2(&self) -> f64 {
        self.m2
    }

    pub fn center(&self) -> Point {
        [self.m1, self.m2]
    }

    /// Distance of the centre from the origin, `|m|`.
    pub fn center_norm(&self) -> f64 {
        self.m1.hypot(self.m2)
    }

    /// Polar angle of the centre, full-quadrant (`atan2(m2, m1)`).
    pub fn center_angle(&self) -> f64 {
        self.m2.atan2(self.m1)
    }

    /// Same amplitude and width, different centre.
    pub fn with_center(&self, center: Point) -> Result<Self, ParamError> {
        Self::new(self.c1, self.c2, center[0], center[1])
    }

    pub fn with_c1(&self, c1: f64) -> Result<Self, ParamError> {
        Self::new(c1, self.c2, self.m1, self.m2)
    }

    pub fn with_c2(&self, c2: f64) -> Result<Self, ParamError> {
        Self::new(self.c1, c2, self.m1, self.m2)
    }
}

/// Field value at `point`.
pub fn eval(params: &GaussianParams, point: Point) -> f64 {
    raw_eval(params.to_array(), point)
}

// Unchecked evaluation, used by the finite-difference stencil where a
// perturbed parameter vector is not re-validated.
fn raw_eval(p: [f64; 4], point: Point) -> f64 {
    let dx = point[0] - p[2];
    let dy = point[1] - p[3];
    p[0] * (-(dx * dx + dy * dy) / p[1]).exp()
}

/// The canonical sensor positions for edge length `l`, in label order 1..=4.
pub fn canonical_positions(l: f64) -> [Point; 4] {
    let h = 0.5 * SQRT_3 * l;
    [[0.0, 0.0], [0.0, l], [-h, -0.5 * l], [h, -0.5 * l]]
}

/// Four readings `(μ1, μ2, μ3, μ4)` taken at the canonical positions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementQuad {
    pub mu: [f64; 4],
    pub l: f64,
}

impl MeasurementQuad {
    pub fn new(mu: [f64; 4], l: f64) -> Self {
        MeasurementQuad { mu, l }
    }
}

/// The forward map `Φ`: readings of the field at the canonical positions.
pub fn forward_phi(params: &GaussianParams, l: f64) -> MeasurementQuad {
    MeasurementQuad {
        mu: raw_phi(params.to_array(), l),
        l,
    }
}

fn raw_phi(p: [f64; 4], l: f64) -> [f64; 4] {
    canonical_positions(l).map(|pos| raw_eval(p, pos))
}

/// Central finite-difference Jacobian of `Φ`.
///
/// Rows follow the reading order `(μ1, μ2, μ3, μ4)`, columns the parameter
/// order `(C1, C2, m1, m2)`. Parameter `k` is perturbed by
/// `step * max(|p_k|, 1)`; for `C2` the perturbation is also capped at
/// `C2 / 2` so the stencil never crosses zero width.
pub fn jacobian_phi(params: &GaussianParams, l: f64, step: f64) -> Matrix4<f64> {
    let base = params.to_array();
    let mut jac = Matrix4::zeros();
    for k in 0..4 {
        let mut h = step * base[k].abs().max(1.0);
        if k == 1 {
            h = h.min(0.5 * base[1]);
        }
        let mut plus = base;
        let mut minus = base;
        plus[k] += h;
        minus[k] -= h;
        let fp = raw_phi(plus, l);
        let fm = raw_phi(minus, l);
        let width = plus[k] - minus[k];
        for row in 0..4 {
            jac[(row, k)] = (fp[row] - fm[row]) / width;
        }
    }
    jac
}

/// Additive i.i.d. Gaussian measurement noise with a fixed seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn new(sigma: f64, seed: u64) -> Result<Self, ParamError> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(ParamError::Amplitude(sigma));
        }
        Ok(NoiseModel { sigma, seed })
    }

    pub fn stream(&self) -> NoiseStream {
        NoiseStream::new(self.seed)
    }
}

/// A reproducible stream of standard normal draws.
///
/// The generator is ChaCha8 seeded with `seed_from_u64`. Each normal draw
/// consumes exactly two 64-bit words `a`, `b` and applies the cosine branch of
/// the Box-Muller transform:
///
/// ```text
/// u1 = ((a >> 11) + 1) * 2^-53      in (0, 1]
/// u2 = (b >> 11) * 2^-53            in [0, 1)
/// z  = sqrt(-2 ln u1) * cos(2π u2)
/// ```
///
/// The sine branch is discarded so that the `k`-th draw depends only on the
/// seed and `k`.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
}

const TWO_POW_M53: f64 = 1.0 / 9_007_199_254_740_992.0;

impl NoiseStream {
    pub fn new(seed: u64) -> Self {
        NoiseStream {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Uniform draw in `[0, 1)` from one 64-bit word.
    pub fn next_uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * TWO_POW_M53
    }

    pub fn next_standard_normal(&mut self) -> f64 {
        let u1 = ((self.rng.next_u64() >> 11) + 1) as f64 * TWO_POW_M53;
        let u2 = (self.rng.next_u64() >> 11) as f64 * TWO_POW_M53;
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn next_gaussian(&mut self, sigma: f64) -> f64 {
        sigma * self.next_standard_normal()
    }

    /// Adds `N(0, sigma^2)` to every value, in index order.
    pub fn perturb(&mut self, values: &mut [f64], sigma: f64) {
        for v in values.iter_mut() {
            *v += self.next_gaussian(sigma);
        }
    }

    /// Uniform index in `0..n` (`n > 0`).
    pub fn next_index(&mut self, n: usize) -> usize {
        ((self.next_uniform() * n as f64) as usize).min(n - 1)
    }
}

/// Perturbs each reading with an independent draw from a fresh stream seeded
/// by `noise.seed`, in reading order.
pub fn add_noise(quad: &MeasurementQuad, noise: &NoiseModel) -> MeasurementQuad {
    let mut out = *quad;
    if noise.sigma == 0.0 {
        return out;
    }
    noise.stream().perturb(&mut out.mu, noise.sigma);
    out
}
