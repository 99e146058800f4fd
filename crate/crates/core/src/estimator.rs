//! Four-point inversion of the Gaussian field and per-node estimates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{GaussianParams, MeasurementQuad, SQRT_3};
use crate::lattice::{local_frame, HexNetwork, LatticeError, LocalFrame};

/// Smallest accepted value of `log(μ1³ / (μ2 μ3 μ4))`. Below it the width
/// estimate `3 l² / log(..)` is numerically unbounded.
pub const WIDTH_LOG_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InversionError {
    #[error("a reading is not strictly positive")]
    NonPositiveMeasurement,
    #[error("readings violate mu2 * mu3 * mu4 < mu1^3")]
    WidthDegenerate,
    #[error("inversion produced a non-finite parameter")]
    NonFinite,
}

/// Recovers `(C1, C2, m1, m2)` in the canonical frame from four readings.
///
/// ```text
/// C2 = 3 l² / log(μ1³ / (μ2 μ3 μ4))
/// m1 = C2 / (2 √3 l) · log(μ4 / μ3)
/// m2 = C2 / (6 l)    · log(μ2² / (μ3 μ4))
/// C1 = μ1 · exp((m1² + m2²) / C2)
/// ```
pub fn invert_measurements(quad: &MeasurementQuad) -> Result<GaussianParams, InversionError> {
    let [mu1, mu2, mu3, mu4] = quad.mu;
    if !quad.mu.iter().all(|&m| m > 0.0 && m.is_finite()) {
        return Err(InversionError::NonPositiveMeasurement);
    }
    let (ln1, ln2, ln3, ln4) = (mu1.ln(), mu2.ln(), mu3.ln(), mu4.ln());
    // logs are summed rather than forming μ1³ to avoid overflow on tiny readings
    let width_log = 3.0 * ln1 - ln2 - ln3 - ln4;
    if !(width_log >= WIDTH_LOG_GUARD) {
        return Err(InversionError::WidthDegenerate);
    }
    let l = quad.l;
    let c2 = 3.0 * l * l / width_log;
    let m1 = c2 / (2.0 * SQRT_3 * l) * (ln4 - ln3);
    let m2 = c2 / (6.0 * l) * (2.0 * ln2 - ln3 - ln4);
    let c1 = mu1 * ((m1 * m1 + m2 * m2) / c2).exp();
    GaussianParams::new(c1, c2, m1, m2).map_err(|_| InversionError::NonFinite)
}

/// One inner node's estimate of the field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalEstimate {
    pub node: usize,
    /// Centre expressed in network coordinates.
    pub params_global: Option<GaussianParams>,
    /// Centre relative to the node, in its canonical frame.
    pub params_local: Option<GaussianParams>,
    pub failure: Option<InversionError>,
}

impl LocalEstimate {
    pub fn is_valid(&self) -> bool {
        self.params_global.is_some()
    }
}

/// Assembles the node's reading quad through its canonical frame, inverts it
/// and maps the centre back to network coordinates.
///
/// `values[i]` is the reading of network node `i`. Inversion failures are
/// reported inside the estimate; only non-inner nodes are an error.
pub fn estimate_at_node(
    net: &HexNetwork,
    node: usize,
    values: &[f64],
) -> Result<LocalEstimate, LatticeError> {
    let frame = local_frame(net, node)?;
    Ok(estimate_with_frame(&frame, net.edge_length(), values))
}

/// Same as [`estimate_at_node`] with a precomputed frame.
pub fn estimate_with_frame(frame: &LocalFrame, l: f64, values: &[f64]) -> LocalEstimate {
    let quad = MeasurementQuad::new(frame.reading_order().map(|i| values[i]), l);
    let local = invert_measurements(&quad).and_then(|local| {
        let global = local
            .with_center(frame.apply_inverse(local.center()))
            .map_err(|_| InversionError::NonFinite)?;
        Ok((local, global))
    });
    match local {
        Ok((local, global)) => LocalEstimate {
            node: frame.node,
            params_global: Some(global),
            params_local: Some(local),
            failure: None,
        },
        Err(e) => LocalEstimate {
            node: frame.node,
            params_global: None,
            params_local: None,
            failure: Some(e),
        },
    }
}

/// Estimates at every inner node, in ascending node order.
pub fn estimate_all(net: &HexNetwork, values: &[f64]) -> Result<Vec<LocalEstimate>, LatticeError> {
    net.inner()
        .iter()
        .map(|&i| estimate_at_node(net, i, values))
        .collect()
}
