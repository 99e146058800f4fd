//! Distributed parametric estimation of a planar Gaussian field.
//!
//! A honeycomb network of sensors samples a field of the form
//! `C1 * exp(-|x - m|^2 / C2)`. Every degree-3 node inverts its own reading
//! plus its three neighbours' readings into the four field parameters, the
//! first-order error variance of each estimate is predicted in closed form,
//! and the network fuses the local estimates by consensus, weighting each
//! node by its presumed variance.
//!
//! Module map:
//!
//! - [`field`]: the field model, the four-point forward map and noise.
//! - [`lattice`]: honeycomb generation, inner nodes, local canonical frames.
//! - [`estimator`]: four-point inversion and per-node estimates.
//! - [`sensitivity`]: closed-form, numeric and Monte Carlo error variances.
//! - [`spacing`]: optimal edge length search.
//! - [`consensus`]: average, two-channel and variance-weighted consensus.
//! - [`harness`]: experiment runner, method comparison and file formats.

// Negated comparisons are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod consensus;
pub mod estimator;
pub mod field;
pub mod harness;
pub mod lattice;
pub mod sensitivity;
pub mod spacing;

pub use consensus::{ConsensusOptions, ConsensusState, FusionError, FusionGraph, FusionReport};
pub use estimator::{InversionError, LocalEstimate};
pub use field::{GaussianParams, MeasurementQuad, NoiseModel, NoiseStream, ParamError, Point};
pub use harness::{ExperimentConfig, ExperimentResult, FusionMethod, HarnessError};
pub use lattice::{HexNetwork, LatticeError, LocalFrame, TessellationKind};
pub use sensitivity::{ClosedFormVariant, VarianceSet, VarianceSource};
pub use spacing::{Channel, SpacingResult};
