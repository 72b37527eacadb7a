//! Synthetic twin-beam image stacks and the analysis chain that extracts
//! position-momentum EPR statistics and spatial squeezing from them.
//!
//! Modules, bottom-up:
//!
//! - [`stackio`]: frames, acquisitions, the TBIM stack format, crop / rotate / bin.
//! - [`simgen`]: seeded photon-pair Monte Carlo for image stacks, and
//!   spectrally colored photocurrent traces.
//! - [`specorr`]: frame differencing, registration, spatial cross-correlation.
//! - [`gfit`]: 2D Gaussian least-squares fit with confidence intervals.
//! - [`eprstat`]: pixel-to-physical transforms, the EPR product and its
//!   confidence level, inseparability.
//! - [`sqz`]: binned noise ratio and its spectral prediction.
//! - [`report`]: versioned JSON / CSV / SVG outputs shared by the CLI.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod eprstat;
pub mod gfit;
pub mod report;
pub mod simgen;
pub mod specorr;
pub mod sqz;
pub mod stackio;

pub use stackio::{AcquisitionSet, AnalysisRegion, FieldMode, Frame, FrameStack, OpticsConfig};

/// Crate version embedded in every report.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
