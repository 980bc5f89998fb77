//! Variable-length stop-feedback (VLSF) codes with a finite number of
//! decoding times over the unit-noise AWGN channel.
//!
//! The crate is organised bottom-up:
//!
//! - [`channel`]: closed-form scalar quantities of the channel (capacity,
//!   dispersion, nested logarithms, the spherical-output constant `J(P)`,
//!   Gaussian tail functions) and the moments of the per-symbol
//!   information-density decomposition.
//! - [`codebook`]: decoding schedules and spherical random codebooks that
//!   meet the nested maximal power constraint with equality.
//! - [`bounds`]: Monte Carlo evaluation of the non-asymptotic random-coding
//!   bound, the moderate-deviations tail approximation and the asymptotic
//!   rate expansions.
//! - [`schedule`]: decoding-time equations, code design pipelines
//!   (finite `K` and `K = ∞`) and the first-order (KKT) refinement.
//! - [`simulator`]: end-to-end simulation of the threshold-stopping decoder,
//!   the renewal process behind the `K = ∞` design and the change-of-measure
//!   martingale check.
//! - [`mc`]: the seeded, thread-count-independent Monte Carlo harness the
//!   other modules share.

pub mod bounds;
pub mod channel;
pub mod codebook;
mod error;
pub mod mc;
pub mod schedule;
pub mod simulator;

pub use error::{Error, Result};

pub use bounds::{AsymptoticPoint, BoundReport, EvalMode, Regime};
pub use channel::{ChannelParams, MomentSet};
pub use codebook::{Codebook, Schedule};
pub use schedule::{CodeDesign, KktReport, MessageCount};
pub use simulator::{RenewalStats, SimStats};

/// Version string embedded in every emitted report.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
