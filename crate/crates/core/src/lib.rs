//! Deterministic ORAM simulation laboratory.
//!
//! The crate simulates Path ORAM and its practical variants (recursion,
//! unified position-map tree with a lookaside buffer, super blocks,
//! background eviction), a length-padding "bogus" ORAM wrapper, periodic
//! and epoch-based timing shaping, and the PRAXEN leakage-accounting
//! resource scheduler. The [`distinguisher`] module turns the finite-length,
//! truncation-based and strong obliviousness definitions into statistical
//! verdicts over the adversary-visible projection of simulated runs.
//!
//! Everything is seeded: identical configuration and seed give bit-identical
//! traces, reports and CLI output files.

pub mod bogus;
pub mod cli;
pub mod distinguisher;
pub mod error;
pub mod leakage;
pub mod oram;
pub mod path_oram;
pub mod periodic;
pub mod praxen;
pub mod recursive;
pub mod rng;
pub mod trace;

pub use error::{Error, Result};
pub use oram::Oram;

/// Bit quantities reported by the leakage accounting, in double precision.
pub type Bits = f64;
/// Timing/termination leakage report in double precision.
pub type TimingLeakageReport = leakage::TimingLeakageReport<f64>;
/// Timing/termination leakage report in single precision.
pub type TimingLeakageReportF32 = leakage::TimingLeakageReport<f32>;
