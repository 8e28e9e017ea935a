//! Photon-level Monte Carlo simulation and analytics for a polarization-encoded
//! B92 quantum key distribution link.
//!
//! The crate is organised bottom-up:
//!
//! * [`bitsource`] generates the driving patterns (the `10101010` word and PRBS15).
//! * [`optics`] models the weak coherent sources, the fiber and Bob's passive
//!   two-detector receiver, producing tagged [`optics::DetectionEvent`]s.
//! * [`protocol`] clocks a whole characterization session, assigns events to
//!   time slots and performs time-window sifting.
//! * [`analytics`] turns sessions into histograms, rates, QBER and error budgets.
//! * [`adversary`] implements the unambiguous-discrimination intercept-resend attack.
//! * [`config`] and [`experiment`] provide the text configuration format and the
//!   sweep/table drivers used by the command line tool.
//! * [`reference`] holds the laboratory measurements the `tables` driver compares against.

// Parameter checks use negated comparisons so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adversary;
pub mod analytics;
pub mod bitsource;
pub mod config;
mod error;
pub mod experiment;
pub mod optics;
pub mod protocol;
pub mod reference;
pub mod rng;

pub use error::{Error, Result};

/// Crate version, echoed into JSON reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
