//! Photon-level model of the transmitter, the fiber and Bob's passive receiver.
//!
//! A [`Pulse`] is emitted per clock slot, loses photons and picks up timing
//! spread in the [`Channel`], and is finally split, analysed and detected by
//! the [`ReceiverParams`] model, which yields timestamped [`DetectionEvent`]s
//! tagged with the physical origin of each click.

mod channel;
mod events;
mod receiver;
mod source;

pub use channel::{Channel, ChannelParams, DriftPath};
pub use events::{read_events_csv, write_events_csv, DetectionEvent, Origin, EVENTS_CSV_HEADER};
pub use receiver::{
    analyzer_pass_probability, apply_dead_time, dark_events, dark_events_between, detect, detect_into, DetectorParams,
    ReceiverParams,
};
pub(crate) use receiver::{detect_prethinned, max_click_probability};
pub use source::{
    emit_pulse, emit_pulse_with_count, sample_poisson, sample_zero_truncated_poisson, PhotonStatistics, Pulse,
    SourceParams,
};

use crate::{Error, Result};

/// FWHM of a Gaussian divided by its standard deviation, `2 sqrt(2 ln 2)`.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949;

pub const PS_PER_S: f64 = 1e12;

/// Power transmittance of a loss given in dB.
pub fn transmittance_from_db(loss_db: f64) -> Result<f64> {
    if !(loss_db >= 0.0) {
        return Err(Error::invalid(format!("loss must be nonnegative, got {loss_db} dB")));
    }
    Ok(db_to_transmittance(loss_db))
}

#[inline]
pub(crate) fn db_to_transmittance(loss_db: f64) -> f64 {
    10f64.powf(-loss_db / 10.0)
}

#[inline]
pub(crate) fn seconds_to_ps(t: f64) -> i64 {
    (t * PS_PER_S).round() as i64
}

/// Event time on the picosecond grid. Truncates, so a time inside a bit
/// period never lands in the next one.
pub(crate) fn timestamp_to_ps(t: f64) -> i64 {
    (t * PS_PER_S).floor() as i64
}
