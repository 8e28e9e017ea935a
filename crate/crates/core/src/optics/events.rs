use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Physical cause of a click, known in simulation as characterization ground truth.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    /// Photon that took the designed path (analyzer at 45 degrees to its state).
    Signal,
    /// Photon that leaked through an analyzer crossed with its prepared state.
    Leakage,
    /// Thermal dark count or afterpulse.
    Dark,
    /// Designed-path click of a photon re-emitted by the eavesdropper.
    EveResend,
    /// Imported data without ground truth.
    Unknown,
}

impl Origin {
    pub fn name(self) -> &'static str {
        match self {
            Origin::Signal => "signal",
            Origin::Leakage => "leakage",
            Origin::Dark => "dark",
            Origin::EveResend => "eve_resend",
            Origin::Unknown => "unknown",
        }
    }
}

impl std::str::FromStr for Origin {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "signal" => Origin::Signal,
            "leakage" => Origin::Leakage,
            "dark" => Origin::Dark,
            "eve_resend" => Origin::EveResend,
            "unknown" | "" => Origin::Unknown,
            other => return Err(Error::invalid(format!("unknown event origin `{other}`"))),
        })
    }
}

/// One detector click.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub channel: u8,
    /// Picoseconds from session start.
    pub timestamp_ps: i64,
    pub slot_index: u64,
    pub origin: Origin,
    /// Alice's bit in `slot_index`.
    pub truth_bit: u8,
}

impl DetectionEvent {
    pub fn timestamp(&self) -> f64 {
        self.timestamp_ps as f64 * 1e-12
    }
}

pub const EVENTS_CSV_HEADER: &str = "channel,timestamp_ps,slot,origin,truth_bit";

pub fn write_events_csv<W: Write>(mut out: W, events: &[DetectionEvent]) -> std::io::Result<()> {
    writeln!(out, "{EVENTS_CSV_HEADER}")?;
    for e in events {
        writeln!(
            out,
            "{},{},{},{},{}",
            e.channel,
            e.timestamp_ps,
            e.slot_index,
            e.origin.name(),
            e.truth_bit
        )?;
    }
    Ok(())
}

/// Reads the event CSV written by [`write_events_csv`]. `first_line` is the
/// line number of the header within a larger document, for error messages.
pub fn read_events_csv<R: BufRead>(input: R, first_line: usize) -> Result<Vec<DetectionEvent>> {
    let mut lines = input.lines().enumerate();
    match lines.next() {
        Some((_, Ok(h))) if h.trim() == EVENTS_CSV_HEADER => {}
        Some((_, Ok(h))) => return Err(Error::parse(first_line, format!("expected event header, found `{h}`"))),
        Some((_, Err(e))) => return Err(Error::parse(first_line, e.to_string())),
        None => return Err(Error::parse(first_line, "missing event header")),
    }
    let mut events = Vec::new();
    for (i, line) in lines {
        let lineno = first_line + i;
        let line = line.map_err(|e| Error::parse(lineno, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 5 {
            return Err(Error::parse(
                lineno,
                format!("expected 5 fields, found {}", fields.len()),
            ));
        }
        let num = |s: &str, what: &str| -> Result<i64> {
            s.parse::<i64>()
                .map_err(|_| Error::parse(lineno, format!("bad {what} `{s}`")))
        };
        let channel = num(fields[0], "channel")?;
        let truth = num(fields[4], "truth_bit")?;
        if !(0..=1).contains(&channel) || !(0..=1).contains(&truth) {
            return Err(Error::parse(lineno, "channel and truth_bit must be 0 or 1"));
        }
        let slot = num(fields[2], "slot")?;
        if slot < 0 {
            return Err(Error::parse(lineno, "slot must be nonnegative"));
        }
        events.push(DetectionEvent {
            channel: channel as u8,
            timestamp_ps: num(fields[1], "timestamp_ps")?,
            slot_index: slot as u64,
            origin: fields[3]
                .parse()
                .map_err(|e: Error| Error::parse(lineno, e.to_string()))?,
            truth_bit: truth as u8,
        });
    }
    Ok(events)
}
