//! Flat `key = value` experiment configuration.
//!
//! Keys carry a section prefix (`protocol.`, `source.`, `channel.`,
//! `receiver.`, `attack.`, `experiment.`). A bare key such as `clock` is
//! accepted when exactly one known key ends in it. Blank lines and `#`
//! comments are ignored; unknown or repeated keys are errors that name the
//! key and line. All times are in seconds, losses in dB, angles in degrees.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::bitsource::{BitSequence, SequenceKind, PRBS15_DEFAULT_SEED};
use crate::optics::PhotonStatistics;
use crate::protocol::{default_sync_divisor, Engine, SessionConfig, SlotSelection};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Simulate,
    Sweep,
    Histogram,
    Attack,
    OptimizeWindow,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Simulate => "simulate",
            Mode::Sweep => "sweep",
            Mode::Histogram => "histogram",
            Mode::Attack => "attack",
            Mode::OptimizeWindow => "optimize-window",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "simulate" => Mode::Simulate,
            "sweep" => Mode::Sweep,
            "histogram" => Mode::Histogram,
            "attack" => Mode::Attack,
            "optimize-window" => Mode::OptimizeWindow,
            other => return Err(Error::invalid(format!("unknown mode `{other}`"))),
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl std::str::FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(Error::invalid(format!("unknown output format `{other}`"))),
        }
    }
}

impl OutputFormat {
    pub fn name(self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        }
    }
}

/// How a sweep distance is realised.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMode {
    /// Zero-length fiber plus an attenuator of `distance * attenuation` dB.
    #[default]
    Attenuation,
    /// Physical fiber length: adds dispersion and drift.
    Length,
}

impl std::str::FromStr for DistanceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attenuation" => Ok(DistanceMode::Attenuation),
            "length" => Ok(DistanceMode::Length),
            other => Err(Error::invalid(format!("unknown distance mode `{other}`"))),
        }
    }
}

impl DistanceMode {
    pub fn name(self) -> &'static str {
        match self {
            DistanceMode::Attenuation => "attenuation",
            DistanceMode::Length => "length",
        }
    }
}

/// A fully resolved experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub session: SessionConfig,
    /// Sweep points, km.
    pub distances: Vec<f64>,
    pub distance_mode: DistanceMode,
    /// Window fractions of the bit width.
    pub windows: Vec<f64>,
    pub mode: Mode,
    pub output_path: Option<PathBuf>,
    pub output_format: OutputFormat,
    /// State separation used for the eavesdropper-information term, degrees.
    pub privacy_theta: f64,
    /// Rate-monitor tolerance for attack detection, fraction.
    pub rate_tolerance: f64,
    /// Histogram bin width, seconds; `None` means 1/1024 of the histogram span.
    pub bin_width: Option<f64>,
    /// First pattern bit of the histogram window.
    pub analysis_start: u64,
    /// Bits in the histogram window; `None` means the whole sync period.
    pub analysis_window: Option<u64>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            session: SessionConfig::default(),
            distances: vec![0.0],
            distance_mode: DistanceMode::Attenuation,
            windows: vec![0.5],
            mode: Mode::Simulate,
            output_path: None,
            output_format: OutputFormat::Csv,
            privacy_theta: 45.0,
            rate_tolerance: 0.1,
            bin_width: None,
            analysis_start: 0,
            analysis_window: None,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        self.session.validate()?;
        if self.distances.is_empty() {
            return Err(Error::InvalidConfig("distance list is empty".into()));
        }
        if self.windows.is_empty() {
            return Err(Error::InvalidConfig("window list is empty".into()));
        }
        Ok(())
    }
}

type Setter = fn(&mut ExperimentSpec, &str) -> std::result::Result<(), String>;

fn num(v: &str) -> std::result::Result<f64, String> {
    let x: f64 = v.parse().map_err(|_| format!("`{v}` is not a number"))?;
    if !x.is_finite() {
        return Err(format!("`{v}` is not finite"));
    }
    Ok(x)
}

fn nonneg(v: &str) -> std::result::Result<f64, String> {
    let x = num(v)?;
    if x < 0.0 {
        return Err(format!("{x} must be nonnegative"));
    }
    Ok(x)
}

fn positive(v: &str) -> std::result::Result<f64, String> {
    let x = num(v)?;
    if x <= 0.0 {
        return Err(format!("{x} must be positive"));
    }
    Ok(x)
}

fn probability(v: &str) -> std::result::Result<f64, String> {
    let x = num(v)?;
    if !(0.0..=1.0).contains(&x) {
        return Err(format!("{x} must lie in [0, 1]"));
    }
    Ok(x)
}

fn fraction(v: &str) -> std::result::Result<f64, String> {
    let x = num(v)?;
    if !(x > 0.0 && x <= 1.0) {
        return Err(format!("{x} must lie in (0, 1]"));
    }
    Ok(x)
}

fn integer(v: &str) -> std::result::Result<u64, String> {
    let parsed = match v.strip_prefix("0x").or_else(|| v.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => v.parse(),
    };
    parsed.map_err(|_| format!("`{v}` is not a nonnegative integer"))
}

fn boolean(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(format!("`{v}` is not a boolean")),
    }
}

fn list(v: &str, item: fn(&str) -> std::result::Result<f64, String>) -> std::result::Result<Vec<f64>, String> {
    let items: Vec<&str> = v.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if items.is_empty() {
        return Err("list must not be empty".into());
    }
    items.into_iter().map(item).collect()
}

fn angle(v: &str) -> std::result::Result<f64, String> {
    num(v)
}

fn theta(v: &str) -> std::result::Result<f64, String> {
    let x = num(v)?;
    if !(0.0..=90.0).contains(&x) {
        return Err(format!("{x} must lie in [0, 90] degrees"));
    }
    Ok(x)
}

fn parsed<T: std::str::FromStr<Err = Error>>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|e: Error| match e {
        Error::InvalidArgument(m) => m,
        other => other.to_string(),
    })
}

fn selection(v: &str) -> std::result::Result<SlotSelection, String> {
    if v == "all" {
        return Ok(SlotSelection::All);
    }
    let parts: Vec<&str> = v.split('/').collect();
    match parts.as_slice() {
        ["periodic", p, o, l] => Ok(SlotSelection::Periodic {
            period: integer(p)?,
            offset: integer(o)?,
            len: integer(l)?,
        }),
        _ => Err(format!("`{v}` is not `all` or `periodic/PERIOD/OFFSET/LEN`")),
    }
}

macro_rules! det_keys {
    ($($key:literal => |$s:ident, $v:ident| $body:expr;)*) => {
        &[$(($key, |$s: &mut ExperimentSpec, $v: &str| { $body; Ok(()) }),)*]
    };
}

/// Keys applied after the sequence keys, in this order; per-channel detector
/// keys come after the shared ones so they override.
const KEYS: &[(&str, Setter)] = det_keys! {
    "protocol.clock" => |s, v| s.session.source.clock_frequency = positive(v)?;
    "protocol.collection_time" => |s, v| s.session.collection_time = positive(v)?;
    "protocol.duration_scale" => |s, v| s.session.duration_scale = positive(v)?;
    "protocol.sync_divisor" => |s, v| s.session.sync_divisor = match integer(v)? { 0 => return Err("must be at least 1".into()), d => d };
    "protocol.sync_jitter" => |s, v| s.session.sync_jitter = nonneg(v)?;
    "protocol.enforce_card_limit" => |s, v| s.session.enforce_card_limit = boolean(v)?;
    "protocol.engine" => |s, v| s.session.engine = parsed::<Engine>(v)?;
    "protocol.selection" => |s, v| s.session.selection = selection(v)?;
    "protocol.seed" => |s, v| s.session.seed = integer(v)?;
    "source.mean_photon_number" => |s, v| s.session.source.mean_photon_number = positive(v)?;
    "source.statistics" => |s, v| s.session.source.statistics = parsed::<PhotonStatistics>(v)?;
    "source.pulse_timing_fwhm" => |s, v| s.session.source.pulse_timing_fwhm = nonneg(v)?;
    "source.angle_bit0" => |s, v| s.session.source.polarization_angle_bit0 = angle(v)?;
    "source.angle_bit1" => |s, v| s.session.source.polarization_angle_bit1 = angle(v)?;
    "channel.fiber_length" => |s, v| s.session.channel.fiber_length = nonneg(v)?;
    "channel.attenuation" => |s, v| s.session.channel.attenuation = nonneg(v)?;
    "channel.extra_attenuation" => |s, v| s.session.channel.extra_attenuation = nonneg(v)?;
    "channel.dispersion" => |s, v| s.session.channel.dispersion = nonneg(v)?;
    "channel.source_linewidth" => |s, v| s.session.channel.source_linewidth = nonneg(v)?;
    "channel.polarization_drift_rate" => |s, v| s.session.channel.polarization_drift_rate = nonneg(v)?;
    "receiver.pbs_extinction" => |s, v| s.session.receiver.pbs_extinction = {
        let x = num(v)?;
        if !(0.0..0.5).contains(&x) { return Err(format!("{x} must lie in [0, 0.5)")); }
        x
    };
    "receiver.analyzer_angle_ch0" => |s, v| s.session.receiver.analyzer_angle[0] = angle(v)?;
    "receiver.analyzer_angle_ch1" => |s, v| s.session.receiver.analyzer_angle[1] = angle(v)?;
    "receiver.insertion_loss" => |s, v| s.session.receiver.insertion_loss = nonneg(v)?;
    "receiver.extra_dark_rate" => |s, v| s.session.receiver.extra_dark_rate = nonneg(v)?;
    "receiver.efficiency" => |s, v| { let x = probability(v)?; for d in &mut s.session.receiver.detectors { d.efficiency = x; } };
    "receiver.dark_rate" => |s, v| { let x = nonneg(v)?; for d in &mut s.session.receiver.detectors { d.dark_rate = x; } };
    "receiver.jitter_fwhm" => |s, v| { let x = nonneg(v)?; for d in &mut s.session.receiver.detectors { d.jitter_fwhm = x; } };
    "receiver.dead_time" => |s, v| { let x = nonneg(v)?; for d in &mut s.session.receiver.detectors { d.dead_time = x; } };
    "receiver.afterpulse_prob" => |s, v| { let x = probability(v)?; for d in &mut s.session.receiver.detectors { d.afterpulse_prob = x; } };
    "receiver.ch0.efficiency" => |s, v| s.session.receiver.detectors[0].efficiency = probability(v)?;
    "receiver.ch0.dark_rate" => |s, v| s.session.receiver.detectors[0].dark_rate = nonneg(v)?;
    "receiver.ch0.jitter_fwhm" => |s, v| s.session.receiver.detectors[0].jitter_fwhm = nonneg(v)?;
    "receiver.ch0.dead_time" => |s, v| s.session.receiver.detectors[0].dead_time = nonneg(v)?;
    "receiver.ch0.afterpulse_prob" => |s, v| s.session.receiver.detectors[0].afterpulse_prob = probability(v)?;
    "receiver.ch1.efficiency" => |s, v| s.session.receiver.detectors[1].efficiency = probability(v)?;
    "receiver.ch1.dark_rate" => |s, v| s.session.receiver.detectors[1].dark_rate = nonneg(v)?;
    "receiver.ch1.jitter_fwhm" => |s, v| s.session.receiver.detectors[1].jitter_fwhm = nonneg(v)?;
    "receiver.ch1.dead_time" => |s, v| s.session.receiver.detectors[1].dead_time = nonneg(v)?;
    "receiver.ch1.afterpulse_prob" => |s, v| s.session.receiver.detectors[1].afterpulse_prob = probability(v)?;
    "attack.enabled" => |s, v| s.session.attack.enabled = boolean(v)?;
    "attack.theta" => |s, v| s.session.attack.theta = theta(v)?;
    "attack.substitute_channel_loss" => |s, v| s.session.attack.substitute_channel_loss = nonneg(v)?;
    "attack.resend_photon_number" => |s, v| s.session.attack.resend_photon_number = u32::try_from(integer(v)?).map_err(|_| "too large".to_string())?;
    "experiment.mode" => |s, v| s.mode = parsed::<Mode>(v)?;
    "experiment.distances" => |s, v| s.distances = list(v, nonneg)?;
    "experiment.distance_mode" => |s, v| s.distance_mode = parsed::<DistanceMode>(v)?;
    "experiment.windows" => |s, v| s.windows = list(v, fraction)?;
    "experiment.output" => |s, v| s.output_path = Some(PathBuf::from(v));
    "experiment.format" => |s, v| s.output_format = parsed::<OutputFormat>(v)?;
    "experiment.privacy_theta" => |s, v| s.privacy_theta = theta(v)?;
    "experiment.rate_tolerance" => |s, v| s.rate_tolerance = probability(v)?;
    "experiment.bin_width" => |s, v| s.bin_width = Some(positive(v)?);
    "experiment.analysis_start" => |s, v| s.analysis_start = integer(v)?;
    "experiment.analysis_window" => |s, v| s.analysis_window = Some(match integer(v)? { 0 => return Err("must be at least 1".into()), n => n });
};

const SEQUENCE_KEYS: [&str; 3] = ["protocol.sequence", "protocol.prbs_seed", "protocol.pattern"];

fn all_keys() -> impl Iterator<Item = &'static str> {
    SEQUENCE_KEYS.iter().copied().chain(KEYS.iter().map(|(k, _)| *k))
}

/// Resolves a possibly bare key to its full name.
fn resolve_key(key: &str, line: usize) -> Result<&'static str> {
    if let Some(k) = all_keys().find(|k| *k == key) {
        return Ok(k);
    }
    let matches: Vec<&'static str> = all_keys()
        .filter(|k| k.split_once('.').map(|(_, rest)| rest == key).unwrap_or(false))
        .collect();
    match matches.as_slice() {
        [one] => Ok(one),
        [] => Err(Error::config(line, key, "unknown key")),
        many => Err(Error::config(
            line,
            key,
            format!("ambiguous key, use one of {}", many.join(", ")),
        )),
    }
}

/// Reads and parses a configuration file.
pub fn read_config(path: &Path) -> Result<ExperimentSpec> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text)
}

/// Parses a configuration document into a fully resolved experiment.
pub fn parse_config(text: &str) -> Result<ExperimentSpec> {
    let mut entries: BTreeMap<&'static str, (usize, String)> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| Error::parse(line, format!("expected `key = value`, found `{content}`")))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(Error::parse(line, "missing key"));
        }
        let full = resolve_key(key, line)?;
        if let Some((first, _)) = entries.insert(full, (line, value.to_string())) {
            return Err(Error::config(line, full, format!("already set on line {first}")));
        }
    }

    let get = |k: &str| entries.get(k).map(|(l, v)| (*l, v.as_str()));
    let kind = match get("protocol.sequence") {
        Some((line, v)) => parsed::<SequenceKind>(v).map_err(|m| Error::config(line, "protocol.sequence", m))?,
        None => SequenceKind::Word8,
    };
    let sequence = match kind {
        SequenceKind::Word8 => BitSequence::word8(),
        SequenceKind::Prbs15 => {
            let seed = match get("protocol.prbs_seed") {
                Some((line, v)) => integer(v)
                    .and_then(|s| u16::try_from(s).map_err(|_| "seed must fit in 15 bits".to_string()))
                    .map_err(|m| Error::config(line, "protocol.prbs_seed", m))?,
                None => PRBS15_DEFAULT_SEED,
            };
            BitSequence::prbs15(seed).map_err(|e| {
                Error::config(
                    get("protocol.prbs_seed").map_or(0, |(l, _)| l),
                    "protocol.prbs_seed",
                    e.to_string(),
                )
            })?
        }
        SequenceKind::Custom => {
            let (line, v) = get("protocol.pattern")
                .ok_or_else(|| Error::config(0, "protocol.pattern", "required for a custom sequence"))?;
            BitSequence::from_text(v).map_err(|e| Error::config(line, "protocol.pattern", e.to_string()))?
        }
    };
    for key in ["protocol.prbs_seed", "protocol.pattern"] {
        let relevant = match key {
            "protocol.prbs_seed" => kind == SequenceKind::Prbs15,
            _ => kind == SequenceKind::Custom,
        };
        if let (Some((line, _)), false) = (get(key), relevant) {
            return Err(Error::config(
                line,
                key,
                format!("not used with sequence `{}`", kind.name()),
            ));
        }
    }

    let mut spec = ExperimentSpec {
        session: SessionConfig::for_sequence(sequence),
        ..Default::default()
    };
    for (key, setter) in KEYS {
        if let Some((line, value)) = get(key) {
            setter(&mut spec, value).map_err(|m| Error::config(line, key, m))?;
        }
    }
    spec.validate()?;
    Ok(spec)
}

fn f(x: f64) -> String {
    format!("{x:?}")
}

/// Session keys, one `key = value` line each, in canonical order.
pub fn session_to_text(c: &SessionConfig) -> String {
    let mut out = String::new();
    let mut put = |k: &str, v: String| {
        let _ = writeln!(out, "{k} = {v}");
    };
    put("protocol.sequence", c.sequence.kind().name().to_string());
    match c.sequence.kind() {
        SequenceKind::Prbs15 => put("protocol.prbs_seed", format!("0x{:04X}", c.sequence.prbs_seed())),
        SequenceKind::Custom => put(
            "protocol.pattern",
            c.sequence
                .pattern()
                .iter()
                .map(|b| if *b == 1 { '1' } else { '0' })
                .collect(),
        ),
        SequenceKind::Word8 => {}
    }
    put("protocol.clock", f(c.source.clock_frequency));
    put("protocol.collection_time", f(c.collection_time));
    put("protocol.duration_scale", f(c.duration_scale));
    put("protocol.sync_divisor", c.sync_divisor.to_string());
    put("protocol.sync_jitter", f(c.sync_jitter));
    put("protocol.enforce_card_limit", c.enforce_card_limit.to_string());
    put("protocol.engine", c.engine.name().to_string());
    put(
        "protocol.selection",
        match c.selection {
            SlotSelection::All => "all".to_string(),
            SlotSelection::Periodic { period, offset, len } => format!("periodic/{period}/{offset}/{len}"),
        },
    );
    put("protocol.seed", c.seed.to_string());
    let s = &c.source;
    put("source.mean_photon_number", f(s.mean_photon_number));
    put("source.statistics", s.statistics.name().to_string());
    put("source.pulse_timing_fwhm", f(s.pulse_timing_fwhm));
    put("source.angle_bit0", f(s.polarization_angle_bit0));
    put("source.angle_bit1", f(s.polarization_angle_bit1));
    let ch = &c.channel;
    put("channel.fiber_length", f(ch.fiber_length));
    put("channel.attenuation", f(ch.attenuation));
    put("channel.extra_attenuation", f(ch.extra_attenuation));
    put("channel.dispersion", f(ch.dispersion));
    put("channel.source_linewidth", f(ch.source_linewidth));
    put("channel.polarization_drift_rate", f(ch.polarization_drift_rate));
    let rx = &c.receiver;
    put("receiver.pbs_extinction", f(rx.pbs_extinction));
    put("receiver.analyzer_angle_ch0", f(rx.analyzer_angle[0]));
    put("receiver.analyzer_angle_ch1", f(rx.analyzer_angle[1]));
    put("receiver.insertion_loss", f(rx.insertion_loss));
    put("receiver.extra_dark_rate", f(rx.extra_dark_rate));
    for (i, d) in rx.detectors.iter().enumerate() {
        put(&format!("receiver.ch{i}.efficiency"), f(d.efficiency));
        put(&format!("receiver.ch{i}.dark_rate"), f(d.dark_rate));
        put(&format!("receiver.ch{i}.jitter_fwhm"), f(d.jitter_fwhm));
        put(&format!("receiver.ch{i}.dead_time"), f(d.dead_time));
        put(&format!("receiver.ch{i}.afterpulse_prob"), f(d.afterpulse_prob));
    }
    let a = &c.attack;
    put("attack.enabled", a.enabled.to_string());
    put("attack.theta", f(a.theta));
    put("attack.substitute_channel_loss", f(a.substitute_channel_loss));
    put("attack.resend_photon_number", a.resend_photon_number.to_string());
    out
}

/// The whole experiment as a document accepted by [`parse_config`].
pub fn spec_to_text(spec: &ExperimentSpec) -> String {
    let mut out = session_to_text(&spec.session);
    let join = |v: &[f64]| v.iter().map(|x| f(*x)).collect::<Vec<_>>().join(", ");
    let _ = writeln!(out, "experiment.mode = {}", spec.mode.name());
    let _ = writeln!(out, "experiment.distances = {}", join(&spec.distances));
    let _ = writeln!(out, "experiment.distance_mode = {}", spec.distance_mode.name());
    let _ = writeln!(out, "experiment.windows = {}", join(&spec.windows));
    if let Some(p) = &spec.output_path {
        let _ = writeln!(out, "experiment.output = {}", p.display());
    }
    let _ = writeln!(out, "experiment.format = {}", spec.output_format.name());
    let _ = writeln!(out, "experiment.privacy_theta = {}", f(spec.privacy_theta));
    let _ = writeln!(out, "experiment.rate_tolerance = {}", f(spec.rate_tolerance));
    if let Some(b) = spec.bin_width {
        let _ = writeln!(out, "experiment.bin_width = {}", f(b));
    }
    let _ = writeln!(out, "experiment.analysis_start = {}", spec.analysis_start);
    if let Some(w) = spec.analysis_window {
        let _ = writeln!(out, "experiment.analysis_window = {w}");
    }
    out
}

/// Configuration echo for reports: every key with its value.
pub fn spec_pairs(spec: &ExperimentSpec) -> BTreeMap<String, String> {
    spec_to_text(spec)
        .lines()
        .filter_map(|l| l.split_once(" = ").map(|(k, v)| (k.to_string(), v.to_string())))
        .collect()
}

/// Keeps the sync divisor consistent when the sequence changes programmatically.
pub fn with_sequence(mut session: SessionConfig, sequence: BitSequence) -> SessionConfig {
    session.sync_divisor = default_sync_divisor(sequence.kind(), sequence.period() as u64);
    session.sequence = sequence;
    session
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn minimal_document_uses_defaults() {
        let spec = parse_config("clock=1e9\n").unwrap();
        let mut expected = ExperimentSpec::default();
        expected.session.source.clock_frequency = 1e9;
        assert_eq!(spec, expected);
        assert_eq!(spec.session.receiver.pbs_extinction, 0.002);
        assert_eq!(spec.session.receiver.detectors[1].dark_rate, 180.0);
        assert_eq!(spec.session.collection_time, 60.0);
        assert_eq!(spec.session.sync_divisor, 16);
    }

    #[test]
    fn range_errors_name_key_and_line() {
        match parse_config("# comment\n\npbs_extinction = 0.7\n") {
            Err(Error::Config { line, key, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(key, "receiver.pbs_extinction");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_config("bogus = 1"), Err(Error::Config { line: 1, .. })));
        assert!(matches!(
            parse_config("clock = 1e9\nclock = 2e9"),
            Err(Error::Config { line: 2, .. })
        ));
        assert!(matches!(
            parse_config("no equals sign"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(parse_config("clock = fast"), Err(Error::Config { .. })));
        assert!(matches!(
            parse_config("experiment.distances ="),
            Err(Error::Config { .. })
        ));
        assert!(matches!(parse_config("windows = 0.5, 1.2"), Err(Error::Config { .. })));
    }

    #[test]
    fn table_distance_list() {
        let spec = parse_config("distances = 0, 2.15, 3.75, 4.19, 6.16, 8.08, 9.96, 11.07, 11.85").unwrap();
        assert_eq!(
            spec.distances,
            vec![0.0, 2.15, 3.75, 4.19, 6.16, 8.08, 9.96, 11.07, 11.85]
        );
    }

    #[test]
    fn prbs_sequence_sets_divisor_and_time() {
        let spec = parse_config("sequence = prbs15\nprbs_seed = 0x1234\nclock = 1e9").unwrap();
        assert_eq!(spec.session.sequence.kind(), SequenceKind::Prbs15);
        assert_eq!(spec.session.sequence.prbs_seed(), 0x1234);
        assert_eq!(spec.session.sync_divisor, 16 * 32767);
        assert_eq!(spec.session.collection_time, 600.0);
        assert!(parse_config("sequence = prbs15\nprbs_seed = 0").is_err());
        assert!(parse_config("prbs_seed = 5").is_err());
    }

    #[test]
    fn per_channel_detector_overrides_shared_value() {
        let spec = parse_config("receiver.ch1.efficiency = 0.3\nreceiver.efficiency = 0.5").unwrap();
        assert_eq!(spec.session.receiver.detectors[0].efficiency, 0.5);
        assert_eq!(spec.session.receiver.detectors[1].efficiency, 0.3);
    }

    #[test]
    fn ambiguous_bare_key_rejected() {
        // `efficiency` is unique; `dark_rate` is too, `ch0.dark_rate` needs its section.
        assert!(parse_config("efficiency = 0.5").is_ok());
        assert!(parse_config("ch0.dark_rate = 10").is_ok());
    }

    #[test]
    fn card_limit_enforced() {
        assert!(matches!(parse_config("clock = 4e9"), Err(Error::InvalidConfig(_))));
        assert!(parse_config("clock = 4e9\nenforce_card_limit = false").is_ok());
    }

    #[test]
    fn custom_pattern() {
        let spec = parse_config("sequence = custom\npattern = 1100").unwrap();
        assert_eq!(spec.session.sequence.pattern(), &[1, 1, 0, 0]);
        assert_eq!(spec.session.sync_divisor, 64);
        assert!(parse_config("sequence = custom").is_err());
    }

    prop_compose! {
        fn arb_spec()(
            clock in prop_oneof![Just(1e8), Just(1e9), 1e8f64..2e9],
            mu in 0.01f64..1.0,
            length in 0.0f64..20.0,
            eps in 0.0f64..0.49,
            eff0 in 0.0f64..1.0,
            jitter in 0.0f64..1e-9,
            seed in any::<u64>(),
            prbs in any::<bool>(),
            prbs_seed in 1u16..0x7FFF,
            distances in proptest::collection::vec(0.0f64..20.0, 1..5),
            windows in proptest::collection::vec(0.01f64..1.0, 1..5),
            attack in any::<bool>(),
            scale in 1e-6f64..1.0,
        ) -> ExperimentSpec {
            let sequence = if prbs { BitSequence::prbs15(prbs_seed).unwrap() } else { BitSequence::word8() };
            let mut s = ExperimentSpec::default();
            s.session = SessionConfig::for_sequence(sequence);
            s.session.source.clock_frequency = clock;
            s.session.source.mean_photon_number = mu;
            s.session.channel.fiber_length = length;
            s.session.receiver.pbs_extinction = eps;
            s.session.receiver.detectors[0].efficiency = eff0;
            s.session.receiver.detectors[1].jitter_fwhm = jitter;
            s.session.seed = seed;
            s.session.attack.enabled = attack;
            s.session.duration_scale = scale;
            s.distances = distances;
            s.windows = windows;
            s.mode = Mode::Sweep;
            s.output_format = OutputFormat::Json;
            s.bin_width = Some(1e-10);
            s.analysis_window = Some(127);
            s
        }
    }

    proptest! {
        #[test]
        fn emit_then_parse_round_trips(spec in arb_spec()) {
            let back = parse_config(&spec_to_text(&spec)).unwrap();
            prop_assert_eq!(back, spec);
        }
    }
}
