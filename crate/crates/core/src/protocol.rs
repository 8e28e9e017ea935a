//! Session engine: clocks the bit sequence through the optics model, models
//! the synchronization channel, assigns clicks to time slots and performs
//! time-window sifting.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::StandardNormal;
#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::adversary::{intercept, AttackConfig, AttackOutcome};
use crate::bitsource::{BitSequence, SequenceKind};
use crate::optics::{
    apply_dead_time, dark_events_between, detect_into, detect_prethinned, emit_pulse, emit_pulse_with_count,
    max_click_probability, read_events_csv, sample_zero_truncated_poisson, seconds_to_ps, write_events_csv, Channel,
    ChannelParams, DetectionEvent, Origin, PhotonStatistics, ReceiverParams, SourceParams, PS_PER_S,
};
use crate::rng::{Stream, StreamRng};
use crate::{Error, Result};

/// Highest synchronization frequency accepted by the timing card.
pub const SYNC_CARD_LIMIT_HZ: f64 = 200e6;

/// Mean delay of an afterpulse beyond the dead time.
pub const AFTERPULSE_MEAN_DELAY: f64 = 100e-9;

/// Largest number of consecutive slots simulated as one unit of work.
const SEGMENT_SLOTS: u64 = 1 << 16;

/// Sync divisor used for a pattern: 16 for the 8-bit word, 16 x period otherwise.
pub fn default_sync_divisor(kind: SequenceKind, period: u64) -> u64 {
    match kind {
        SequenceKind::Word8 => 16,
        SequenceKind::Prbs15 | SequenceKind::Custom => 16 * period,
    }
}

/// Synchronization frequency for the clock and pattern kind, checked against
/// the timing card's input limit.
pub fn sync_frequency(clock: f64, kind: SequenceKind) -> Result<f64> {
    if !(clock > 0.0) {
        return Err(Error::invalid("clock frequency must be positive"));
    }
    let period = match kind {
        SequenceKind::Word8 => 8,
        SequenceKind::Prbs15 => crate::bitsource::PRBS15_PERIOD as u64,
        SequenceKind::Custom => {
            return Err(Error::invalid(
                "sync frequency of a custom pattern depends on its period; use the session's sync divisor",
            ))
        }
    };
    checked_sync_frequency(clock, default_sync_divisor(kind, period))
}

fn checked_sync_frequency(clock: f64, divisor: u64) -> Result<f64> {
    let f = clock / divisor as f64;
    if f > SYNC_CARD_LIMIT_HZ {
        return Err(Error::InvalidConfig(format!(
            "sync frequency {f:.4e} Hz exceeds the {SYNC_CARD_LIMIT_HZ:.0} Hz acquisition limit"
        )));
    }
    Ok(f)
}

/// How photon slots are drawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Engine {
    /// Skip slots with no surviving photon by sampling geometric gaps.
    /// Statistically identical to the exhaustive engine and orders of
    /// magnitude faster on lossy links.
    #[default]
    Thinned,
    /// Emit, propagate and detect every slot.
    Exhaustive,
}

impl std::str::FromStr for Engine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "thinned" => Ok(Engine::Thinned),
            "exhaustive" => Ok(Engine::Exhaustive),
            other => Err(Error::invalid(format!("unknown engine `{other}`"))),
        }
    }
}

impl Engine {
    pub fn name(self) -> &'static str {
        match self {
            Engine::Thinned => "thinned",
            Engine::Exhaustive => "exhaustive",
        }
    }
}

/// Which slots of the session timeline are simulated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SlotSelection {
    #[default]
    All,
    /// Slots `n` with `(n - offset) mod period < len`; everything else stays dark.
    /// Used to collect histograms of a short window of a long pattern.
    Periodic { period: u64, offset: u64, len: u64 },
}

impl SlotSelection {
    /// Consecutive runs of selected slots in `[0, n_slots)`, each at most
    /// [`SEGMENT_SLOTS`] long, in increasing order.
    fn segments(&self, n_slots: u64) -> Vec<(u64, u64)> {
        let mut out = Vec::new();
        let mut push = |start: u64, end: u64| {
            let mut s = start;
            while s < end {
                let e = (s + SEGMENT_SLOTS).min(end);
                out.push((s, e));
                s = e;
            }
        };
        match *self {
            SlotSelection::All => push(0, n_slots),
            SlotSelection::Periodic { period, offset, len } => {
                let mut base = 0u64;
                while base + offset < n_slots {
                    let start = base + offset;
                    push(start, (start + len).min(n_slots));
                    base += period;
                }
            }
        }
        out
    }

    fn validate(&self) -> Result<()> {
        if let SlotSelection::Periodic { period, offset, len } = *self {
            if period == 0 || len == 0 || len > period || offset >= period {
                return Err(Error::InvalidConfig(
                    "periodic selection needs 0 < len <= period and offset < period".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Every physical and protocol parameter of one characterization session.
#[derive(Clone, Debug, PartialEq)]
pub struct SessionConfig {
    pub sequence: BitSequence,
    /// Includes the clock frequency.
    pub source: SourceParams,
    pub channel: ChannelParams,
    pub receiver: ReceiverParams,
    pub attack: AttackConfig,
    /// Nominal collection time T, seconds.
    pub collection_time: f64,
    /// The session simulates `collection_time * duration_scale` seconds and
    /// reports rates per simulated second.
    pub duration_scale: f64,
    pub sync_divisor: u64,
    /// Gaussian jitter of the sync timestamps, seconds standard deviation.
    pub sync_jitter: f64,
    /// Reject sync frequencies above [`SYNC_CARD_LIMIT_HZ`].
    pub enforce_card_limit: bool,
    pub selection: SlotSelection,
    pub engine: Engine,
    pub seed: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self::for_sequence(BitSequence::word8())
    }
}

impl SessionConfig {
    /// Defaults for `sequence`: T = 60 s for the 8-bit word, 600 s otherwise.
    pub fn for_sequence(sequence: BitSequence) -> Self {
        let kind = sequence.kind();
        let collection_time = if kind == SequenceKind::Word8 { 60.0 } else { 600.0 };
        Self {
            sync_divisor: default_sync_divisor(kind, sequence.period() as u64),
            sequence,
            source: SourceParams::default(),
            channel: ChannelParams::default(),
            receiver: ReceiverParams::default(),
            attack: AttackConfig::default(),
            collection_time,
            duration_scale: 1.0,
            sync_jitter: 0.0,
            enforce_card_limit: true,
            selection: SlotSelection::All,
            engine: Engine::Thinned,
            seed: 0,
        }
    }

    pub fn clock(&self) -> f64 {
        self.source.clock_frequency
    }

    pub fn bit_width(&self) -> f64 {
        1.0 / self.clock()
    }

    /// Simulated seconds.
    pub fn duration(&self) -> f64 {
        self.collection_time * self.duration_scale
    }

    pub fn n_slots(&self) -> u64 {
        // Guard against 59.999... from the product of decimal inputs.
        (self.duration() * self.clock() * (1.0 + 1e-12)).floor() as u64
    }

    pub fn sync_period(&self) -> f64 {
        self.sync_divisor as f64 / self.clock()
    }

    pub fn sync_frequency(&self) -> Result<f64> {
        if self.enforce_card_limit {
            checked_sync_frequency(self.clock(), self.sync_divisor)
        } else {
            Ok(self.clock() / self.sync_divisor as f64)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        self.channel.validate()?;
        self.receiver.validate()?;
        self.attack.validate()?;
        self.selection.validate()?;
        if !(self.collection_time > 0.0 && self.collection_time.is_finite()) {
            return Err(Error::InvalidConfig("collection time must be positive".into()));
        }
        if !(self.duration_scale > 0.0 && self.duration_scale.is_finite()) {
            return Err(Error::InvalidConfig("duration scale must be positive".into()));
        }
        if self.sync_divisor == 0 {
            return Err(Error::InvalidConfig("sync divisor must be at least 1".into()));
        }
        if !(self.sync_jitter >= 0.0) {
            return Err(Error::InvalidConfig("sync jitter must be nonnegative".into()));
        }
        self.sync_frequency()?;
        if self.n_slots() == 0 {
            return Err(Error::InvalidConfig("session shorter than one bit period".into()));
        }
        Ok(())
    }
}

/// One bit period of the session timeline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeSlot {
    pub index: u64,
    pub start: f64,
    pub center: f64,
    pub width: f64,
}

impl TimeSlot {
    pub fn new(index: u64, clock: f64) -> Self {
        let width = 1.0 / clock;
        let start = index as f64 * width;
        Self {
            index,
            start,
            center: start + width / 2.0,
            width,
        }
    }
}

/// Ideal synchronization pulses at multiples of the sync period, with
/// optional Gaussian timing jitter. Timestamps are generated on demand.
#[derive(Clone, Debug, PartialEq)]
pub struct SyncTrain {
    /// Seconds.
    pub period: f64,
    pub count: u64,
    /// Seconds standard deviation.
    pub jitter: f64,
    seed: u64,
}

impl SyncTrain {
    pub fn new(period: f64, duration: f64, jitter: f64, seed: u64) -> Self {
        Self {
            period,
            count: (duration / period * (1.0 + 1e-12)).ceil() as u64,
            jitter,
            seed,
        }
    }

    /// Timestamp of the `k`-th sync pulse, seconds.
    pub fn timestamp(&self, k: u64) -> f64 {
        let ideal = k as f64 * self.period;
        if self.jitter > 0.0 {
            let z: f64 = StreamRng::new(self.seed, Stream::Sync, k).sample(StandardNormal);
            ideal + self.jitter * z
        } else {
            ideal
        }
    }

    pub fn timestamps(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.count).map(|k| self.timestamp(k))
    }

    /// Index of the last sync pulse at or before `t`.
    pub fn preceding(&self, t: f64) -> Option<u64> {
        if self.count == 0 {
            return None;
        }
        let mut k = ((t / self.period).floor().max(0.0) as u64).min(self.count - 1);
        // Jitter can move the estimate by one period either way.
        while k + 1 < self.count && self.timestamp(k + 1) <= t {
            k += 1;
        }
        while k > 0 && self.timestamp(k) > t {
            k -= 1;
        }
        (self.timestamp(k) <= t).then_some(k)
    }
}

/// Slot and in-slot offset of a timestamp.
pub fn slot_of_event(timestamp: f64, clock: f64) -> Result<(u64, f64)> {
    if !(timestamp >= 0.0) {
        return Err(Error::invalid("timestamp must be nonnegative"));
    }
    let width = 1.0 / clock;
    // Exact boundaries land in the next slot; guard the division's rounding.
    let mut slot = (timestamp * clock).floor();
    if (slot + 1.0) * width <= timestamp {
        slot += 1.0;
    } else if slot * width > timestamp {
        slot -= 1.0;
    }
    Ok((slot as u64, timestamp - slot * width))
}

/// Slot of a picosecond timestamp for a bit period of `period_ps`.
#[inline]
pub(crate) fn slot_of_ps(timestamp_ps: i64, period_ps: f64) -> u64 {
    (timestamp_ps as f64 / period_ps).floor() as u64
}

/// In-slot offset of a picosecond timestamp, picoseconds.
#[inline]
pub(crate) fn offset_ps(timestamp_ps: i64, slot: u64, period_ps: f64) -> f64 {
    timestamp_ps as f64 - slot as f64 * period_ps
}

/// Reconstructs `slot mod sync_divisor` the way Bob does: from the time elapsed
/// since the nearest preceding sync pulse.
pub fn slot_from_sync(timestamp: f64, sync: &SyncTrain, clock: f64, sync_divisor: u64) -> Option<u64> {
    let k = sync.preceding(timestamp)?;
    // Event times sit on the picosecond grid; snap before dividing so a click
    // exactly on a slot edge is not pushed back by rounding.
    let since_ps = ((timestamp - sync.timestamp(k)) * crate::optics::PS_PER_S).round();
    Some(((since_ps * clock / crate::optics::PS_PER_S).floor() as u64) % sync_divisor)
}

/// A finished session: configuration, ground truth and all detector clicks.
#[derive(Clone, Debug, PartialEq)]
pub struct SessionRecord {
    pub config: SessionConfig,
    /// Sorted by timestamp; each event's slot is `floor(timestamp * clock)`.
    pub events: Vec<DetectionEvent>,
    pub sync: SyncTrain,
    /// Simulated seconds.
    pub duration: f64,
    pub n_slots: u64,
    /// Slots actually simulated (differs from `n_slots` under a periodic selection).
    pub n_simulated_slots: u64,
    pub attack: Option<AttackOutcome>,
}

impl SessionRecord {
    /// Alice's bit in `slot`.
    pub fn alice_bit(&self, slot: u64) -> u8 {
        self.config.sequence.bit(slot)
    }

    pub fn clock(&self) -> f64 {
        self.config.clock()
    }

    pub fn period_ps(&self) -> f64 {
        PS_PER_S / self.clock()
    }

    /// Whether `event` falls inside a window of `window_fraction` of the bit
    /// width centered on its slot center.
    pub fn is_gated(&self, event: &DetectionEvent, window_fraction: f64) -> bool {
        gated(event, self.period_ps(), window_fraction)
    }
}

#[inline]
pub(crate) fn gated(event: &DetectionEvent, period_ps: f64, window_fraction: f64) -> bool {
    let off = offset_ps(event.timestamp_ps, event.slot_index, period_ps);
    (off - period_ps / 2.0).abs() <= window_fraction * period_ps / 2.0
}

/// Execution switches that do not change results.
#[derive(Clone, Copy, Debug)]
pub struct RunOptions {
    /// Simulate segments on the thread pool (requires the `parallel` feature).
    pub parallel: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            parallel: cfg!(feature = "parallel"),
        }
    }
}

/// Runs a session with default execution options.
pub fn run_session(config: &SessionConfig) -> Result<SessionRecord> {
    run_session_with(config, RunOptions::default())
}

/// Runs a session. Results depend only on `config`, never on `options`.
pub fn run_session_with(config: &SessionConfig, options: RunOptions) -> Result<SessionRecord> {
    config.validate()?;
    let duration = config.duration();
    let n_slots = config.n_slots();
    let channel = Channel::new(config.channel.clone(), duration, config.seed);
    let substitute = Channel::lossy(config.attack.substitute_channel_loss);
    let ctx = SegmentContext {
        config,
        channel: &channel,
        substitute: &substitute,
        period_ps: PS_PER_S / config.clock(),
        duration_ps: seconds_to_ps(duration),
    };
    let segments = config.selection.segments(n_slots);
    let n_simulated_slots = segments.iter().map(|(s, e)| e - s).sum();

    let outputs: Vec<SegmentOutput> = if options.parallel {
        #[cfg(feature = "parallel")]
        {
            segments.par_iter().map(|&(s, e)| ctx.run(s, e)).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            segments.iter().map(|&(s, e)| ctx.run(s, e)).collect()
        }
    } else {
        segments.iter().map(|&(s, e)| ctx.run(s, e)).collect()
    };

    let mut events = Vec::with_capacity(outputs.iter().map(|o| o.events.len()).sum());
    let mut attack = config.attack.enabled.then(AttackOutcome::default);
    for out in outputs {
        events.extend(out.events);
        if let Some(a) = attack.as_mut() {
            a.intercepted += out.intercepted;
            a.unambiguous += out.unambiguous;
            a.resent += out.unambiguous;
            a.eve_known_slots.extend(out.eve_slots);
        }
    }
    // Stable sort keeps segment order for exact ties, so results are reproducible.
    events.sort_by_key(|e| (e.timestamp_ps, e.channel));
    let dead = dead_times_ps(&config.receiver);
    apply_dead_time(&mut events, dead);
    if config.receiver.detectors.iter().any(|d| d.afterpulse_prob > 0.0) {
        add_afterpulses(&mut events, &ctx);
        events.sort_by_key(|e| (e.timestamp_ps, e.channel));
        apply_dead_time(&mut events, dead);
    }

    Ok(SessionRecord {
        config: config.clone(),
        events,
        sync: SyncTrain::new(config.sync_period(), duration, config.sync_jitter, config.seed),
        duration,
        n_slots,
        n_simulated_slots,
        attack,
    })
}

fn dead_times_ps(rx: &ReceiverParams) -> [i64; 2] {
    [
        seconds_to_ps(rx.detectors[0].dead_time),
        seconds_to_ps(rx.detectors[1].dead_time),
    ]
}

fn add_afterpulses(events: &mut Vec<DetectionEvent>, ctx: &SegmentContext) {
    let rx = &ctx.config.receiver;
    let mut extra = Vec::new();
    for (i, e) in events.iter().enumerate() {
        let det = &rx.detectors[e.channel as usize];
        if det.afterpulse_prob <= 0.0 {
            continue;
        }
        let mut rng = StreamRng::new(ctx.config.seed, Stream::Afterpulse, i as u64);
        if rng.bernoulli(det.afterpulse_prob) {
            let delay = det.dead_time - AFTERPULSE_MEAN_DELAY * rng.uniform_open0().ln();
            let t = e.timestamp_ps + seconds_to_ps(delay);
            if t < ctx.duration_ps {
                let slot = slot_of_ps(t, ctx.period_ps);
                extra.push(DetectionEvent {
                    channel: e.channel,
                    timestamp_ps: t,
                    slot_index: slot,
                    origin: Origin::Dark,
                    truth_bit: ctx.config.sequence.bit(slot),
                });
            }
        }
    }
    events.extend(extra);
}

struct SegmentContext<'a> {
    config: &'a SessionConfig,
    channel: &'a Channel,
    substitute: &'a Channel,
    period_ps: f64,
    duration_ps: i64,
}

#[derive(Default)]
struct SegmentOutput {
    events: Vec<DetectionEvent>,
    intercepted: u64,
    unambiguous: u64,
    eve_slots: Vec<u64>,
}

impl SegmentContext<'_> {
    fn run(&self, start: u64, end: u64) -> SegmentOutput {
        let mut out = SegmentOutput::default();
        match self.config.engine {
            Engine::Exhaustive => self.photons_exhaustive(start, end, &mut out),
            Engine::Thinned => self.photons_thinned(start, end, &mut out),
        }
        let width = self.config.bit_width();
        for channel in 0..2u8 {
            let mut rng = StreamRng::new(self.config.seed, Stream::dark(channel), start);
            dark_events_between(
                self.config.receiver.background_rate(channel),
                start as f64 * width,
                end as f64 * width,
                channel,
                &mut rng,
                &mut out.events,
            );
        }
        // Re-slot every click by where it landed; drop clicks outside the session.
        out.events.retain_mut(|e| {
            if e.timestamp_ps < 0 || e.timestamp_ps >= self.duration_ps {
                return false;
            }
            e.slot_index = slot_of_ps(e.timestamp_ps, self.period_ps);
            e.truth_bit = self.config.sequence.bit(e.slot_index);
            true
        });
        out
    }

    fn photons_exhaustive(&self, start: u64, end: u64, out: &mut SegmentOutput) {
        let cfg = self.config;
        for slot in start..end {
            let mut rng = StreamRng::new(cfg.seed, Stream::Photons, slot);
            let pulse = emit_pulse(cfg.sequence.bit(slot), slot, &cfg.source, &mut rng);
            let elapsed = pulse.slot_start;
            let arriving = if cfg.attack.enabled {
                if pulse.photon_times.is_empty() {
                    continue;
                }
                out.intercepted += 1;
                match intercept(&pulse, &cfg.attack, &cfg.source, &mut rng) {
                    Some(resent) => {
                        out.unambiguous += 1;
                        out.eve_slots.push(slot);
                        self.substitute.propagate(resent, elapsed, &mut rng)
                    }
                    None => continue,
                }
            } else {
                self.channel.propagate(pulse, elapsed, &mut rng)
            };
            detect_into(&arriving, &cfg.receiver, &mut rng, &mut out.events);
        }
    }

    fn photons_thinned(&self, start: u64, end: u64, out: &mut SegmentOutput) {
        let cfg = self.config;
        let mu = cfg.source.mean_photon_number;
        let single = cfg.source.statistics == PhotonStatistics::Single;
        // Without Eve, photons are thinned by the fiber and by the largest
        // click probability at the receiver; detection divides the latter out.
        let kept = max_click_probability(&cfg.receiver);
        let n_f = self.channel.transmittance() * kept;
        // A "hit" is a slot whose pulse still matters downstream: a nonempty
        // pulse when Eve intercepts at Alice's output, otherwise a pulse with at
        // least one photon surviving the thinning.
        let p_hit = match (cfg.attack.enabled, single) {
            (true, true) => 1.0,
            (true, false) => -(-mu).exp_m1(),
            (false, true) => n_f,
            (false, false) => -(-mu * n_f).exp_m1(),
        };
        if p_hit <= 0.0 {
            return;
        }
        let log_miss = (-p_hit).ln_1p();
        let mut rng = StreamRng::new(cfg.seed, Stream::Photons, start);
        let mut slot = start;
        loop {
            if p_hit < 1.0 {
                let gap = (rng.uniform_open0().ln() / log_miss).floor();
                if gap >= (end - slot) as f64 {
                    break;
                }
                slot += gap as u64;
            }
            if slot >= end {
                break;
            }
            let bit = cfg.sequence.bit(slot);
            let mut prethinned = 1.0;
            let arriving = if cfg.attack.enabled {
                let count = if single {
                    1
                } else {
                    sample_zero_truncated_poisson(mu, &mut rng)
                };
                let pulse = emit_pulse_with_count(bit, slot, &cfg.source, count, &mut rng);
                out.intercepted += 1;
                match intercept(&pulse, &cfg.attack, &cfg.source, &mut rng) {
                    Some(resent) => {
                        out.unambiguous += 1;
                        out.eve_slots.push(slot);
                        let elapsed = resent.slot_start;
                        Some(self.substitute.propagate(resent, elapsed, &mut rng))
                    }
                    None => None,
                }
            } else {
                let count = if single {
                    1
                } else {
                    sample_zero_truncated_poisson(mu * n_f, &mut rng)
                };
                let pulse = emit_pulse_with_count(bit, slot, &cfg.source, count, &mut rng);
                let elapsed = pulse.slot_start;
                prethinned = kept;
                Some(self.channel.perturb(pulse, elapsed, &mut rng))
            };
            if let Some(p) = arriving {
                detect_prethinned(&p, &cfg.receiver, prethinned, &mut rng, &mut out.events);
            }
            slot += 1;
        }
    }
}

/// Matched key material of Alice and Bob after time-window sifting.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SiftedKey {
    pub accepted_slots: Vec<u64>,
    pub alice_key: Vec<u8>,
    pub bob_key: Vec<u8>,
    pub window_fraction: f64,
}

impl SiftedKey {
    pub fn len(&self) -> usize {
        self.accepted_slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accepted_slots.is_empty()
    }

    pub fn errors(&self) -> usize {
        self.alice_key.iter().zip(&self.bob_key).filter(|(a, b)| a != b).count()
    }

    pub fn write_text<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let bits = |v: &[u8]| v.iter().map(|&b| if b == 0 { '0' } else { '1' }).collect::<String>();
        writeln!(out, "window_fraction={}", self.window_fraction)?;
        writeln!(out, "{}", bits(&self.alice_key))?;
        writeln!(out, "{}", bits(&self.bob_key))?;
        let slots: Vec<String> = self.accepted_slots.iter().map(u64::to_string).collect();
        writeln!(out, "{}", slots.join(","))
    }

    pub fn read_text<R: BufRead>(input: R) -> Result<Self> {
        let lines: Vec<String> = input
            .lines()
            .collect::<std::io::Result<_>>()
            .map_err(|e| Error::parse(0, e.to_string()))?;
        if lines.len() < 4 {
            return Err(Error::parse(lines.len() + 1, "sifted key needs four lines"));
        }
        let window_fraction = lines[0]
            .strip_prefix("window_fraction=")
            .and_then(|v| v.trim().parse::<f64>().ok())
            .ok_or_else(|| Error::parse(1, "expected window_fraction=<value>"))?;
        let bits = |line: &str, n: usize| -> Result<Vec<u8>> {
            line.trim()
                .chars()
                .map(|c| match c {
                    '0' => Ok(0),
                    '1' => Ok(1),
                    _ => Err(Error::parse(n, format!("invalid bit character `{c}`"))),
                })
                .collect()
        };
        let alice_key = bits(&lines[1], 2)?;
        let bob_key = bits(&lines[2], 3)?;
        let accepted_slots = if lines[3].trim().is_empty() {
            Vec::new()
        } else {
            lines[3]
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<u64>()
                        .map_err(|_| Error::parse(4, format!("bad slot `{s}`")))
                })
                .collect::<Result<_>>()?
        };
        if alice_key.len() != bob_key.len() || alice_key.len() != accepted_slots.len() {
            return Err(Error::parse(4, "key and slot list lengths differ"));
        }
        Ok(Self {
            accepted_slots,
            alice_key,
            bob_key,
            window_fraction,
        })
    }
}

/// Gates every click with a window of `window_fraction` of the bit width
/// centered on its slot. A slot is accepted when it has a gated click and all
/// of its clicks, gated or not, came from one channel; Bob's bit is that
/// channel. Rejecting any two-channel slot keeps the accepted sets nested as
/// the window shrinks.
pub fn sift(record: &SessionRecord, window_fraction: f64) -> Result<SiftedKey> {
    check_window(window_fraction)?;
    let period_ps = record.period_ps();
    let mut key = SiftedKey {
        window_fraction,
        ..Default::default()
    };
    let flush = |slot: u64, all: u8, gated_mask: u8, key: &mut SiftedKey| {
        if gated_mask != 0 && (all == 1 || all == 2) {
            key.accepted_slots.push(slot);
            key.alice_key.push(record.alice_bit(slot));
            key.bob_key.push(all >> 1);
        }
    };
    // Events are time-sorted, hence grouped by slot.
    let mut current: Option<(u64, u8, u8)> = None;
    for e in &record.events {
        let bit = 1u8 << e.channel;
        let g = if gated(e, period_ps, window_fraction) { bit } else { 0 };
        match current.as_mut() {
            Some((slot, all, gm)) if *slot == e.slot_index => {
                *all |= bit;
                *gm |= g;
            }
            _ => {
                if let Some((slot, all, gm)) = current {
                    flush(slot, all, gm, &mut key);
                }
                current = Some((e.slot_index, bit, g));
            }
        }
    }
    if let Some((slot, all, gm)) = current {
        flush(slot, all, gm, &mut key);
    }
    Ok(key)
}

pub(crate) fn check_window(window_fraction: f64) -> Result<()> {
    if !(window_fraction > 0.0 && window_fraction <= 1.0) {
        return Err(Error::invalid(format!(
            "window fraction {window_fraction} outside (0, 1]"
        )));
    }
    Ok(())
}

/// Writes the record as its configuration (`key = value` lines) followed by the event CSV.
pub fn write_record<W: Write>(record: &SessionRecord, mut out: W) -> std::io::Result<()> {
    out.write_all(crate::config::session_to_text(&record.config).as_bytes())?;
    write_events_csv(out, &record.events)
}

/// Reads a record written by [`write_record`]. The sync train, duration and
/// slot counts are rebuilt from the configuration; attack statistics are not stored.
pub fn read_record<R: BufRead>(input: R) -> Result<SessionRecord> {
    let mut header = String::new();
    let mut lines = input.lines();
    let mut line_no = 0;
    let mut found = false;
    for line in lines.by_ref() {
        line_no += 1;
        let line = line.map_err(|e| Error::parse(line_no, e.to_string()))?;
        if line.trim() == crate::optics::EVENTS_CSV_HEADER {
            found = true;
            break;
        }
        header.push_str(&line);
        header.push('\n');
    }
    if !found {
        return Err(Error::parse(line_no, "missing event table"));
    }
    let config = crate::config::parse_config(&header)?.session;
    let mut body = String::from(crate::optics::EVENTS_CSV_HEADER);
    body.push('\n');
    for line in lines {
        body.push_str(&line.map_err(|e| Error::parse(line_no, e.to_string()))?);
        body.push('\n');
    }
    let events = read_events_csv(body.as_bytes(), line_no)?;
    let duration = config.duration();
    Ok(SessionRecord {
        sync: SyncTrain::new(config.sync_period(), duration, config.sync_jitter, config.seed),
        n_slots: config.n_slots(),
        n_simulated_slots: config
            .selection
            .segments(config.n_slots())
            .iter()
            .map(|(s, e)| e - s)
            .sum(),
        duration,
        events,
        attack: None,
        config,
    })
}
