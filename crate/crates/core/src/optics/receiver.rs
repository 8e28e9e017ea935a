use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{db_to_transmittance, seconds_to_ps, timestamp_to_ps, DetectionEvent, Origin, Pulse, FWHM_PER_SIGMA};
use crate::rng::StreamRng;
use crate::{Error, Result};

/// One silicon SPAD.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    pub efficiency: f64,
    /// counts/s.
    pub dark_rate: f64,
    /// Combined source and detector timing response, seconds FWHM.
    pub jitter_fwhm: f64,
    /// seconds.
    pub dead_time: f64,
    pub afterpulse_prob: f64,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            efficiency: 0.40,
            dark_rate: 180.0,
            jitter_fwhm: 350e-12,
            dead_time: 50e-9,
            afterpulse_prob: 0.0,
        }
    }
}

impl DetectorParams {
    /// A perfect detector: unit efficiency, no noise, no jitter, no dead time.
    pub fn ideal() -> Self {
        Self {
            efficiency: 1.0,
            dark_rate: 0.0,
            jitter_fwhm: 0.0,
            dead_time: 0.0,
            afterpulse_prob: 0.0,
        }
    }

    pub fn jitter_sigma(&self) -> f64 {
        self.jitter_fwhm / FWHM_PER_SIGMA
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(Error::InvalidConfig("detector efficiency must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.afterpulse_prob) {
            return Err(Error::InvalidConfig("afterpulse probability must lie in [0, 1]".into()));
        }
        for (name, v) in [
            ("dark rate", self.dark_rate),
            ("jitter FWHM", self.jitter_fwhm),
            ("dead time", self.dead_time),
        ] {
            if !(v >= 0.0) || v.is_infinite() {
                return Err(Error::InvalidConfig(format!(
                    "detector {name} must be finite and nonnegative"
                )));
            }
        }
        Ok(())
    }
}

/// Bob's passive receiver: 50:50 coupler, one polarizer/PBS and SPAD per arm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReceiverParams {
    /// Leakage probability of a PBS for the crossed polarization.
    pub pbs_extinction: f64,
    /// Analyzer axes of channel 0 and channel 1, degrees.
    pub analyzer_angle: [f64; 2],
    /// Excess loss beyond coupler, analyzers and detector efficiency, dB.
    pub insertion_loss: f64,
    pub detectors: [DetectorParams; 2],
    /// Additional background rate per detector, e.g. residual sync cross-talk.
    pub extra_dark_rate: f64,
}

impl Default for ReceiverParams {
    fn default() -> Self {
        Self {
            pbs_extinction: 0.002,
            analyzer_angle: [-45.0, 90.0],
            insertion_loss: 7.0,
            detectors: [DetectorParams::default(), DetectorParams::default()],
            extra_dark_rate: 0.0,
        }
    }
}

impl ReceiverParams {
    /// Both arms split evenly.
    pub const COUPLER_SPLIT: f64 = 0.5;

    /// Perfect analyzers and detectors with no excess loss.
    pub fn ideal() -> Self {
        Self {
            pbs_extinction: 0.0,
            insertion_loss: 0.0,
            detectors: [DetectorParams::ideal(), DetectorParams::ideal()],
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.pbs_extinction) {
            return Err(Error::InvalidConfig("PBS extinction must lie in [0, 0.5)".into()));
        }
        if !(self.insertion_loss >= 0.0) || self.insertion_loss.is_infinite() {
            return Err(Error::InvalidConfig(
                "receiver insertion loss must be finite and nonnegative".into(),
            ));
        }
        if !(self.extra_dark_rate >= 0.0) || self.extra_dark_rate.is_infinite() {
            return Err(Error::InvalidConfig(
                "extra dark rate must be finite and nonnegative".into(),
            ));
        }
        for d in &self.detectors {
            d.validate()?;
        }
        Ok(())
    }

    pub fn insertion_transmittance(&self) -> f64 {
        db_to_transmittance(self.insertion_loss)
    }

    /// Total background rate of one channel.
    pub fn background_rate(&self, channel: u8) -> f64 {
        self.detectors[channel as usize].dark_rate + self.extra_dark_rate
    }

    /// Probability that a photon of polarization `angle` clicks `channel`.
    pub fn click_probability(&self, angle: f64, channel: u8) -> f64 {
        let c = channel as usize;
        Self::COUPLER_SPLIT
            * analyzer_pass_probability(angle - self.analyzer_angle[c], self.pbs_extinction)
            * self.insertion_transmittance()
            * self.detectors[c].efficiency
    }
}

/// `(1 - 2 eps) cos^2(delta) + eps` for a photon at `delta_deg` to the analyzer axis.
#[inline]
pub fn analyzer_pass_probability(delta_deg: f64, extinction: f64) -> f64 {
    let c = delta_deg.to_radians().cos();
    (1.0 - 2.0 * extinction) * c * c + extinction
}

/// Routes, analyses and detects each photon of `pulse`, returning its clicks.
pub fn detect(pulse: &Pulse, rx: &ReceiverParams, rng: &mut StreamRng) -> Vec<DetectionEvent> {
    let mut out = Vec::new();
    detect_into(pulse, rx, rng, &mut out);
    out
}

/// As [`detect`], appending to `out`.
pub fn detect_into(pulse: &Pulse, rx: &ReceiverParams, rng: &mut StreamRng, out: &mut Vec<DetectionEvent>) {
    detect_prethinned(pulse, rx, 1.0, rng, out);
}

/// Upper bound on any photon's click probability: insertion loss times the
/// better detector's efficiency.
pub(crate) fn max_click_probability(rx: &ReceiverParams) -> f64 {
    rx.insertion_transmittance() * rx.detectors[0].efficiency.max(rx.detectors[1].efficiency)
}

/// As [`detect_into`] for photons that already survived a Bernoulli thinning
/// with probability `kept` (at most [`max_click_probability`]).
pub(crate) fn detect_prethinned(
    pulse: &Pulse,
    rx: &ReceiverParams,
    kept: f64,
    rng: &mut StreamRng,
    out: &mut Vec<DetectionEvent>,
) {
    let first = out.len();
    let insertion = rx.insertion_transmittance() / kept;
    for &t in &pulse.photon_times {
        let channel = u8::from(rng.uniform() >= ReceiverParams::COUPLER_SPLIT);
        let det = &rx.detectors[channel as usize];
        let delta = pulse.polarization - rx.analyzer_angle[channel as usize];
        let p = analyzer_pass_probability(delta, rx.pbs_extinction) * insertion * det.efficiency;
        if !rng.bernoulli(p) {
            continue;
        }
        let jitter = det.jitter_sigma();
        let sigma = (jitter * jitter + pulse.timing_sigma * pulse.timing_sigma).sqrt();
        let mut time = pulse.slot_start + t;
        if sigma > 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            time += sigma * z;
        }
        // A click on channel c rules out the state crossed with analyzer c;
        // the designed path for bit b is therefore channel b.
        let origin = match (channel == pulse.bit, pulse.resent) {
            (false, _) => Origin::Leakage,
            (true, false) => Origin::Signal,
            (true, true) => Origin::EveResend,
        };
        out.push(DetectionEvent {
            channel,
            timestamp_ps: timestamp_to_ps(time),
            slot_index: pulse.slot_index,
            origin,
            truth_bit: pulse.bit,
        });
    }
    if out.len() - first > 1 {
        out[first..].sort_by_key(|e| (e.timestamp_ps, e.channel));
        let dead = [
            seconds_to_ps(rx.detectors[0].dead_time),
            seconds_to_ps(rx.detectors[1].dead_time),
        ];
        let mut tail = out.split_off(first);
        apply_dead_time(&mut tail, dead);
        out.extend(tail);
    }
}

/// Homogeneous Poisson dark counts of one detector over `[0, duration)`.
pub fn dark_events(det: &DetectorParams, duration: f64, channel: u8, rng: &mut StreamRng) -> Vec<DetectionEvent> {
    let mut out = Vec::new();
    dark_events_between(det.dark_rate, 0.0, duration, channel, rng, &mut out);
    out
}

/// Poisson arrivals of rate `rate` over `[start, end)`, appended to `out`.
/// Slot index and truth bit are left at zero for the session to assign.
pub fn dark_events_between(
    rate: f64,
    start: f64,
    end: f64,
    channel: u8,
    rng: &mut StreamRng,
    out: &mut Vec<DetectionEvent>,
) {
    if rate <= 0.0 || end <= start {
        return;
    }
    let mut t = start;
    loop {
        t += -rng.uniform_open0().ln() / rate;
        if t >= end {
            break;
        }
        out.push(DetectionEvent {
            channel,
            timestamp_ps: timestamp_to_ps(t),
            slot_index: 0,
            origin: Origin::Dark,
            truth_bit: 0,
        });
    }
}

/// Non-paralyzable dead time per detector: drops every click that follows an
/// accepted click on the same channel by less than the dead time. `events`
/// must be sorted by timestamp.
pub fn apply_dead_time(events: &mut Vec<DetectionEvent>, dead_time_ps: [i64; 2]) {
    if dead_time_ps == [0, 0] {
        return;
    }
    let mut last: [Option<i64>; 2] = [None, None];
    events.retain(|e| {
        let c = e.channel as usize;
        match last[c] {
            Some(prev) if e.timestamp_ps - prev < dead_time_ps[c] => false,
            _ => {
                last[c] = Some(e.timestamp_ps);
                true
            }
        }
    });
}
