//! Intercept-resend attack built on unambiguous state discrimination (USD).
//!
//! Eve sits at Alice's output, measures one photon of every nonempty pulse and
//! forwards a fresh pulse in the identified state only when her measurement is
//! conclusive. She never forwards a wrong state, so the attack induces no
//! polarization errors; its only signature is the drop in Bob's count rate,
//! which she can hide by replacing a lossy fiber with a better link.

use serde::{Deserialize, Serialize};
use smallvec::smallvec;

use crate::optics::{db_to_transmittance, Channel, Pulse, SourceParams};
use crate::protocol::SiftedKey;
use crate::rng::{Stream, StreamRng};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub enabled: bool,
    /// Separation of Alice's two states assumed by Eve's measurement, degrees.
    pub theta: f64,
    /// Loss of the link Eve uses in place of the fiber, dB.
    pub substitute_channel_loss: f64,
    /// Photons in each re-emitted pulse.
    pub resend_photon_number: u32,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            theta: 45.0,
            substitute_channel_loss: 0.0,
            resend_photon_number: 1,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=90.0).contains(&self.theta) {
            return Err(Error::InvalidConfig("attack theta must lie in [0, 90] degrees".into()));
        }
        if !(self.substitute_channel_loss >= 0.0) || self.substitute_channel_loss.is_infinite() {
            return Err(Error::InvalidConfig(
                "substitute channel loss must be finite and nonnegative".into(),
            ));
        }
        Ok(())
    }

    /// Probability of a conclusive USD outcome, `1 - |cos theta|`.
    pub fn success_probability(&self) -> f64 {
        1.0 - self.theta.to_radians().cos().abs()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UsdOutcome {
    Bit(u8),
    Inconclusive,
}

/// Optimal USD between the states `states[0]` and `states[1]` (degrees) on a
/// photon prepared at `state_angle`: the correct bit with probability
/// `1 - |cos theta|`, inconclusive otherwise, never the wrong bit.
pub fn usd_measure(state_angle: f64, states: [f64; 2], cfg: &AttackConfig, rng: &mut StreamRng) -> UsdOutcome {
    let distance = |a: f64| {
        let d = (state_angle - a).rem_euclid(180.0);
        d.min(180.0 - d)
    };
    let bit = u8::from(distance(states[1]) < distance(states[0]));
    if rng.bernoulli(cfg.success_probability()) {
        UsdOutcome::Bit(bit)
    } else {
        UsdOutcome::Inconclusive
    }
}

/// Eve's action on one nonempty pulse at Alice's output: the pulse she
/// re-emits on a conclusive outcome, or `None`. The re-emitted photons leave
/// at the time of the first intercepted photon.
pub fn intercept(pulse: &Pulse, cfg: &AttackConfig, source: &SourceParams, rng: &mut StreamRng) -> Option<Pulse> {
    let &first = pulse.photon_times.first()?;
    let states = [source.polarization_angle_bit0, source.polarization_angle_bit1];
    match usd_measure(pulse.polarization, states, cfg, rng) {
        UsdOutcome::Inconclusive => None,
        UsdOutcome::Bit(b) => Some(Pulse {
            photon_times: smallvec![first; cfg.resend_photon_number as usize],
            polarization: states[b as usize],
            resent: true,
            ..pulse.clone()
        }),
    }
}

/// Counters and knowledge gathered by Eve during a session, plus the
/// comparison against an unattacked baseline when one was run.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct AttackOutcome {
    /// Nonempty pulses measured.
    pub intercepted: u64,
    /// Conclusive measurements.
    pub unambiguous: u64,
    /// Pulses re-emitted; equals `unambiguous`.
    pub resent: u64,
    /// Slots whose bit Eve knows, ascending. Her knowledge is always correct.
    #[serde(skip)]
    pub eve_known_slots: Vec<u64>,
    /// QBER with attack minus QBER without.
    pub induced_qber_delta: Option<f64>,
    /// Bob's detection rate with attack over the rate without.
    pub rate_ratio: Option<f64>,
}

impl AttackOutcome {
    pub fn knows(&self, slot: u64) -> bool {
        self.eve_known_slots.binary_search(&slot).is_ok()
    }

    /// Fraction of the sifted key bits known to Eve.
    pub fn information_fraction(&self, key: &SiftedKey) -> Option<f64> {
        if key.is_empty() {
            return None;
        }
        let known = key.accepted_slots.iter().filter(|&&s| self.knows(s)).count();
        Some(known as f64 / key.len() as f64)
    }
}

/// Runs the attack over a stream of pulses leaving Alice and returns the
/// pulses reaching Bob through Eve's substitute link. Eve's randomness for
/// each pulse is keyed by `(seed, slot)`.
pub fn apply_attack(
    pulses: Vec<Pulse>,
    cfg: &AttackConfig,
    source: &SourceParams,
    seed: u64,
) -> (Vec<Pulse>, AttackOutcome) {
    let link = Channel::lossy(cfg.substitute_channel_loss);
    let mut outcome = AttackOutcome::default();
    let mut forwarded = Vec::with_capacity(pulses.len());
    for pulse in pulses {
        if pulse.photon_times.is_empty() {
            forwarded.push(pulse);
            continue;
        }
        outcome.intercepted += 1;
        let mut rng = StreamRng::new(seed, Stream::Eve, pulse.slot_index);
        match intercept(&pulse, cfg, source, &mut rng) {
            Some(resent) => {
                outcome.unambiguous += 1;
                outcome.resent += 1;
                outcome.eve_known_slots.push(pulse.slot_index);
                let elapsed = resent.slot_start;
                forwarded.push(link.propagate(resent, elapsed, &mut rng));
            }
            None => {
                let mut empty = pulse;
                empty.photon_times.clear();
                forwarded.push(empty);
            }
        }
    }
    outcome.eve_known_slots.sort_unstable();
    (forwarded, outcome)
}

/// Many-pulse limit of Bob's rate ratio for single-photon pulses:
/// `(1 - cos theta) * T_substitute / T_original`.
pub fn expected_rate_ratio(theta: f64, substitute_loss_db: f64, original_loss_db: f64) -> f64 {
    (1.0 - theta.to_radians().cos().abs()) * db_to_transmittance(substitute_loss_db)
        / db_to_transmittance(original_loss_db)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Clear,
    Suspect,
}

/// Bob's rate monitor: suspect when the observed rate falls more than
/// `tolerance` (a fraction) below the baseline.
pub fn detect_attack(baseline_rate: f64, observed_rate: f64, tolerance: f64) -> Result<Verdict> {
    if !(baseline_rate > 0.0) {
        return Err(Error::invalid("baseline rate must be positive"));
    }
    if !(0.0..=1.0).contains(&tolerance) {
        return Err(Error::invalid("tolerance must lie in [0, 1]"));
    }
    Ok(if observed_rate < baseline_rate * (1.0 - tolerance) {
        Verdict::Suspect
    } else {
        Verdict::Clear
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::{emit_pulse_with_count, PhotonStatistics};

    fn attack(theta: f64) -> AttackConfig {
        AttackConfig {
            enabled: true,
            theta,
            ..Default::default()
        }
    }

    #[test]
    fn usd_success_rate_and_no_wrong_answers() {
        let cfg = attack(45.0);
        let n = 1_000_000;
        let mut rng = StreamRng::new(4, Stream::Eve, 0);
        let mut conclusive = 0u64;
        for i in 0..n {
            let bit = (i % 2) as u8;
            let angle = [0.0, 45.0][bit as usize];
            match usd_measure(angle, [0.0, 45.0], &cfg, &mut rng) {
                UsdOutcome::Bit(b) => {
                    assert_eq!(b, bit);
                    conclusive += 1;
                }
                UsdOutcome::Inconclusive => {}
            }
        }
        let p = 1.0 - std::f64::consts::FRAC_1_SQRT_2;
        let sd = (p * (1.0 - p) / n as f64).sqrt();
        assert!((conclusive as f64 / n as f64 - p).abs() < 3.0 * sd);
    }

    #[test]
    fn orthogonal_states_always_conclusive_identical_never() {
        let mut rng = StreamRng::new(1, Stream::Eve, 0);
        for _ in 0..1000 {
            assert_eq!(
                usd_measure(90.0, [0.0, 90.0], &attack(90.0), &mut rng),
                UsdOutcome::Bit(1)
            );
            assert_eq!(
                usd_measure(0.0, [0.0, 45.0], &attack(0.0), &mut rng),
                UsdOutcome::Inconclusive
            );
        }
    }

    #[test]
    fn resent_pulses_carry_correct_state() {
        let src = SourceParams {
            statistics: PhotonStatistics::Single,
            ..Default::default()
        };
        let pulses: Vec<Pulse> = (0..50_000u64)
            .map(|i| {
                let mut rng = StreamRng::new(2, Stream::Photons, i);
                emit_pulse_with_count((i % 2) as u8, i, &src, 1, &mut rng)
            })
            .collect();
        let (out, outcome) = apply_attack(pulses.clone(), &attack(45.0), &src, 9);
        assert_eq!(outcome.intercepted, 50_000);
        assert_eq!(outcome.resent, outcome.unambiguous);
        assert!(outcome.unambiguous <= outcome.intercepted);
        for (before, after) in pulses.iter().zip(&out) {
            if after.photon_count() > 0 {
                assert!(after.resent);
                assert_eq!(after.polarization, before.polarization);
                assert_eq!(after.photon_times[0], before.photon_times[0]);
                assert!(outcome.knows(before.slot_index));
            } else {
                assert!(!outcome.knows(before.slot_index));
            }
        }
        let ratio = outcome.resent as f64 / 50_000.0;
        assert!((ratio - 0.29289).abs() < 0.01, "{ratio}");
    }

    #[test]
    fn expected_ratio_crosses_one_at_masking_loss() {
        let masking = 10.0 * (1.0 / (1.0 - std::f64::consts::FRAC_1_SQRT_2)).log10();
        assert!((masking - 5.33).abs() < 0.01);
        assert!(expected_rate_ratio(45.0, 0.0, masking + 0.01) > 1.0);
        assert!(expected_rate_ratio(45.0, 0.0, masking - 0.01) < 1.0);
        assert!((expected_rate_ratio(45.0, 0.0, 0.0) - 0.29289).abs() < 1e-5);
    }

    #[test]
    fn rate_monitor_verdicts() {
        assert_eq!(detect_attack(18_278.0, 5_355.0, 0.1).unwrap(), Verdict::Suspect);
        assert_eq!(detect_attack(18_278.0, 18_278.0, 0.1).unwrap(), Verdict::Clear);
        assert_eq!(detect_attack(100.0, 91.0, 0.1).unwrap(), Verdict::Clear);
        assert!(detect_attack(0.0, 1.0, 0.1).is_err());
    }
}
