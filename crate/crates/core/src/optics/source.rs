use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use super::FWHM_PER_SIGMA;
use crate::rng::StreamRng;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhotonStatistics {
    /// Attenuated laser: Poisson photon number with mean `mean_photon_number`.
    Poisson,
    /// Ideal single-photon source: exactly one photon per slot.
    Single,
}

impl std::str::FromStr for PhotonStatistics {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "poisson" => Ok(PhotonStatistics::Poisson),
            "single" => Ok(PhotonStatistics::Single),
            other => Err(Error::invalid(format!("unknown photon statistics `{other}`"))),
        }
    }
}

impl PhotonStatistics {
    pub fn name(self) -> &'static str {
        match self {
            PhotonStatistics::Poisson => "poisson",
            PhotonStatistics::Single => "single",
        }
    }
}

/// The two polarization-encoded VCSEL sources behind the 50:50 combiner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceParams {
    pub mean_photon_number: f64,
    pub statistics: PhotonStatistics,
    /// Hz.
    pub clock_frequency: f64,
    /// Source contribution to the timing spread, seconds FWHM. Added in
    /// quadrature to the detector jitter.
    pub pulse_timing_fwhm: f64,
    /// Degrees.
    pub polarization_angle_bit0: f64,
    /// Degrees.
    pub polarization_angle_bit1: f64,
}

impl Default for SourceParams {
    fn default() -> Self {
        Self {
            mean_photon_number: 0.1,
            statistics: PhotonStatistics::Poisson,
            clock_frequency: 1e9,
            pulse_timing_fwhm: 0.0,
            polarization_angle_bit0: 0.0,
            polarization_angle_bit1: 45.0,
        }
    }
}

impl SourceParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mean_photon_number > 0.0 && self.mean_photon_number.is_finite()) {
            return Err(Error::InvalidConfig("mean photon number must be positive".into()));
        }
        if !(self.clock_frequency > 0.0 && self.clock_frequency.is_finite()) {
            return Err(Error::InvalidConfig("clock frequency must be positive".into()));
        }
        if !(self.pulse_timing_fwhm >= 0.0) {
            return Err(Error::InvalidConfig("pulse timing FWHM must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn bit_width(&self) -> f64 {
        1.0 / self.clock_frequency
    }

    pub fn angle(&self, bit: u8) -> f64 {
        if bit == 0 {
            self.polarization_angle_bit0
        } else {
            self.polarization_angle_bit1
        }
    }

    /// Non-orthogonal separation of the two states, degrees.
    pub fn separation(&self) -> f64 {
        (self.polarization_angle_bit1 - self.polarization_angle_bit0).abs()
    }

    pub fn timing_sigma(&self) -> f64 {
        self.pulse_timing_fwhm / FWHM_PER_SIGMA
    }

    /// Probability that a pulse carries at least one photon.
    pub fn nonempty_probability(&self) -> f64 {
        match self.statistics {
            PhotonStatistics::Poisson => -(-self.mean_photon_number).exp_m1(),
            PhotonStatistics::Single => 1.0,
        }
    }
}

/// Photons emitted in one clock slot.
#[derive(Clone, Debug, PartialEq)]
pub struct Pulse {
    pub slot_index: u64,
    /// Start of the slot, seconds from session start.
    pub slot_start: f64,
    pub bit: u8,
    /// Photon emission times relative to `slot_start`, seconds.
    pub photon_times: SmallVec<[f64; 4]>,
    /// Degrees.
    pub polarization: f64,
    /// Extra Gaussian timing spread (source response), seconds standard deviation.
    pub timing_sigma: f64,
    /// Re-emitted by an eavesdropper.
    pub resent: bool,
}

impl Pulse {
    pub fn photon_count(&self) -> usize {
        self.photon_times.len()
    }
}

/// Emits the pulse for `bit` in `slot`: Poisson photon number (or exactly one
/// for a single-photon source), emission times uniform over the bit period.
pub fn emit_pulse(bit: u8, slot: u64, params: &SourceParams, rng: &mut StreamRng) -> Pulse {
    let count = match params.statistics {
        PhotonStatistics::Poisson => sample_poisson(params.mean_photon_number, rng),
        PhotonStatistics::Single => 1,
    };
    emit_pulse_with_count(bit, slot, params, count, rng)
}

/// As [`emit_pulse`] with a photon number drawn by the caller.
pub fn emit_pulse_with_count(bit: u8, slot: u64, params: &SourceParams, count: usize, rng: &mut StreamRng) -> Pulse {
    debug_assert!(bit <= 1);
    let width = params.bit_width();
    // NRZ drive: the source is on for the whole bit period.
    let photon_times = (0..count).map(|_| rng.uniform() * width).collect();
    Pulse {
        slot_index: slot,
        slot_start: slot as f64 * width,
        bit,
        photon_times,
        polarization: params.angle(bit),
        timing_sigma: params.timing_sigma(),
        resent: false,
    }
}

/// Inverse-CDF Poisson sampler; fast for the small means used here.
pub fn sample_poisson(mean: f64, rng: &mut StreamRng) -> usize {
    if mean > 30.0 {
        return Poisson::new(mean).map(|d| d.sample(rng) as usize).unwrap_or(0);
    }
    let u = rng.uniform();
    let mut p = (-mean).exp();
    let mut cdf = p;
    let mut k = 0;
    while u >= cdf {
        k += 1;
        p *= mean / k as f64;
        cdf += p;
        if p == 0.0 {
            break;
        }
    }
    k
}

/// Poisson sample conditioned on being at least one.
pub fn sample_zero_truncated_poisson(mean: f64, rng: &mut StreamRng) -> usize {
    if mean > 30.0 {
        loop {
            let k = sample_poisson(mean, rng);
            if k > 0 {
                return k;
            }
        }
    }
    let norm = -(-mean).exp_m1();
    let target = rng.uniform() * norm;
    let mut p = (-mean).exp() * mean;
    let mut cdf = p;
    let mut k = 1;
    while target >= cdf {
        k += 1;
        p *= mean / k as f64;
        cdf += p;
        if p == 0.0 {
            break;
        }
    }
    k
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    #[test]
    fn poisson_mean_and_nonempty_fraction() {
        let params = SourceParams::default();
        let n = 1_000_000u64;
        let (mut photons, mut nonempty) = (0usize, 0usize);
        for slot in 0..n {
            let mut rng = StreamRng::new(3, Stream::Photons, slot);
            let p = emit_pulse((slot % 2) as u8, slot, &params, &mut rng);
            photons += p.photon_count();
            nonempty += (p.photon_count() > 0) as usize;
        }
        let mean = photons as f64 / n as f64;
        assert!((mean - 0.1).abs() < 1e-3, "mean {mean}");
        let frac = nonempty as f64 / n as f64;
        let expected = 1.0 - (-0.1f64).exp();
        assert!((frac - expected).abs() < 1e-3, "nonempty {frac} vs {expected}");
    }

    #[test]
    fn polarization_follows_bit() {
        let params = SourceParams::default();
        let mut rng = StreamRng::new(0, Stream::Photons, 0);
        assert_eq!(emit_pulse(0, 0, &params, &mut rng).polarization, 0.0);
        assert_eq!(emit_pulse(1, 0, &params, &mut rng).polarization, 45.0);
    }

    #[test]
    fn emission_times_inside_slot() {
        let params = SourceParams {
            clock_frequency: 1e8,
            statistics: PhotonStatistics::Single,
            ..Default::default()
        };
        for slot in 0..10_000 {
            let mut rng = StreamRng::new(5, Stream::Photons, slot);
            let p = emit_pulse(1, slot, &params, &mut rng);
            assert_eq!(p.photon_count(), 1);
            assert!(p.photon_times.iter().all(|&t| (0.0..1e-8).contains(&t)));
            assert!((p.slot_start - slot as f64 * 1e-8).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_truncated_poisson_matches_conditional_pmf() {
        let mean = 0.7;
        let n = 400_000;
        let mut counts = [0usize; 6];
        let mut rng = StreamRng::new(11, Stream::Photons, 0);
        for _ in 0..n {
            let k = sample_zero_truncated_poisson(mean, &mut rng);
            assert!(k >= 1);
            counts[k.min(5)] += 1;
        }
        let norm = 1.0 - (-mean).exp();
        let pmf = |k: usize| (-mean).exp() * mean.powi(k as i32) / (1..=k).product::<usize>() as f64 / norm;
        for k in 1..4 {
            let expected = pmf(k) * n as f64;
            let sd = expected.sqrt();
            assert!((counts[k] as f64 - expected).abs() < 4.0 * sd, "k={k}");
        }
    }

    #[test]
    fn large_mean_falls_back_to_library_sampler() {
        let mut rng = StreamRng::new(1, Stream::Photons, 0);
        let n = 20_000;
        let mean: f64 = (0..n).map(|_| sample_poisson(50.0, &mut rng) as f64).sum::<f64>() / n as f64;
        assert!((mean - 50.0).abs() < 0.25);
    }
}
