use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{db_to_transmittance, Pulse};
use crate::rng::{Stream, StreamRng};
use crate::{Error, Result};

/// Standard telecom fiber at 850 nm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// km.
    pub fiber_length: f64,
    /// dB/km.
    pub attenuation: f64,
    /// dB, e.g. an attenuator emulating extra fiber length.
    pub extra_attenuation: f64,
    /// ps/(nm km).
    pub dispersion: f64,
    /// nm.
    pub source_linewidth: f64,
    /// degrees per sqrt(second).
    pub polarization_drift_rate: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            fiber_length: 0.0,
            attenuation: 2.2,
            extra_attenuation: 0.0,
            dispersion: 100.0,
            source_linewidth: 0.1,
            polarization_drift_rate: 0.0,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("fiber_length", self.fiber_length),
            ("attenuation", self.attenuation),
            ("extra_attenuation", self.extra_attenuation),
            ("dispersion", self.dispersion),
            ("source_linewidth", self.source_linewidth),
            ("polarization_drift_rate", self.polarization_drift_rate),
        ];
        for (name, v) in fields {
            if !(v >= 0.0) || v.is_infinite() {
                return Err(Error::InvalidConfig(format!(
                    "channel {name} must be finite and nonnegative"
                )));
            }
        }
        Ok(())
    }

    pub fn total_loss_db(&self) -> f64 {
        self.fiber_length * self.attenuation + self.extra_attenuation
    }

    /// Photon survival probability n_f.
    pub fn transmittance(&self) -> f64 {
        db_to_transmittance(self.total_loss_db())
    }

    /// Chromatic-dispersion timing spread, seconds standard deviation.
    pub fn dispersion_sigma(&self) -> f64 {
        self.dispersion * self.source_linewidth * self.fiber_length * 1e-12
    }
}

/// Gaussian random walk of the polarization rotation angle, sampled on a
/// fixed time grid and linearly interpolated.
#[derive(Clone, Debug, Default)]
pub struct DriftPath {
    step: f64,
    angles: Vec<f64>,
}

impl DriftPath {
    pub const STEP: f64 = 1e-3;

    pub fn new(rate_deg_per_sqrt_s: f64, duration: f64, seed: u64) -> Self {
        if rate_deg_per_sqrt_s <= 0.0 || duration <= 0.0 {
            return Self::default();
        }
        let n = (duration / Self::STEP).ceil() as usize + 2;
        let mut rng = StreamRng::new(seed, Stream::Drift, 0);
        let sd = rate_deg_per_sqrt_s * Self::STEP.sqrt();
        let mut angles = Vec::with_capacity(n);
        let mut a = 0.0;
        angles.push(a);
        for _ in 1..n {
            let z: f64 = rng.sample(StandardNormal);
            a += sd * z;
            angles.push(a);
        }
        Self {
            step: Self::STEP,
            angles,
        }
    }

    /// Rotation in degrees at `t` seconds.
    pub fn angle_at(&self, t: f64) -> f64 {
        if self.angles.is_empty() || t <= 0.0 {
            return 0.0;
        }
        let x = t / self.step;
        let i = x.floor() as usize;
        if i + 1 >= self.angles.len() {
            return *self.angles.last().unwrap();
        }
        let frac = x - i as f64;
        self.angles[i] * (1.0 - frac) + self.angles[i + 1] * frac
    }
}

/// A channel instance for one session: parameters plus the realised drift path.
#[derive(Clone, Debug)]
pub struct Channel {
    params: ChannelParams,
    transmittance: f64,
    dispersion_sigma: f64,
    drift: DriftPath,
}

impl Channel {
    pub fn new(params: ChannelParams, duration: f64, seed: u64) -> Self {
        let drift = DriftPath::new(params.polarization_drift_rate, duration, seed);
        Self {
            transmittance: params.transmittance(),
            dispersion_sigma: params.dispersion_sigma(),
            params,
            drift,
        }
    }

    /// A lossless channel with no dispersion or drift.
    pub fn ideal() -> Self {
        Self::new(
            ChannelParams {
                attenuation: 0.0,
                dispersion: 0.0,
                ..Default::default()
            },
            0.0,
            0,
        )
    }

    /// A channel with only a flat loss, as used for a substituted link.
    pub fn lossy(loss_db: f64) -> Self {
        Self::new(
            ChannelParams {
                attenuation: 0.0,
                extra_attenuation: loss_db,
                dispersion: 0.0,
                ..Default::default()
            },
            0.0,
            0,
        )
    }

    pub fn params(&self) -> &ChannelParams {
        &self.params
    }

    pub fn transmittance(&self) -> f64 {
        self.transmittance
    }

    pub fn dispersion_sigma(&self) -> f64 {
        self.dispersion_sigma
    }

    /// Loss, dispersion and drift applied to `pulse` emitted `elapsed`
    /// seconds into the session.
    pub fn propagate(&self, mut pulse: Pulse, elapsed: f64, rng: &mut StreamRng) -> Pulse {
        if self.transmittance < 1.0 {
            pulse.photon_times.retain(|_| rng.bernoulli(self.transmittance));
        }
        self.perturb(pulse, elapsed, rng)
    }

    /// Dispersion and drift only, for photons already known to survive.
    pub fn perturb(&self, mut pulse: Pulse, elapsed: f64, rng: &mut StreamRng) -> Pulse {
        if self.dispersion_sigma > 0.0 {
            for t in pulse.photon_times.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *t += self.dispersion_sigma * z;
            }
        }
        pulse.polarization += self.drift.angle_at(elapsed);
        pulse
    }
}
