//! Synthetic ambient temperature: a daily sinusoid (coldest at 04:00,
//! warmest at 16:00) plus first-order filtered Gaussian noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmbientConfig {
    /// Daily mean, degC.
    pub mean: f64,
    /// Half peak-to-peak daily swing, degC.
    pub amplitude: f64,
    /// Stationary standard deviation of the noise, degC.
    pub noise_std: f64,
    /// AR(1) coefficient of the noise in `[0, 1)`.
    pub noise_corr: f64,
}

impl Default for AmbientConfig {
    fn default() -> Self {
        Self {
            mean: 5.0,
            amplitude: 5.0,
            noise_std: 1.0,
            noise_corr: 0.95,
        }
    }
}

impl AmbientConfig {
    pub fn validate(&self, key: &str) -> Result<()> {
        if self.amplitude < 0.0 {
            return Err(Error::config(
                format!("{key}.amplitude"),
                "must be nonnegative",
            ));
        }
        if self.noise_std < 0.0 {
            return Err(Error::config(
                format!("{key}.noise_std"),
                "must be nonnegative",
            ));
        }
        if !(0.0..1.0).contains(&self.noise_corr) {
            return Err(Error::config(
                format!("{key}.noise_corr"),
                "must lie in [0, 1)",
            ));
        }
        Ok(())
    }
}

/// Deterministic part only.
pub fn ambient_profile(k: usize, steps_per_day: usize, cfg: &AmbientConfig) -> f64 {
    let hour = 24.0 * (k % steps_per_day) as f64 / steps_per_day as f64;
    cfg.mean + cfg.amplitude * (std::f64::consts::TAU * (hour - 10.0) / 24.0).sin()
}

/// `days` of ambient temperature sampled every `ts` seconds.
pub fn synth_disturbance(days: usize, ts: f64, seed: u64, cfg: &AmbientConfig) -> Result<Vec<f64>> {
    if days == 0 {
        return Err(Error::config("plant.days", "must be at least 1"));
    }
    if !(ts > 0.0) || (86_400.0 / ts).fract() != 0.0 {
        return Err(Error::config(
            "plant.building.ts",
            "must divide one day evenly",
        ));
    }
    cfg.validate("plant.ambient")?;
    let spd = (86_400.0 / ts).round() as usize;
    let len = days * spd;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let innovation = cfg.noise_std * (1.0 - cfg.noise_corr * cfg.noise_corr).sqrt();
    let mut noise = if cfg.noise_std > 0.0 {
        let z: f64 = StandardNormal.sample(&mut rng);
        cfg.noise_std * z
    } else {
        0.0
    };
    let mut out = Vec::with_capacity(len);
    for k in 0..len {
        out.push(ambient_profile(k, spd, cfg) + noise);
        if cfg.noise_std > 0.0 {
            let z: f64 = StandardNormal.sample(&mut rng);
            noise = cfg.noise_corr * noise + innovation * z;
        }
    }
    Ok(out)
}
