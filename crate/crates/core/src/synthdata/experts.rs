//! Expert forecast emulators: blurred truth plus a masked, lead-growing mix
//! of a fixed bias pattern and spatially correlated noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::derive_seed;
use super::spectral::{gaussian, power_law, Spectral};
use super::truth::TruthTrajectory;
use crate::error::{Error, Result};

/// A magnitude that grows from `start` at the first lead to `end` at the
/// last, as `start + (end - start)·s^power` with `s ∈ [0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Ramp {
    pub start: f64,
    pub end: f64,
    pub power: f64,
}

impl From<[f64; 3]> for Ramp {
    fn from(a: [f64; 3]) -> Self {
        Ramp {
            start: a[0],
            end: a[1],
            power: a[2],
        }
    }
}

impl From<Ramp> for [f64; 3] {
    fn from(r: Ramp) -> Self {
        [r.start, r.end, r.power]
    }
}

impl Ramp {
    pub const ZERO: Ramp = Ramp {
        start: 0.0,
        end: 0.0,
        power: 1.0,
    };

    pub fn constant(v: f64) -> Self {
        Ramp {
            start: v,
            end: v,
            power: 1.0,
        }
    }

    pub fn at(&self, s: f64) -> f64 {
        self.start + (self.end - self.start) * s.clamp(0.0, 1.0).powf(self.power)
    }

    fn validate(&self, what: &str) -> Result<()> {
        let ok = self.start.is_finite() && self.end.is_finite() && self.power.is_finite();
        if !ok || self.start < 0.0 || self.end < self.start || !(self.power > 0.0) {
            return Err(Error::Config(format!(
                "{} ramp must satisfy 0 <= start <= end and power > 0, got {:?}",
                what, self
            )));
        }
        Ok(())
    }
}

/// Spatial multiplier in `[0, 1]` on an expert's total error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum MaskSpec {
    Uniform {
        value: f64,
    },
    /// A soft-edged disc; centre as fractions of width/height, radius as a
    /// fraction of height.
    Blob {
        center_x: f64,
        center_y: f64,
        radius: f64,
        inside: f64,
        outside: f64,
    },
}

impl MaskSpec {
    fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        let ok = match *self {
            MaskSpec::Uniform { value } => unit(value),
            MaskSpec::Blob {
                radius, inside, outside, ..
            } => unit(inside) && unit(outside) && radius > 0.0,
        };
        if !ok {
            return Err(Error::Config(format!("mask values must lie in [0, 1]: {:?}", self)));
        }
        Ok(())
    }

    pub fn render(&self, height: usize, width: usize) -> Vec<f64> {
        match *self {
            MaskSpec::Uniform { value } => vec![value; height * width],
            MaskSpec::Blob {
                center_x,
                center_y,
                radius,
                inside,
                outside,
            } => {
                let (h, w) = (height as f64, width as f64);
                let (cy, cx, r) = (center_y * h, center_x * w, radius * h);
                let wrap = |d: f64, n: f64| {
                    let d = d.rem_euclid(n);
                    d.min(n - d)
                };
                let mut m = Vec::with_capacity(height * width);
                for i in 0..height {
                    for j in 0..width {
                        let d = wrap(i as f64 - cy, h).hypot(wrap(j as f64 - cx, w));
                        let t = (-(d / r).powi(4)).exp();
                        m.push(outside + (inside - outside) * t);
                    }
                }
                m
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpertProfile {
    #[serde(default)]
    pub name: String,
    /// Amplitude of the bias pattern, in channel standard deviations.
    pub bias: Ramp,
    /// Experts with the same pattern id share the same bias shape.
    pub bias_pattern: u32,
    /// Gaussian smoothing radius, pixels.
    pub blur: Ramp,
    /// Noise amplitude, in channel standard deviations.
    pub noise: Ramp,
    /// Correlation length of the noise, pixels.
    pub noise_length: f64,
    pub mask: MaskSpec,
    pub seed: u64,
}

impl ExpertProfile {
    /// An expert that reproduces truth exactly.
    pub fn perfect(name: &str, seed: u64) -> Self {
        ExpertProfile {
            name: name.to_string(),
            bias: Ramp::ZERO,
            bias_pattern: 0,
            blur: Ramp::ZERO,
            noise: Ramp::ZERO,
            noise_length: 0.0,
            mask: MaskSpec::Uniform { value: 1.0 },
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::Config("expert name must be nonempty".into()));
        }
        self.bias.validate("bias")?;
        self.blur.validate("blur")?;
        self.noise.validate("noise")?;
        if !(self.noise_length >= 0.0) || !self.noise_length.is_finite() {
            return Err(Error::Config(format!("noise_length must be >= 0, got {}", self.noise_length)));
        }
        self.mask.validate()
    }
}

/// Position of `lead` within the lead set, mapped to `[0, 1]`.
pub fn lead_position(leads: &[u32], lead: u32) -> Result<f64> {
    if !leads.contains(&lead) {
        return Err(Error::Domain(format!("lead {}h is not in the lead set {:?}", lead, leads)));
    }
    let (lo, hi) = (leads[0] as f64, *leads.last().expect("nonempty") as f64);
    Ok(if hi > lo { (lead as f64 - lo) / (hi - lo) } else { 0.0 })
}

/// Smooth unit-variance bias shape for `(pattern, channel)`.
pub fn bias_pattern(spectral: &Spectral, pattern: u32, channel: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(0x6269_6173, &[pattern as u64, channel as u64]));
    spectral.random_field(&mut rng, power_law(4.0, 0.0, 1.0 / 16.0))
}

/// A profile with its lead-independent fields precomputed.
pub struct ExpertEmulator {
    profile: ExpertProfile,
    leads: Vec<u32>,
    patterns: Vec<Vec<f64>>,
    mask: Vec<f64>,
}

impl ExpertEmulator {
    pub fn new(profile: ExpertProfile, spectral: &Spectral, channels: usize, leads: &[u32]) -> Result<Self> {
        profile.validate()?;
        if leads.is_empty() {
            return Err(Error::Config("lead set is empty".into()));
        }
        let patterns = (0..channels).map(|c| bias_pattern(spectral, profile.bias_pattern, c)).collect();
        let mask = profile.mask.render(spectral.height(), spectral.width());
        Ok(ExpertEmulator {
            profile,
            leads: leads.to_vec(),
            patterns,
            mask,
        })
    }

    pub fn profile(&self) -> &ExpertProfile {
        &self.profile
    }

    pub fn mask(&self) -> &[f64] {
        &self.mask
    }

    /// Expert forecast at `lead` for `truth`, in generator units.
    pub fn emulate(&self, spectral: &Spectral, truth: &TruthTrajectory, lead: u32) -> Result<Vec<f64>> {
        let s = lead_position(&self.leads, lead)?;
        let state = truth.state_at(lead)?;
        let plane = spectral.len();
        let p = &self.profile;
        let (bias, blur, noise) = (p.bias.at(s), p.blur.at(s), p.noise.at(s));
        let mut out = Vec::with_capacity(state.len());
        for (c, field) in state.chunks_exact(plane).enumerate() {
            let base = if blur > 0.0 {
                spectral.filter(field, gaussian(blur))
            } else {
                field.to_vec()
            };
            let eps = if noise > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    p.seed,
                    &[0x6e6f_6973, truth.init_index, lead as u64, c as u64],
                ));
                if p.noise_length > 0.0 {
                    spectral.random_field(&mut rng, gaussian(p.noise_length))
                } else {
                    spectral.random_field(&mut rng, |_| 1.0)
                }
            } else {
                vec![0.0; plane]
            };
            let pattern = &self.patterns[c];
            for i in 0..plane {
                let err = bias * pattern[i] + noise * eps[i];
                out.push(if err == 0.0 { base[i] } else { base[i] + self.mask[i] * err });
            }
        }
        Ok(out)
    }
}
