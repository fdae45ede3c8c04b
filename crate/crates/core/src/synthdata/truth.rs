//! Deterministic truth simulator: power-law random initial fields advected
//! semi-Lagrangianly by a fixed divergence-free flow, with spectral
//! hyperdiffusion, on a doubly periodic grid.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::derive_seed;
use super::spectral::{power_law, Spectral};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsConfig {
    /// Uniform eastward drift, pixels per hour.
    pub zonal_speed: f64,
    /// Peak speed of the cellular flow, pixels per hour.
    pub vortex_speed: f64,
    /// Hyperdiffusion strength per step at the Nyquist frequency.
    pub diffusion: f64,
    /// Power-law exponent of the initial-condition spectrum.
    pub spectrum_exponent: f64,
    /// Highest retained frequency of the initial condition, cycles per pixel.
    pub max_frequency: f64,
    pub step_hours: u32,
    pub substeps: u32,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        DynamicsConfig {
            zonal_speed: 0.4,
            vortex_speed: 0.6,
            diffusion: 0.05,
            spectrum_exponent: 3.0,
            max_frequency: 0.25,
            step_hours: 6,
            substeps: 3,
        }
    }
}

impl DynamicsConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.zonal_speed, self.vortex_speed, self.diffusion, self.spectrum_exponent, self.max_frequency];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("dynamics parameters must be finite".into()));
        }
        if self.diffusion < 0.0 {
            return Err(Error::Config(format!("diffusion must be >= 0, got {}", self.diffusion)));
        }
        if !(self.max_frequency > 0.0) {
            return Err(Error::Config("max_frequency must be > 0".into()));
        }
        if self.step_hours == 0 || self.substeps == 0 {
            return Err(Error::Config("step_hours and substeps must be >= 1".into()));
        }
        Ok(())
    }
}

/// Truth fields for one initialization, in generator units (unit-variance
/// fields, channel scaling is applied by the caller).
#[derive(Clone, Debug, PartialEq)]
pub struct TruthTrajectory {
    pub init_index: u64,
    pub seed: u64,
    /// `0, step, 2·step, …` hours.
    pub leads: Vec<u32>,
    /// One `C × H × W` state per entry of `leads`.
    pub states: Vec<Vec<f64>>,
}

impl TruthTrajectory {
    pub fn state_at(&self, lead: u32) -> Result<&[f64]> {
        self.leads
            .iter()
            .position(|&l| l == lead)
            .map(|i| self.states[i].as_slice())
            .ok_or_else(|| Error::Domain(format!("no truth state at lead {}h", lead)))
    }
}

/// Precomputed departure-point interpolation for one substep.
struct Stencil {
    rows: Vec<[usize; 4]>,
    cols: Vec<[usize; 4]>,
    row_w: Vec<[f64; 4]>,
    col_w: Vec<[f64; 4]>,
}

/// Cubic Lagrange weights on nodes `-1, 0, 1, 2` at fractional offset `t`.
fn lagrange_weights(t: f64) -> [f64; 4] {
    [
        -t * (t - 1.0) * (t - 2.0) / 6.0,
        (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
        -(t + 1.0) * t * (t - 2.0) / 2.0,
        (t + 1.0) * t * (t - 1.0) / 6.0,
    ]
}

fn taps(pos: f64, n: usize) -> ([usize; 4], [f64; 4]) {
    let base = pos.floor();
    let t = pos - base;
    let b = base as i64;
    let idx = [-1i64, 0, 1, 2].map(|o| (b + o).rem_euclid(n as i64) as usize);
    (idx, lagrange_weights(t))
}

pub struct TruthSimulator {
    spectral: Spectral,
    channels: usize,
    dynamics: DynamicsConfig,
    stencil: Option<Stencil>,
    damping: Option<Vec<f64>>,
}

impl TruthSimulator {
    pub fn new(height: usize, width: usize, channels: usize, dynamics: DynamicsConfig) -> Result<Self> {
        dynamics.validate()?;
        if channels == 0 {
            return Err(Error::Config("need at least one channel".into()));
        }
        let spectral = Spectral::new(height, width)?;
        let still = dynamics.zonal_speed == 0.0 && dynamics.vortex_speed == 0.0;
        let stencil = (!still).then(|| build_stencil(height, width, &dynamics));
        let damping = (dynamics.diffusion > 0.0).then(|| {
            let mut d = Vec::with_capacity(height * width);
            for i in 0..height {
                for j in 0..width {
                    let r = spectral.radial_frequency(i, j) / 0.5;
                    d.push((-dynamics.diffusion * r.powi(4)).exp());
                }
            }
            d
        });
        Ok(TruthSimulator {
            spectral,
            channels,
            dynamics,
            stencil,
            damping,
        })
    }

    pub fn spectral(&self) -> &Spectral {
        &self.spectral
    }

    pub fn dynamics(&self) -> &DynamicsConfig {
        &self.dynamics
    }

    /// Unit-variance initial condition for every channel.
    pub fn initial_condition(&self, seed: u64, init_index: u64) -> Vec<f64> {
        let gain = power_law(self.dynamics.spectrum_exponent, 0.0, self.dynamics.max_frequency);
        let mut out = Vec::with_capacity(self.channels * self.spectral.len());
        for c in 0..self.channels {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x7275_7468, init_index, c as u64]));
            out.extend(self.spectral.random_field(&mut rng, gain));
        }
        out
    }

    /// Advances every channel of `state` by one step in place.
    pub fn step(&self, state: &mut [f64]) {
        let plane = self.spectral.len();
        let mut scratch = vec![0.0; plane];
        for field in state.chunks_exact_mut(plane) {
            if let Some(st) = &self.stencil {
                let before = field.iter().sum::<f64>() / plane as f64;
                for _ in 0..self.dynamics.substeps {
                    advect(field, &mut scratch, st, self.spectral.width());
                    field.copy_from_slice(&scratch);
                }
                let after = field.iter().sum::<f64>() / plane as f64;
                let shift = before - after;
                if shift != 0.0 {
                    for v in field.iter_mut() {
                        *v += shift;
                    }
                }
            }
            if let Some(d) = &self.damping {
                let damped = self.spectral.filter_bins(field, d);
                field.copy_from_slice(&damped);
            }
        }
    }

    /// Trajectory at leads `0, step, …, max_lead`.
    pub fn simulate(&self, seed: u64, init_index: u64, max_lead: u32) -> TruthTrajectory {
        let step = self.dynamics.step_hours;
        let n_steps = max_lead / step;
        let mut state = self.initial_condition(seed, init_index);
        let mut states = vec![state.clone()];
        let mut leads = vec![0];
        for k in 1..=n_steps {
            self.step(&mut state);
            states.push(state.clone());
            leads.push(k * step);
        }
        TruthTrajectory {
            init_index,
            seed,
            leads,
            states,
        }
    }
}

fn advect(src: &[f64], dst: &mut [f64], st: &Stencil, width: usize) {
    for (p, out) in dst.iter_mut().enumerate() {
        let (r, c) = (&st.rows[p], &st.cols[p]);
        let (rw, cw) = (&st.row_w[p], &st.col_w[p]);
        let mut acc = 0.0;
        for a in 0..4 {
            let row = &src[r[a] * width..(r[a] + 1) * width];
            let mut line = 0.0;
            for b in 0..4 {
                line += cw[b] * row[c[b]];
            }
            acc += rw[a] * line;
        }
        *out = acc;
    }
}

/// Velocity in pixels per hour at fractional position `(y, x)`: a zonal
/// drift plus the flow of the streamfunction `A sin(4πx/W) sin(2πy/H)`.
fn velocity(y: f64, x: f64, h: f64, w: f64, dyn_: &DynamicsConfig) -> (f64, f64) {
    let a = dyn_.vortex_speed * h / (2.0 * PI);
    let (kx, ky) = (4.0 * PI / w, 2.0 * PI / h);
    let u = dyn_.zonal_speed + a * ky * (kx * x).sin() * (ky * y).cos();
    let v = -a * kx * (kx * x).cos() * (ky * y).sin();
    (v, u)
}

fn build_stencil(height: usize, width: usize, dyn_: &DynamicsConfig) -> Stencil {
    let dt = dyn_.step_hours as f64 / dyn_.substeps as f64;
    let (h, w) = (height as f64, width as f64);
    let n = height * width;
    let mut st = Stencil {
        rows: Vec::with_capacity(n),
        cols: Vec::with_capacity(n),
        row_w: Vec::with_capacity(n),
        col_w: Vec::with_capacity(n),
    };
    for i in 0..height {
        for j in 0..width {
            let (y, x) = (i as f64, j as f64);
            let (vy, vx) = velocity(y, x, h, w, dyn_);
            let (my, mx) = (y - 0.5 * dt * vy, x - 0.5 * dt * vx);
            let (vy, vx) = velocity(my, mx, h, w, dyn_);
            let (ry, rw) = taps(y - dt * vy, height);
            let (cx, cw) = taps(x - dt * vx, width);
            st.rows.push(ry);
            st.row_w.push(rw);
            st.cols.push(cx);
            st.col_w.push(cw);
        }
    }
    st
}
