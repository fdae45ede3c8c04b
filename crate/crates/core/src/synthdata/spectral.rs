//! 2-D FFT on a doubly periodic `H × W` grid.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub struct Spectral {
    height: usize,
    width: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Spectral {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        for (name, n) in [("height", height), ("width", width)] {
            if n < 2 || !n.is_power_of_two() {
                return Err(Error::Config(format!("grid {} must be a power of two >= 2, got {}", name, n)));
            }
        }
        let mut planner = FftPlanner::new();
        Ok(Spectral {
            height,
            width,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn transform(&self, data: &mut [Complex64], rows: &dyn Fft<f64>, cols: &dyn Fft<f64>) {
        assert_eq!(data.len(), self.len());
        rows.process(data);
        let mut col = vec![Complex64::default(); self.height];
        for j in 0..self.width {
            for i in 0..self.height {
                col[i] = data[i * self.width + j];
            }
            cols.process(&mut col);
            for i in 0..self.height {
                data[i * self.width + j] = col[i];
            }
        }
    }

    /// Unnormalized forward transform.
    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, &*self.row_fwd, &*self.col_fwd);
    }

    /// Inverse transform including the `1 / (H·W)` factor.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, &*self.row_inv, &*self.col_inv);
        let s = 1.0 / self.len() as f64;
        for v in data {
            *v *= s;
        }
    }

    /// Radial frequency in cycles per pixel of spectral bin `(i, j)`.
    pub fn radial_frequency(&self, i: usize, j: usize) -> f64 {
        let f = |k: usize, n: usize| {
            let k = if k >= n / 2 { k as f64 - n as f64 } else { k as f64 };
            k / n as f64
        };
        f(i, self.height).hypot(f(j, self.width))
    }

    /// Multiplies the spectrum of a real field by an isotropic `gain(|f|)`.
    pub fn filter(&self, field: &[f64], gain: impl Fn(f64) -> f64) -> Vec<f64> {
        let mut buf: Vec<Complex64> = field.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut buf);
        for i in 0..self.height {
            for j in 0..self.width {
                buf[i * self.width + j] *= gain(self.radial_frequency(i, j));
            }
        }
        self.inverse(&mut buf);
        buf.into_iter().map(|c| c.re).collect()
    }

    /// Multiplies the spectrum by per-bin gains in row-major bin order.
    pub fn filter_bins(&self, field: &[f64], gains: &[f64]) -> Vec<f64> {
        assert_eq!(gains.len(), self.len());
        let mut buf: Vec<Complex64> = field.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut buf);
        for (b, g) in buf.iter_mut().zip(gains) {
            *b *= *g;
        }
        self.inverse(&mut buf);
        buf.into_iter().map(|c| c.re).collect()
    }

    /// Variance of white unit noise after filtering with `gain`.
    pub fn filtered_variance(&self, gain: impl Fn(f64) -> f64) -> f64 {
        let mut s = 0.0;
        for i in 0..self.height {
            for j in 0..self.width {
                s += gain(self.radial_frequency(i, j)).powi(2);
            }
        }
        s / self.len() as f64
    }

    /// Zero-mean Gaussian field with the given isotropic amplitude spectrum,
    /// scaled to unit expected variance.
    pub fn random_field<R: Rng>(&self, rng: &mut R, gain: impl Fn(f64) -> f64 + Copy) -> Vec<f64> {
        let white: Vec<f64> = (0..self.len()).map(|_| rng.sample(StandardNormal)).collect();
        let norm = self.filtered_variance(gain).sqrt();
        let mut out = self.filter(&white, gain);
        if norm > 0.0 {
            for v in &mut out {
                *v /= norm;
            }
        }
        out
    }
}

/// Band-limited power-law amplitude `|f|^(-exponent/2)` on `[f_min, f_max]`.
pub fn power_law(exponent: f64, f_min: f64, f_max: f64) -> impl Fn(f64) -> f64 + Copy {
    move |f| {
        if f < f_min || f > f_max || f == 0.0 {
            0.0
        } else {
            f.powf(-exponent / 2.0)
        }
    }
}

/// Gaussian smoothing with standard deviation `sigma` pixels.
pub fn gaussian(sigma: f64) -> impl Fn(f64) -> f64 + Copy {
    let c = 2.0 * std::f64::consts::PI * std::f64::consts::PI * sigma * sigma;
    move |f| (-c * f * f).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rejects_non_power_of_two() {
        assert!(matches!(Spectral::new(48, 64), Err(Error::Config(_))));
        assert!(Spectral::new(16, 32).is_ok());
    }

    #[test]
    fn round_trip_matches_input() {
        let s = Spectral::new(8, 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..128).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y = s.filter(&x, |_| 1.0);
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_matches_direct_dft() {
        let (h, w) = (4usize, 8usize);
        let s = Spectral::new(h, w).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        s.forward(&mut buf);
        let tau = 2.0 * std::f64::consts::PI;
        for ki in 0..h {
            for kj in 0..w {
                let mut acc = Complex64::default();
                for i in 0..h {
                    for j in 0..w {
                        let ph = -tau * (ki * i) as f64 / h as f64 - tau * (kj * j) as f64 / w as f64;
                        acc += x[i * w + j] * Complex64::new(ph.cos(), ph.sin());
                    }
                }
                assert!((acc - buf[ki * w + kj]).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn random_field_has_zero_mean_and_unit_variance_on_average() {
        let s = Spectral::new(32, 64).unwrap();
        let gain = power_law(3.0, 0.0, 0.25);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut var = 0.0;
        let reps = 200;
        for _ in 0..reps {
            let f = s.random_field(&mut rng, gain);
            let m = f.iter().sum::<f64>() / f.len() as f64;
            assert!(m.abs() < 1e-12);
            var += f.iter().map(|v| v * v).sum::<f64>() / f.len() as f64;
        }
        let var = var / reps as f64;
        assert!((var - 1.0).abs() < 0.1, "variance {var}");
    }
}
