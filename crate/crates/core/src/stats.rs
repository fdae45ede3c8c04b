use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-channel normalization statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != self.std.len() {
            return Err(Error::Dataset(format!(
                "{} means but {} standard deviations",
                self.mean.len(),
                self.std.len()
            )));
        }
        if let Some((c, s)) = self.std.iter().enumerate().find(|(_, &s)| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::Dataset(format!("channel {} has std {} (must be > 0)", c, s)));
        }
        Ok(())
    }

    /// Standardizes `[.., C, H, W]` data in place, `plane = H·W`.
    pub fn standardize(&self, data: &mut [f32], plane: usize) {
        let c = self.channels();
        for (i, chunk) in data.chunks_exact_mut(plane).enumerate() {
            let ch = i % c;
            let (m, s) = (self.mean[ch], self.std[ch]);
            for v in chunk {
                *v = ((*v as f64 - m) / s) as f32;
            }
        }
    }

    pub fn destandardize(&self, data: &mut [f32], plane: usize) {
        let c = self.channels();
        for (i, chunk) in data.chunks_exact_mut(plane).enumerate() {
            let ch = i % c;
            let (m, s) = (self.mean[ch], self.std[ch]);
            for v in chunk {
                *v = (*v as f64 * s + m) as f32;
            }
        }
    }
}
