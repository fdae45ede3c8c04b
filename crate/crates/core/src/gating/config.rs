use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyperparameters plus the problem dimensions they are built for.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    pub n_experts: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub patch_size: usize,
    pub hidden_size: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
    /// Lead times in hours, strictly ascending.
    pub lead_set: Vec<u32>,
    /// Width of the optional noise input; 0 disables it.
    pub noise_dim: usize,
}

/// Named architecture presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SizePreset {
    Base,
    Small,
}

impl SizePreset {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "base" => Ok(SizePreset::Base),
            "small" => Ok(SizePreset::Small),
            other => Err(Error::Config(format!("unknown size preset `{}` (base|small)", other))),
        }
    }

    /// (patch, hidden, depth, heads, mlp_ratio)
    pub fn hyperparameters(self) -> (usize, usize, usize, usize, f64) {
        match self {
            SizePreset::Base => (8, 384, 6, 6, 4.0),
            SizePreset::Small => (8, 256, 3, 4, 4.0),
        }
    }

    pub fn apply(self, cfg: &mut GateConfig) {
        let (p, d, l, h, r) = self.hyperparameters();
        cfg.patch_size = p;
        cfg.hidden_size = d;
        cfg.depth = l;
        cfg.heads = h;
        cfg.mlp_ratio = r;
    }

    pub fn name(self) -> &'static str {
        match self {
            SizePreset::Base => "base",
            SizePreset::Small => "small",
        }
    }
}

impl GateConfig {
    /// A preset architecture for the given problem dimensions.
    pub fn preset(
        preset: SizePreset,
        n_experts: usize,
        channels: usize,
        height: usize,
        width: usize,
        lead_set: Vec<u32>,
    ) -> Self {
        let mut cfg = GateConfig {
            n_experts,
            channels,
            height,
            width,
            patch_size: 0,
            hidden_size: 0,
            depth: 0,
            heads: 0,
            mlp_ratio: 0.0,
            lead_set,
            noise_dim: 0,
        };
        preset.apply(&mut cfg);
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_experts < 2 {
            return fail(format!("need at least 2 experts, got {}", self.n_experts));
        }
        if self.channels == 0 {
            return fail("need at least one channel".into());
        }
        let p = self.patch_size;
        if p == 0 || self.height == 0 || self.width == 0 || self.height % p != 0 || self.width % p != 0 {
            return fail(format!(
                "grid {}x{} is not divisible by patch size {}",
                self.height, self.width, p
            ));
        }
        if self.heads == 0 || self.hidden_size % self.heads != 0 {
            return fail(format!(
                "hidden size {} is not divisible by {} heads",
                self.hidden_size, self.heads
            ));
        }
        if self.hidden_size == 0 || self.hidden_size % 4 != 0 {
            return fail(format!(
                "hidden size {} must be a positive multiple of 4 (2-D sine-cosine positions)",
                self.hidden_size
            ));
        }
        if !(self.mlp_ratio > 0.0) || self.mlp_hidden() == 0 {
            return fail(format!("mlp ratio {} gives an empty MLP", self.mlp_ratio));
        }
        if self.lead_set.is_empty() {
            return fail("lead set is empty".into());
        }
        if self.lead_set[0] == 0 || self.lead_set.windows(2).any(|w| w[1] <= w[0]) {
            return fail(format!(
                "lead set {:?} must be positive and strictly ascending",
                self.lead_set
            ));
        }
        Ok(())
    }

    pub fn grid_rows(&self) -> usize {
        self.height / self.patch_size
    }

    pub fn grid_cols(&self) -> usize {
        self.width / self.patch_size
    }

    pub fn tokens(&self) -> usize {
        self.grid_rows() * self.grid_cols()
    }

    pub fn input_width(&self) -> usize {
        self.n_experts * self.channels * self.patch_size * self.patch_size
    }

    pub fn output_width(&self) -> usize {
        (self.n_experts + 1) * self.channels * self.patch_size * self.patch_size
    }

    pub fn mlp_hidden(&self) -> usize {
        (self.hidden_size as f64 * self.mlp_ratio).round() as usize
    }

    pub fn min_lead(&self) -> u32 {
        self.lead_set[0]
    }

    pub fn max_lead(&self) -> u32 {
        *self.lead_set.last().unwrap()
    }
}
