use std::path::Path;

use numcore::AdamConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gating::{GateConfig, SizePreset};
use crate::synthdata::DatasetManifest;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(Error::Config(format!("unknown precision `{}` (f32|f64)", other))),
        }
    }
}

/// Training settings as read from a flat key-value file; every field is
/// optional and may be overridden on the command line.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub size: Option<String>,
    pub patch_size: Option<usize>,
    pub hidden_size: Option<usize>,
    pub depth: Option<usize>,
    pub heads: Option<usize>,
    pub mlp_ratio: Option<f64>,
    pub noise_dim: Option<usize>,
    pub steps: Option<u32>,
    pub batch: Option<usize>,
    pub lr: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub eps: Option<f64>,
    pub clip: Option<bool>,
    pub checkpoint_every: Option<u32>,
    pub seed: Option<u64>,
    pub precision: Option<String>,
}

impl TrainSettings {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {}", path.display(), e)))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("train config: {}", e)))
    }

    /// Fields set in `other` replace those in `self`.
    pub fn overlay(mut self, other: TrainSettings) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f; } )* };
        }
        take!(
            size, patch_size, hidden_size, depth, heads, mlp_ratio, noise_dim, steps, batch, lr, beta1, beta2, eps,
            clip, checkpoint_every, seed, precision
        );
        self
    }

    /// Full training configuration for a dataset.
    pub fn resolve(&self, manifest: &DatasetManifest) -> Result<TrainConfig> {
        let preset = SizePreset::parse(self.size.as_deref().unwrap_or("small"))?;
        let mut gate = GateConfig::preset(
            preset,
            manifest.n_experts,
            manifest.channels,
            manifest.height,
            manifest.width,
            manifest.leads.clone(),
        );
        if let Some(v) = self.patch_size {
            gate.patch_size = v;
        }
        if let Some(v) = self.hidden_size {
            gate.hidden_size = v;
        }
        if let Some(v) = self.depth {
            gate.depth = v;
        }
        if let Some(v) = self.heads {
            gate.heads = v;
        }
        if let Some(v) = self.mlp_ratio {
            gate.mlp_ratio = v;
        }
        gate.noise_dim = self.noise_dim.unwrap_or(0);
        let d = AdamConfig::default();
        let cfg = TrainConfig {
            gate,
            adam: AdamConfig {
                lr: self.lr.unwrap_or(d.lr),
                beta1: self.beta1.unwrap_or(d.beta1),
                beta2: self.beta2.unwrap_or(d.beta2),
                eps: self.eps.unwrap_or(d.eps),
            },
            batch_size: self.batch.unwrap_or(4),
            steps: self.steps.unwrap_or(5000),
            checkpoint_every: self.checkpoint_every.unwrap_or(0),
            seed: self.seed.unwrap_or(0),
            precision: Precision::parse(self.precision.as_deref().unwrap_or("f32"))?,
            clip_norm: self.clip.unwrap_or(false).then_some(1.0),
            deterministic: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub gate: GateConfig,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub steps: u32,
    /// Write the checkpoint every this many steps; 0 disables.
    pub checkpoint_every: u32,
    pub seed: u64,
    pub precision: Precision,
    /// Global gradient-norm limit.
    pub clip_norm: Option<f64>,
    /// Assemble batches on the training thread instead of a prefetch thread.
    pub deterministic: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.gate.validate()?;
        if self.steps < 1 || self.batch_size < 1 {
            return Err(Error::Config(format!(
                "steps ({}) and batch ({}) must be >= 1",
                self.steps, self.batch_size
            )));
        }
        let a = &self.adam;
        if !(a.lr > 0.0) || !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return Err(Error::Config(format!("invalid optimizer settings {:?}", a)));
        }
        Ok(())
    }

    /// One line per setting, for logging before a run.
    pub fn describe(&self) -> String {
        let g = &self.gate;
        format!(
            "gate: N={} C={} H={} W={} patch={} hidden={} depth={} heads={} mlp_ratio={} noise_dim={} leads={:?}\n\
             optimizer: adam lr={} beta1={} beta2={} eps={} clip={:?}\n\
             run: steps={} batch={} seed={} precision={:?} checkpoint_every={} deterministic={}",
            g.n_experts,
            g.channels,
            g.height,
            g.width,
            g.patch_size,
            g.hidden_size,
            g.depth,
            g.heads,
            g.mlp_ratio,
            g.noise_dim,
            g.lead_set,
            self.adam.lr,
            self.adam.beta1,
            self.adam.beta2,
            self.adam.eps,
            self.clip_norm,
            self.steps,
            self.batch_size,
            self.seed,
            self.precision,
            self.checkpoint_every,
            self.deterministic
        )
    }
}
