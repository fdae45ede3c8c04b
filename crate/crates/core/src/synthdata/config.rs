use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::experts::ExpertProfile;
use super::truth::DynamicsConfig;
use crate::error::{Error, Result};

/// Label and generator-unit scaling of one channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSpec {
    pub name: String,
    pub mean: f64,
    pub scale: f64,
}

/// Everything needed to regenerate a benchmark bit-for-bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub train_inits: usize,
    pub test_inits: usize,
    pub height: usize,
    pub width: usize,
    pub leads: Vec<u32>,
    pub channels: Vec<String>,
    pub channel_mean: Vec<f64>,
    pub channel_scale: Vec<f64>,
    #[serde(default)]
    pub dynamics: DynamicsConfig,
    /// Canonical expert order.
    pub experts: Vec<String>,
    pub expert: BTreeMap<String, ExpertProfile>,
}

impl GeneratorConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: GeneratorConfig = toml::from_str(text).map_err(|e| Error::Config(format!("generator config: {}", e)))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {}", path.display(), e)))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("generator config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_inits == 0 {
            return Err(Error::Config("train_inits must be >= 1".into()));
        }
        let c = self.channels.len();
        if c == 0 || self.channel_mean.len() != c || self.channel_scale.len() != c {
            return Err(Error::Config(format!(
                "channels ({}), channel_mean ({}) and channel_scale ({}) must have equal nonzero length",
                c,
                self.channel_mean.len(),
                self.channel_scale.len()
            )));
        }
        if self.channel_scale.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::Config("channel_scale entries must be > 0".into()));
        }
        self.dynamics.validate()?;
        let step = self.dynamics.step_hours;
        if self.leads.is_empty()
            || self.leads.windows(2).any(|w| w[0] >= w[1])
            || self.leads.iter().any(|&l| l == 0 || l % step != 0)
        {
            return Err(Error::Config(format!(
                "leads must be ascending positive multiples of {}h, got {:?}",
                step, self.leads
            )));
        }
        if self.experts.len() < 2 {
            return Err(Error::Config("need at least two experts".into()));
        }
        for name in &self.experts {
            if !self.expert.contains_key(name) {
                return Err(Error::Config(format!("expert `{}` has no profile", name)));
            }
        }
        if let Some(extra) = self.expert.keys().find(|k| !self.experts.contains(k)) {
            return Err(Error::Config(format!("profile `{}` is not listed in `experts`", extra)));
        }
        for p in self.profiles() {
            p.validate()?;
        }
        Ok(())
    }

    /// Profiles in canonical order, with names filled in.
    pub fn profiles(&self) -> Vec<ExpertProfile> {
        self.experts
            .iter()
            .map(|n| {
                let mut p = self.expert[n].clone();
                p.name = n.clone();
                p
            })
            .collect()
    }

    pub fn channel_specs(&self) -> Vec<ChannelSpec> {
        (0..self.channels.len())
            .map(|c| ChannelSpec {
                name: self.channels[c].clone(),
                mean: self.channel_mean[c],
                scale: self.channel_scale[c],
            })
            .collect()
    }

    pub fn max_lead(&self) -> u32 {
        *self.leads.last().expect("validated")
    }
}
