//! Checkpoint layout (little-endian):
//!
//! ```text
//! "MOWECKPT"  u32 version
//! config: u32 N, C, H, W, patch, hidden, depth, heads, mlp_ratio (f32 bits),
//!         noise_dim, n_leads, n_leads × u32 lead hours
//! u32 step  32-byte dataset family hash
//! u32 n_tensors, then per tensor: u16 name length, name, u8 rank,
//!     rank × u32 extents, f32 data
//! optimizer: u32 n_tensors in the same encoding (hyperparameters, first
//!     and second moments)
//! u32 n_loss, n_loss × f32 loss history
//! ```

use std::path::Path;

use numcore::{AdamConfig, AdamState, ParamStore, Tensor};
use sha2::{Digest, Sha256};

use crate::binio::{to_u32, write_atomic_bytes, Decoder, Encoder};
use crate::error::{Error, Result};
use crate::gating::{param_specs, GateConfig, GateNetwork};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MOWECKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

const ADAM_HYPER: &str = "adam.hyper";
const FIRST: &str = "adam.m.";
const SECOND: &str = "adam.v.";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: GateConfig,
    pub params: ParamStore<f32>,
    pub adam: AdamState<f32>,
    pub step: u32,
    pub dataset_hash: [u8; 32],
    pub loss_history: Vec<f32>,
}

/// Rounds the f64 settings a checkpoint stores as f32, so that an encoded
/// checkpoint decodes to an equal value.
pub(crate) fn storable(mut config: GateConfig, adam: AdamConfig) -> (GateConfig, AdamConfig) {
    let r = |v: f64| v as f32 as f64;
    config.mlp_ratio = r(config.mlp_ratio);
    let adam = AdamConfig {
        lr: r(adam.lr),
        beta1: r(adam.beta1),
        beta2: r(adam.beta2),
        eps: r(adam.eps),
    };
    (config, adam)
}

impl Checkpoint {
    /// A checkpoint for a freshly initialized network.
    pub fn fresh(config: GateConfig, seed: u64, adam: AdamConfig, dataset_hash: [u8; 32]) -> Result<Self> {
        let (config, adam) = storable(config, adam);
        let net = GateNetwork::<f32>::init(config.clone(), seed)?;
        let params = net.into_params();
        let adam = AdamState::new(adam, params.tensors());
        Ok(Checkpoint {
            config,
            params,
            adam,
            step: 0,
            dataset_hash,
            loss_history: Vec::new(),
        })
    }

    pub fn network(&self) -> Result<GateNetwork<f32>> {
        GateNetwork::from_params(self.config.clone(), self.params.clone())
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let c = &self.config;
        let mut e = Encoder::new();
        e.raw(CHECKPOINT_MAGIC);
        e.u32(CHECKPOINT_VERSION);
        for (v, what) in [
            (c.n_experts, "n_experts"),
            (c.channels, "channels"),
            (c.height, "height"),
            (c.width, "width"),
            (c.patch_size, "patch_size"),
            (c.hidden_size, "hidden_size"),
            (c.depth, "depth"),
            (c.heads, "heads"),
        ] {
            e.u32(to_u32(v, what)?);
        }
        e.u32((c.mlp_ratio as f32).to_bits());
        e.u32(to_u32(c.noise_dim, "noise_dim")?);
        e.u32(to_u32(c.lead_set.len(), "n_leads")?);
        for &l in &c.lead_set {
            e.u32(l);
        }
        e.u32(self.step);
        e.raw(&self.dataset_hash);
        e.u32(to_u32(self.params.len(), "n_tensors")?);
        for (name, t) in self.params.iter() {
            e.tensor(name, t)?;
        }
        let a = &self.adam;
        e.u32(to_u32(1 + 2 * self.params.len(), "n_optimizer_tensors")?);
        let hyper = [a.config.lr, a.config.beta1, a.config.beta2, a.config.eps, a.step as f64];
        e.tensor(ADAM_HYPER, &Tensor::from_f64(&[hyper.len()], &hyper)?)?;
        for (name, m) in self.params.names().iter().zip(&a.first_moment) {
            e.tensor(&format!("{FIRST}{name}"), m)?;
        }
        for (name, v) in self.params.names().iter().zip(&a.second_moment) {
            e.tensor(&format!("{SECOND}{name}"), v)?;
        }
        e.u32(to_u32(self.loss_history.len(), "n_loss")?);
        e.f32s(&self.loss_history);
        Ok(e.bytes)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut d = Decoder::new(bytes);
        if d.take(8, "magic")? != CHECKPOINT_MAGIC {
            return Err(Error::format(0, "bad magic, not a checkpoint file"));
        }
        let version = d.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(8, format!("unsupported checkpoint version {}", version)));
        }
        let cfg_at = d.offset();
        let mut f = [0usize; 8];
        for (v, what) in f.iter_mut().zip(["N", "C", "H", "W", "patch", "hidden", "depth", "heads"]) {
            *v = d.u32(what)? as usize;
        }
        let mlp_ratio = f32::from_bits(d.u32("mlp_ratio")?) as f64;
        let noise_dim = d.u32("noise_dim")? as usize;
        let n_leads = d.u32("n_leads")? as usize;
        if n_leads > d.remaining() / 4 {
            return Err(Error::format(d.offset(), format!("implausible lead count {}", n_leads)));
        }
        let lead_set = (0..n_leads).map(|_| d.u32("lead hours")).collect::<Result<Vec<_>>>()?;
        let config = GateConfig {
            n_experts: f[0],
            channels: f[1],
            height: f[2],
            width: f[3],
            patch_size: f[4],
            hidden_size: f[5],
            depth: f[6],
            heads: f[7],
            mlp_ratio,
            lead_set,
            noise_dim,
        };
        config
            .validate()
            .map_err(|e| Error::format(cfg_at, format!("invalid config block: {}", e)))?;
        let step = d.u32("step")?;
        let mut dataset_hash = [0u8; 32];
        dataset_hash.copy_from_slice(d.take(32, "dataset hash")?);

        let specs = param_specs(&config);
        let n_at = d.offset();
        let n = d.u32("tensor count")? as usize;
        if n != specs.len() {
            return Err(Error::format(
                n_at,
                format!("{} tensors stored, architecture has {}", n, specs.len()),
            ));
        }
        let mut params = ParamStore::new();
        for s in &specs {
            let at = d.offset();
            let (name, t) = d.tensor("parameter")?;
            if name != s.name || t.shape() != s.shape.as_slice() {
                return Err(Error::format(
                    at,
                    format!(
                        "parameter `{}` {:?} does not match expected `{}` {:?}",
                        name,
                        t.shape(),
                        s.name,
                        s.shape
                    ),
                ));
            }
            params.insert(name, t)?;
        }

        let n_at = d.offset();
        let n_opt = d.u32("optimizer tensor count")? as usize;
        if n_opt != 1 + 2 * specs.len() {
            return Err(Error::format(n_at, format!("{} optimizer tensors, expected {}", n_opt, 1 + 2 * specs.len())));
        }
        let at = d.offset();
        let (name, hyper) = d.tensor("optimizer")?;
        if name != ADAM_HYPER || hyper.numel() != 5 {
            return Err(Error::format(at, format!("expected `{}` [5], found `{}`", ADAM_HYPER, name)));
        }
        let h = hyper.data();
        let config_adam = AdamConfig {
            lr: h[0] as f64,
            beta1: h[1] as f64,
            beta2: h[2] as f64,
            eps: h[3] as f64,
        };
        let mut moments = [Vec::new(), Vec::new()];
        for (prefix, slot) in [FIRST, SECOND].iter().zip(moments.iter_mut()) {
            for s in &specs {
                let at = d.offset();
                let (name, t) = d.tensor("optimizer moment")?;
                let want = format!("{prefix}{}", s.name);
                if name != want || t.shape() != s.shape.as_slice() {
                    return Err(Error::format(
                        at,
                        format!("optimizer tensor `{}` {:?} does not match `{}` {:?}", name, t.shape(), want, s.shape),
                    ));
                }
                slot.push(t);
            }
        }
        let [first_moment, second_moment] = moments;
        let n_loss = d.u32("loss count")? as usize;
        let loss_history = d.f32s(n_loss, "loss history")?;
        if d.remaining() != 0 {
            return Err(Error::format(d.offset(), format!("{} unexpected trailing bytes", d.remaining())));
        }
        Ok(Checkpoint {
            config,
            params,
            adam: AdamState {
                config: config_adam,
                step: h[4] as u64,
                first_moment,
                second_moment,
            },
            step,
            dataset_hash,
            loss_history,
        })
    }

    /// Short content id: first 16 hex digits of the SHA-256 of the encoding.
    pub fn id(&self) -> Result<String> {
        Ok(crate::synthdata::hex(&Sha256::digest(self.encode()?)[..8]))
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    write_atomic_bytes(path, &ckpt.encode()?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Dataset(format!("cannot read checkpoint {}: {}", path.display(), e)))?;
    Checkpoint::decode(&bytes)
}
