//! The gating transformer.
//!
//! Experts are stacked channel-wise, patchified and linearly embedded; fixed
//! 2-D sine-cosine positions are added; a stack of adaLN-Zero blocks runs
//! under a lead-time conditioning vector; a modulated final norm and a
//! zero-initialized linear head produce `(N+1)·C` planes per pixel: `N·C`
//! expert logits followed by `C` bias planes.

use log::warn;
use numcore::{Graph, ParamStore, Scalar, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::config::GateConfig;
use super::embedding::{lead_features, positional_table, LEAD_FEATURES};
use super::patch::{patchify, unpatchify_index};
use crate::error::{Error, Result};

const NORM_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Init {
    Xavier,
    Normal,
    Zero,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    init: Init,
}

fn spec(name: impl Into<String>, shape: &[usize], init: Init) -> ParamSpec {
    ParamSpec {
        name: name.into(),
        shape: shape.to_vec(),
        init,
    }
}

fn linear_specs(out: &mut Vec<ParamSpec>, prefix: &str, d_in: usize, d_out: usize, init: Init) {
    out.push(spec(format!("{prefix}.weight"), &[d_in, d_out], init));
    out.push(spec(format!("{prefix}.bias"), &[d_out], Init::Zero));
}

/// Every parameter tensor of the architecture, in canonical order.
pub fn param_specs(cfg: &GateConfig) -> Vec<ParamSpec> {
    let d = cfg.hidden_size;
    let mut s = Vec::new();
    linear_specs(&mut s, "x_embed", cfg.input_width(), d, Init::Xavier);
    linear_specs(&mut s, "t_embed.fc1", LEAD_FEATURES, d, Init::Normal);
    linear_specs(&mut s, "t_embed.fc2", d, d, Init::Normal);
    if cfg.noise_dim > 0 {
        s.push(spec("z_embed.weight", &[cfg.noise_dim, d], Init::Normal));
    }
    for i in 0..cfg.depth {
        let p = format!("blocks.{i}");
        linear_specs(&mut s, &format!("{p}.adaln"), d, 6 * d, Init::Zero);
        for name in ["q", "k", "v", "proj"] {
            linear_specs(&mut s, &format!("{p}.attn.{name}"), d, d, Init::Xavier);
        }
        linear_specs(&mut s, &format!("{p}.mlp.fc1"), d, cfg.mlp_hidden(), Init::Xavier);
        linear_specs(&mut s, &format!("{p}.mlp.fc2"), cfg.mlp_hidden(), d, Init::Xavier);
    }
    linear_specs(&mut s, "final.adaln", d, 2 * d, Init::Zero);
    linear_specs(&mut s, "final.head", d, cfg.output_width(), Init::Zero);
    s
}

/// Weights plus biases of a `d_in → d_out` linear layer.
pub fn linear_params(d_in: usize, d_out: usize) -> usize {
    d_in * d_out + d_out
}

/// Exact number of scalar parameters, in closed form.
pub fn count_params(cfg: &GateConfig) -> usize {
    let d = cfg.hidden_size;
    let hd = cfg.mlp_hidden();
    let linear = linear_params;
    let embed = linear(cfg.input_width(), d);
    let cond = linear(LEAD_FEATURES, d) + linear(d, d) + cfg.noise_dim * d;
    let block = linear(d, 6 * d) + 4 * linear(d, d) + linear(d, hd) + linear(hd, d);
    let head = linear(d, 2 * d) + linear(d, cfg.output_width());
    embed + cond + cfg.depth * block + head
}

/// Per-pixel expert logits `[N, C, H, W]` and bias `[C, H, W]`, both in
/// standardized units.
#[derive(Clone, Debug, PartialEq)]
pub struct GateOutput<T> {
    pub expert_logits: Tensor<T>,
    pub bias_field: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConditioningVector<T> {
    pub values: Vec<T>,
    pub lead_hours: f64,
    pub noise: Option<Vec<T>>,
}

/// A batch prepared for the gate: patchified tokens `[B·T, N·C·p²]`, lead
/// features `[B, 512]` and optional noise `[B, noise_dim]`.
pub struct GateInputs<T> {
    pub batch: usize,
    pub tokens: Tensor<T>,
    pub features: Tensor<T>,
    pub noise: Option<Tensor<T>>,
}

impl<T: Scalar> GateInputs<T> {
    /// `experts[b]` is one sample's standardized `[N, C, H, W]` stack.
    pub fn new(
        cfg: &GateConfig,
        experts: &[&Tensor<T>],
        leads: &[f64],
        noise: Option<&[Vec<T>]>,
    ) -> Result<Self> {
        if experts.is_empty() || experts.len() != leads.len() {
            return Err(Error::Contract(format!(
                "{} expert stacks for {} leads",
                experts.len(),
                leads.len()
            )));
        }
        let want = [cfg.n_experts, cfg.channels, cfg.height, cfg.width];
        let mut tokens = Vec::with_capacity(experts.len() * cfg.tokens() * cfg.input_width());
        for e in experts {
            if e.shape() != want {
                return Err(Error::Config(format!(
                    "expert stack {:?} does not match gate dims {:?}",
                    e.shape(),
                    want
                )));
            }
            let stacked = (*e).clone().reshape(&[cfg.n_experts * cfg.channels, cfg.height, cfg.width])?;
            tokens.extend_from_slice(patchify(&stacked, cfg.patch_size)?.data());
        }
        let mut features = Vec::with_capacity(leads.len() * LEAD_FEATURES);
        for &t in leads {
            check_lead(cfg, t)?;
            features.extend(lead_features(t).into_iter().map(T::from_f64_lossy));
        }
        let noise = match (cfg.noise_dim, noise) {
            (0, None) => None,
            (0, Some(_)) => return Err(Error::Contract("noise given but the gate has noise_dim = 0".into())),
            (_, None) => {
                return Err(Error::Contract(format!("gate expects noise of width {}", cfg.noise_dim)))
            }
            (nz, Some(zs)) => {
                if zs.len() != leads.len() || zs.iter().any(|z| z.len() != nz) {
                    return Err(Error::Contract(format!("each noise vector must have width {}", nz)));
                }
                Some(Tensor::new(&[zs.len(), nz], zs.concat())?)
            }
        };
        let b = experts.len();
        Ok(GateInputs {
            batch: b,
            tokens: Tensor::new(&[b * cfg.tokens(), cfg.input_width()], tokens)?,
            features: Tensor::new(&[b, LEAD_FEATURES], features)?,
            noise,
        })
    }
}

fn check_lead(cfg: &GateConfig, t: f64) -> Result<()> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("lead time must be > 0 hours, got {}", t)));
    }
    if t < cfg.min_lead() as f64 || t > cfg.max_lead() as f64 {
        warn!(
            "lead {}h outside the trained range [{}, {}]h",
            t,
            cfg.min_lead(),
            cfg.max_lead()
        );
    }
    Ok(())
}

/// Graph handles for one adaLN-Zero block.
pub struct BlockVars {
    pub adaln: (Var, Var),
    pub q: (Var, Var),
    pub k: (Var, Var),
    pub v: (Var, Var),
    pub proj: (Var, Var),
    pub fc1: (Var, Var),
    pub fc2: (Var, Var),
}

/// `x ⊙ (1 + scale) + shift`, with per-sequence `shift`/`scale` rows already
/// repeated to token rows.
fn modulate<T: Scalar>(g: &mut Graph<T>, x: Var, shift: Var, scale: Var) -> Result<Var> {
    let one_plus = g.add_scalar(scale, T::one())?;
    let scaled = g.mul(x, one_plus)?;
    Ok(g.add(scaled, shift)?)
}

/// Splits `[B, n·d]` modulation output into `n` chunks, each repeated to
/// `[B·tokens, d]`.
fn modulation_chunks<T: Scalar>(g: &mut Graph<T>, m: Var, n: usize, d: usize, tokens: usize) -> Result<Vec<Var>> {
    (0..n)
        .map(|i| {
            let c = g.narrow(m, 1, i * d, d)?;
            Ok(g.repeat_rows(c, tokens)?)
        })
        .collect()
}

/// One adaLN-Zero transformer block over `groups` stacked sequences.
///
/// `cond_act` is the activated conditioning `[groups, d]`. The six modulation
/// vectors are (shift₁, scale₁, gate₁, shift₂, scale₂, gate₂).
pub fn dit_block<T: Scalar>(
    g: &mut Graph<T>,
    tokens: Var,
    cond_act: Var,
    p: &BlockVars,
    heads: usize,
    groups: usize,
) -> Result<Var> {
    let d = g.shape(tokens)[1];
    let per_group = g.shape(tokens)[0] / groups;
    let eps = T::from_f64_lossy(NORM_EPS);
    let m = g.linear(cond_act, p.adaln.0, p.adaln.1)?;
    let c = modulation_chunks(g, m, 6, d, per_group)?;

    let x = g.layer_norm(tokens, None, eps)?;
    let x = modulate(g, x, c[0], c[1])?;
    let q = g.linear(x, p.q.0, p.q.1)?;
    let k = g.linear(x, p.k.0, p.k.1)?;
    let v = g.linear(x, p.v.0, p.v.1)?;
    let a = g.attention(q, k, v, heads, groups)?;
    let a = g.linear(a, p.proj.0, p.proj.1)?;
    let a = g.mul(c[2], a)?;
    let h = g.add(tokens, a)?;

    let x = g.layer_norm(h, None, eps)?;
    let x = modulate(g, x, c[3], c[4])?;
    let f = g.linear(x, p.fc1.0, p.fc1.1)?;
    let f = g.gelu(f)?;
    let f = g.linear(f, p.fc2.0, p.fc2.1)?;
    let f = g.mul(c[5], f)?;
    Ok(g.add(h, f)?)
}

/// Parameter handles on a graph, aligned with the store order.
pub struct Bound {
    pub vars: Vec<Var>,
}

pub struct GateNetwork<T> {
    config: GateConfig,
    params: ParamStore<T>,
    positions: Tensor<T>,
}

impl<T: Scalar> GateNetwork<T> {
    /// Fresh network: Xavier-uniform linear weights, N(0, 0.02) conditioning
    /// weights, zeros for every bias, every adaLN projection and the head.
    pub fn init(config: GateConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.02).expect("valid std");
        let mut params = ParamStore::new();
        for s in param_specs(&config) {
            let n: usize = s.shape.iter().product();
            let data: Vec<T> = match s.init {
                Init::Zero => vec![T::zero(); n],
                Init::Normal => (0..n).map(|_| T::from_f64_lossy(normal.sample(&mut rng))).collect(),
                Init::Xavier => {
                    let limit = (6.0 / (s.shape[0] + s.shape[1]) as f64).sqrt();
                    let u = Uniform::new_inclusive(-limit, limit);
                    (0..n).map(|_| T::from_f64_lossy(u.sample(&mut rng))).collect()
                }
            };
            params.insert(s.name, Tensor::new(&s.shape, data)?)?;
        }
        Self::from_params(config, params)
    }

    /// Wraps existing parameters, checking names, order and shapes against
    /// the architecture.
    pub fn from_params(config: GateConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let specs = param_specs(&config);
        if specs.len() != params.len() {
            return Err(Error::Config(format!(
                "architecture has {} parameter tensors, got {}",
                specs.len(),
                params.len()
            )));
        }
        for (s, (name, t)) in specs.iter().zip(params.iter()) {
            if s.name != name || s.shape != t.shape() {
                return Err(Error::Config(format!(
                    "parameter `{}` {:?} does not match expected `{}` {:?}",
                    name,
                    t.shape(),
                    s.name,
                    s.shape
                )));
            }
        }
        let pos = positional_table(config.grid_rows(), config.grid_cols(), config.hidden_size);
        let positions = Tensor::from_f64(&[config.tokens(), config.hidden_size], &pos)?;
        Ok(GateNetwork {
            config,
            params,
            positions,
        })
    }

    pub fn config(&self) -> &GateConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore<T> {
        self.params
    }

    pub fn positions(&self) -> &Tensor<T> {
        &self.positions
    }

    /// Registers every parameter on `g`, trainable or as constants.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|(name, t)| {
                if trainable {
                    g.param(name, t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect();
        Bound { vars }
    }

    fn var(&self, bound: &Bound, name: &str) -> Var {
        let i = self
            .params
            .position(name)
            .unwrap_or_else(|| panic!("parameter `{name}` missing from a validated store"));
        bound.vars[i]
    }

    fn linear_vars(&self, bound: &Bound, prefix: &str) -> (Var, Var) {
        (
            self.var(bound, &format!("{prefix}.weight")),
            self.var(bound, &format!("{prefix}.bias")),
        )
    }

    pub fn block_vars(&self, bound: &Bound, i: usize) -> BlockVars {
        let p = format!("blocks.{i}");
        BlockVars {
            adaln: self.linear_vars(bound, &format!("{p}.adaln")),
            q: self.linear_vars(bound, &format!("{p}.attn.q")),
            k: self.linear_vars(bound, &format!("{p}.attn.k")),
            v: self.linear_vars(bound, &format!("{p}.attn.v")),
            proj: self.linear_vars(bound, &format!("{p}.attn.proj")),
            fc1: self.linear_vars(bound, &format!("{p}.mlp.fc1")),
            fc2: self.linear_vars(bound, &format!("{p}.mlp.fc2")),
        }
    }

    /// Conditioning `[B, d]` from lead features and optional noise.
    pub fn condition_graph(&self, g: &mut Graph<T>, bound: &Bound, inputs: &GateInputs<T>) -> Result<Var> {
        let feats = g.constant(inputs.features.clone());
        let (w1, b1) = self.linear_vars(bound, "t_embed.fc1");
        let (w2, b2) = self.linear_vars(bound, "t_embed.fc2");
        let h = g.linear(feats, w1, b1)?;
        let h = g.silu(h)?;
        let c = g.linear(h, w2, b2)?;
        match &inputs.noise {
            Some(z) => {
                let z = g.constant(z.clone());
                let wz = self.var(bound, "z_embed.weight");
                let proj = g.matmul(z, wz)?;
                Ok(g.add(c, proj)?)
            }
            None => Ok(c),
        }
    }

    /// Full gate on a graph; returns `[B, (N+1)·C, H, W]`.
    pub fn forward_graph(&self, g: &mut Graph<T>, bound: &Bound, inputs: &GateInputs<T>) -> Result<Var> {
        let cfg = &self.config;
        let (b, t, d) = (inputs.batch, cfg.tokens(), cfg.hidden_size);
        let x = g.constant(inputs.tokens.clone());
        let (we, be) = self.linear_vars(bound, "x_embed");
        let h = g.linear(x, we, be)?;
        let mut pos = Vec::with_capacity(b * t * d);
        for _ in 0..b {
            pos.extend_from_slice(self.positions.data());
        }
        let pos = g.constant(Tensor::new(&[b * t, d], pos)?);
        let mut h = g.add(h, pos)?;

        let c = self.condition_graph(g, bound, inputs)?;
        let c_act = g.silu(c)?;
        for i in 0..cfg.depth {
            let vars = self.block_vars(bound, i);
            h = dit_block(g, h, c_act, &vars, cfg.heads, b)?;
        }

        let (wa, ba) = self.linear_vars(bound, "final.adaln");
        let m = g.linear(c_act, wa, ba)?;
        let chunks = modulation_chunks(g, m, 2, d, t)?;
        let x = g.layer_norm(h, None, T::from_f64_lossy(NORM_EPS))?;
        let x = modulate(g, x, chunks[0], chunks[1])?;
        let (wh, bh) = self.linear_vars(bound, "final.head");
        let out = g.linear(x, wh, bh)?;

        let k = (cfg.n_experts + 1) * cfg.channels;
        let index = unpatchify_index(b, k, cfg.patch_size, cfg.height, cfg.width);
        Ok(g.gather(out, index, &[b, k, cfg.height, cfg.width])?)
    }

    /// Splits a `[B, (N+1)·C, H, W]` head output into per-sample outputs.
    pub fn split_output(&self, out: &Tensor<T>) -> Result<Vec<GateOutput<T>>> {
        let cfg = &self.config;
        let plane = cfg.height * cfg.width;
        let (nc, c) = (cfg.n_experts * cfg.channels, cfg.channels);
        let per = (nc + c) * plane;
        out.data()
            .chunks_exact(per)
            .map(|s| {
                Ok(GateOutput {
                    expert_logits: Tensor::new(
                        &[cfg.n_experts, c, cfg.height, cfg.width],
                        s[..nc * plane].to_vec(),
                    )?,
                    bias_field: Tensor::new(&[c, cfg.height, cfg.width], s[nc * plane..].to_vec())?,
                })
            })
            .collect()
    }

    /// Inference over a batch of standardized `[N, C, H, W]` stacks.
    pub fn forward_batch(
        &self,
        experts: &[&Tensor<T>],
        leads: &[f64],
        noise: Option<&[Vec<T>]>,
    ) -> Result<Vec<GateOutput<T>>> {
        let inputs = GateInputs::new(&self.config, experts, leads, noise)?;
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let out = self.forward_graph(&mut g, &bound, &inputs)?;
        self.split_output(g.value(out))
    }

    pub fn forward(&self, experts: &Tensor<T>, lead: f64, noise: Option<&[T]>) -> Result<GateOutput<T>> {
        let noise = noise.map(|z| vec![z.to_vec()]);
        let mut outs = self.forward_batch(&[experts], &[lead], noise.as_deref())?;
        Ok(outs.remove(0))
    }

    /// The conditioning vector for one lead time (and noise sample).
    pub fn embed_condition(&self, lead: f64, noise: Option<&[T]>) -> Result<ConditioningVector<T>> {
        let cfg = &self.config;
        check_lead(cfg, lead)?;
        let feats = lead_features(lead).into_iter().map(T::from_f64_lossy).collect();
        let noise_t = match (cfg.noise_dim, noise) {
            (0, None) => None,
            (nz, Some(z)) if nz > 0 && z.len() == nz => Some(Tensor::new(&[1, nz], z.to_vec())?),
            (nz, _) => {
                return Err(Error::Contract(format!(
                    "noise must be present with width {} iff noise_dim > 0",
                    nz
                )))
            }
        };
        let inputs = GateInputs {
            batch: 1,
            tokens: Tensor::zeros(&[0, cfg.input_width()]),
            features: Tensor::new(&[1, LEAD_FEATURES], feats)?,
            noise: noise_t,
        };
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let c = self.condition_graph(&mut g, &bound, &inputs)?;
        Ok(ConditioningVector {
            values: g.value(c).data().to_vec(),
            lead_hours: lead,
            noise: noise.map(<[T]>::to_vec),
        })
    }
}
