//! Blending math: `Ŷ = Σᵢ Wᵢ ⊙ Eᵢ + b` with softmax-normalized weights.

use numcore::{kernels, Graph, Scalar, Tensor, Var};

use crate::error::{Error, Result};
use crate::gating::GateOutput;
use crate::stats::ChannelStats;

/// Allowed deviation of a weight sum from 1 before [`fuse`] refuses.
pub const UNIT_SUM_TOLERANCE: f64 = 1e-4;

/// Per-pixel, per-channel expert weights `[N, C, H, W]` (unit sum over the
/// expert axis) and bias `[C, H, W]` in standardized units.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightField<T> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> WeightField<T> {
    pub fn from_gate(out: &GateOutput<T>) -> Result<Self> {
        Ok(WeightField {
            weights: normalize_weights(&out.expert_logits)?,
            bias: out.bias_field.clone(),
        })
    }

    /// Largest `|Σᵢ w - 1|` over all pixels and channels.
    pub fn max_unit_sum_error(&self) -> f64 {
        unit_sum_error(&self.weights)
    }
}

fn unit_sum_error<T: Scalar>(weights: &Tensor<T>) -> f64 {
    let n = weights.shape()[0];
    let plane = weights.numel() / n.max(1);
    let w = weights.data();
    (0..plane)
        .map(|j| {
            let s: f64 = (0..n).map(|i| w[i * plane + j].as_f64()).sum();
            (s - 1.0).abs()
        })
        .fold(0.0, f64::max)
}

/// Softmax over the expert axis of `[N, C, H, W]` logits.
pub fn normalize_weights<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    if logits.rank() != 4 {
        return Err(Error::Config(format!("logits must be [N, C, H, W], got {:?}", logits.shape())));
    }
    if logits.shape()[0] < 2 {
        return Err(Error::Config(format!(
            "fusion needs at least 2 experts, got {}",
            logits.shape()[0]
        )));
    }
    Ok(kernels::softmax(logits, 0)?)
}

/// `Ŷ[c,h,w] = Σᵢ W[i,c,h,w]·E[i,c,h,w] + b[c,h,w]`.
pub fn fuse<T: Scalar>(experts: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    if experts.rank() != 4 || experts.shape() != weights.shape() || bias.shape() != &experts.shape()[1..] {
        return Err(Error::Contract(format!(
            "experts {:?}, weights {:?}, bias {:?} are inconsistent",
            experts.shape(),
            weights.shape(),
            bias.shape()
        )));
    }
    let err = unit_sum_error(weights);
    if err > UNIT_SUM_TOLERANCE {
        return Err(Error::Contract(format!(
            "weights deviate from unit sum by {:.3e}; pass normalized weights, not logits",
            err
        )));
    }
    let n = experts.shape()[0];
    let plane = bias.numel();
    let (e, w) = (experts.data(), weights.data());
    let out: Vec<T> = bias
        .data()
        .iter()
        .enumerate()
        .map(|(j, &b)| {
            let mut acc = T::zero();
            for i in 0..n {
                acc += w[i * plane + j] * e[i * plane + j];
            }
            acc + b
        })
        .collect();
    Ok(Tensor::new(bias.shape(), out)?)
}

/// Uniform-weight, zero-bias blend: the mean baseline.
pub fn mean_blend<T: Scalar>(experts: &Tensor<T>) -> Result<Tensor<T>> {
    let n = experts.shape()[0];
    let weights = Tensor::full(experts.shape(), T::one() / T::from_usize(n).unwrap());
    fuse(experts, &weights, &Tensor::zeros(&experts.shape()[1..]))
}

/// Applies a gate output to physical-unit experts: standardize per channel,
/// blend with the softmax weights and standardized bias, de-standardize.
pub fn fuse_standardized(
    experts_physical: &Tensor<f32>,
    stats: &ChannelStats,
    gate: &GateOutput<f32>,
) -> Result<Tensor<f32>> {
    stats.validate()?;
    if experts_physical.rank() != 4 || experts_physical.shape()[1] != stats.channels() {
        return Err(Error::Contract(format!(
            "experts {:?} do not match {} channel statistics",
            experts_physical.shape(),
            stats.channels()
        )));
    }
    let plane = experts_physical.shape()[2] * experts_physical.shape()[3];
    let mut standardized = experts_physical.clone();
    stats.standardize(standardized.data_mut(), plane);
    let field = WeightField::from_gate(gate)?;
    let mut out = fuse(&standardized, &field.weights, &field.bias)?;
    stats.destandardize(out.data_mut(), plane);
    Ok(out)
}

/// Differentiable blend on a graph.
///
/// `gate_out` is the head output `[B, (N+1)·C, H, W]`, `experts` the matching
/// standardized stacks `[B, N, C, H, W]`. Returns `[B, C, H, W]`.
pub fn blend_graph<T: Scalar>(g: &mut Graph<T>, gate_out: Var, experts: Var, n_experts: usize) -> Result<Var> {
    let shape = g.shape(experts).to_vec();
    if shape.len() != 5 || shape[1] != n_experts {
        return Err(Error::Contract(format!("experts must be [B, N, C, H, W], got {:?}", shape)));
    }
    let (b, c, h, w) = (shape[0], shape[2], shape[3], shape[4]);
    let chw = c * h * w;
    let r = g.reshape(gate_out, &[b, n_experts + 1, chw])?;
    let logits = g.narrow(r, 1, 0, n_experts)?;
    let weights = g.softmax(logits, 1)?;
    let e = g.reshape(experts, &[b, n_experts, chw])?;
    let weighted = g.mul(weights, e)?;
    let blended = g.sum_axis(weighted, 1)?;
    let bias = g.narrow(r, 1, n_experts, 1)?;
    let bias = g.reshape(bias, &[b, chw])?;
    let pred = g.add(blended, bias)?;
    Ok(g.reshape(pred, &[b, c, h, w])?)
}
