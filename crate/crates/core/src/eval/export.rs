//! Weight and bias map export.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use numcore::Tensor;

use super::metrics::mean_weight_entropy;
use crate::binio::{write_atomic_bytes, Encoder};
use crate::error::{Error, Result};
use crate::fusion::{fuse, WeightField};
use crate::gating::GateNetwork;
use crate::synthdata::Dataset;

#[derive(Clone, Debug, PartialEq)]
pub struct WeightSummary {
    pub lead: u32,
    /// Mean weight of each expert over pixels, channels and inits.
    pub mean_weights: Vec<f64>,
    pub mean_entropy: f64,
    pub max_unit_sum_error: f64,
}

fn standardized_stack(data: &Dataset, init: usize, lead: u32) -> Result<Tensor<f32>> {
    let k = data.manifest().lead_index(lead)?;
    Ok(data.standardized_at(init, k)?.experts)
}

fn check_request(data: &Dataset, net: &GateNetwork<f32>, inits: &[usize], leads: &[u32]) -> Result<()> {
    let m = data.manifest();
    if let Some(&i) = inits.iter().find(|&&i| i >= m.n_inits) {
        return Err(Error::Domain(format!("init {} out of range (dataset has {})", i, m.n_inits)));
    }
    if let Some(l) = leads.iter().find(|l| !net.config().lead_set.contains(l)) {
        return Err(Error::Domain(format!(
            "lead {}h is not in the trained lead set {:?}",
            l,
            net.config().lead_set
        )));
    }
    Ok(())
}

/// Weight statistics per lead, averaged over `inits`.
pub fn weight_statistics(
    net: &GateNetwork<f32>,
    data: &Dataset,
    inits: &[usize],
    leads: &[u32],
) -> Result<Vec<WeightSummary>> {
    check_request(data, net, inits, leads)?;
    if inits.is_empty() {
        return Err(Error::Contract("no inits given".into()));
    }
    let n = net.config().n_experts;
    leads
        .iter()
        .map(|&lead| {
            let mut sums = vec![0.0; n];
            let mut entropy = 0.0;
            let mut worst: f64 = 0.0;
            for &init in inits {
                let stack = standardized_stack(data, init, lead)?;
                let field = WeightField::from_gate(&net.forward(&stack, lead as f64, None)?)?;
                let per = field.weights.numel() / n;
                for (i, w) in field.weights.data().chunks_exact(per).enumerate() {
                    sums[i] += w.iter().map(|&v| v as f64).sum::<f64>() / per as f64;
                }
                entropy += mean_weight_entropy(&field.weights);
                worst = worst.max(field.max_unit_sum_error());
            }
            let k = inits.len() as f64;
            Ok(WeightSummary {
                lead,
                mean_weights: sums.into_iter().map(|s| s / k).collect(),
                mean_entropy: entropy / k,
                max_unit_sum_error: worst,
            })
        })
        .collect()
}

fn f32_bytes(t: &Tensor<f32>) -> Vec<u8> {
    let mut e = Encoder::new();
    e.f32s(t.data());
    e.bytes
}

/// Entropy of the expert weights at each `(c, h, w)`.
fn entropy_field(weights: &Tensor<f32>) -> Tensor<f32> {
    let n = weights.shape()[0];
    let per = weights.numel() / n;
    let w = weights.data();
    let data = (0..per)
        .map(|p| {
            -(0..n)
                .map(|i| w[i * per + p] as f64)
                .filter(|&v| v > 0.0)
                .map(|v| v * v.ln())
                .sum::<f64>() as f32
        })
        .collect();
    Tensor::new(&weights.shape()[1..], data).expect("shape from weights")
}

/// Writes, per lead, raw little-endian f32 arrays `weights_<L>h.f32`
/// `[N, C, H, W]`, `bias_<L>h.f32` `[C, H, W]` (standardized units) and
/// `entropy_<L>h.f32` `[C, H, W]`, plus `weights.txt` with dims and a
/// per-lead summary. Returns the summary rows.
pub fn export_weight_maps(
    net: &GateNetwork<f32>,
    data: &Dataset,
    init: usize,
    leads: &[u32],
    out_dir: &Path,
) -> Result<Vec<WeightSummary>> {
    check_request(data, net, &[init], leads)?;
    std::fs::create_dir_all(out_dir)?;
    let cfg = net.config();
    let m = data.manifest();
    let mut rows = Vec::new();
    for &lead in leads {
        let stack = standardized_stack(data, init, lead)?;
        let field = WeightField::from_gate(&net.forward(&stack, lead as f64, None)?)?;
        write_atomic_bytes(&out_dir.join(format!("weights_{}h.f32", lead)), &f32_bytes(&field.weights))?;
        write_atomic_bytes(&out_dir.join(format!("bias_{}h.f32", lead)), &f32_bytes(&field.bias))?;
        write_atomic_bytes(
            &out_dir.join(format!("entropy_{}h.f32", lead)),
            &f32_bytes(&entropy_field(&field.weights)),
        )?;
        let per = field.weights.numel() / cfg.n_experts;
        rows.push(WeightSummary {
            lead,
            mean_weights: field
                .weights
                .data()
                .chunks_exact(per)
                .map(|w| w.iter().map(|&v| v as f64).sum::<f64>() / per as f64)
                .collect(),
            mean_entropy: mean_weight_entropy(&field.weights),
            max_unit_sum_error: field.max_unit_sum_error(),
        });
    }
    let mut s = String::new();
    let _ = writeln!(s, "init = {}", init);
    let _ = writeln!(
        s,
        "weights = f32 little-endian [N={}, C={}, H={}, W={}]",
        cfg.n_experts, cfg.channels, cfg.height, cfg.width
    );
    let _ = writeln!(s, "bias = f32 little-endian [C={}, H={}, W={}], standardized units", cfg.channels, cfg.height, cfg.width);
    let _ = writeln!(s, "entropy = f32 little-endian [C={}, H={}, W={}], natural log", cfg.channels, cfg.height, cfg.width);
    let _ = writeln!(s, "experts = {:?}", m.expert_names);
    let _ = write!(s, "\nlead");
    for name in &m.expert_names {
        let _ = write!(s, "\tmean_w_{}", name);
    }
    let _ = writeln!(s, "\tmean_entropy\tmax_unit_sum_error");
    for r in &rows {
        let _ = write!(s, "{}", r.lead);
        for w in &r.mean_weights {
            let _ = write!(s, "\t{:.6}", w);
        }
        let _ = writeln!(s, "\t{:.6}\t{:.3e}", r.mean_entropy, r.max_unit_sum_error);
    }
    write_atomic_bytes(&out_dir.join("weights.txt"), s.as_bytes())?;
    Ok(rows)
}

/// Fused physical-unit forecast `[C, H, W]` for one record.
pub fn fuse_record(net: &GateNetwork<f32>, data: &Dataset, init: usize, lead: u32) -> Result<Tensor<f32>> {
    check_request(data, net, &[init], &[lead])?;
    let m = data.manifest();
    let stack = standardized_stack(data, init, lead)?;
    let field = WeightField::from_gate(&net.forward(&stack, lead as f64, None)?)?;
    let mut out = fuse(&stack, &field.weights, &field.bias)?;
    m.stats.destandardize(out.data_mut(), m.plane());
    Ok(out)
}

/// Writes a fused forecast as raw f32 with a text sidecar of dims.
pub fn write_field(path: &Path, field: &Tensor<f32>, note: &str) -> Result<PathBuf> {
    write_atomic_bytes(path, &f32_bytes(field))?;
    let mut side = path.as_os_str().to_owned();
    side.push(".txt");
    let side = PathBuf::from(side);
    let text = format!("dims = f32 little-endian {:?}\n{}\n", field.shape(), note);
    write_atomic_bytes(&side, text.as_bytes())?;
    Ok(side)
}
