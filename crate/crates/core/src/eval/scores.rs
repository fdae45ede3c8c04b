use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use numcore::Tensor;

use super::metrics::Weighting;
use crate::binio::write_atomic_bytes;
use crate::error::{Error, Result};
use crate::fusion::{fuse, WeightField};
use crate::gating::GateNetwork;
use crate::synthdata::Dataset;

pub const MOWE: &str = "mowe";
pub const MEAN: &str = "mean";
pub const ORACLE: &str = "oracle";

/// Samples per gate call during evaluation. Fixed so results do not depend
/// on the thread count.
const EVAL_BATCH: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub model: String,
    pub channel: usize,
    pub lead: u32,
    /// Physical units.
    pub rmse: f64,
}

/// RMSE per `(model, channel, lead)` with provenance metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub dataset_hash: String,
    pub checkpoint: Option<String>,
    pub weighting: String,
    pub channel_std: Vec<f64>,
    pub leads: Vec<u32>,
    pub models: Vec<String>,
    pub rows: Vec<ScoreRow>,
}

impl ScoreTable {
    pub fn rmse(&self, model: &str, channel: usize, lead: u32) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.model == model && r.channel == channel && r.lead == lead)
            .map(|r| r.rmse)
    }

    /// Channel-pooled RMSE in standard-deviation units:
    /// `sqrt(mean_c (rmse_c / std_c)²)`.
    pub fn normalized(&self, model: &str, lead: u32) -> Option<f64> {
        let c = self.channel_std.len();
        let mut acc = 0.0;
        for ch in 0..c {
            acc += (self.rmse(model, ch, lead)? / self.channel_std[ch]).powi(2);
        }
        Some((acc / c as f64).sqrt())
    }

    /// Mean over leads of [`ScoreTable::normalized`].
    pub fn lead_average(&self, model: &str) -> Option<f64> {
        let mut s = 0.0;
        for &l in &self.leads {
            s += self.normalized(model, l)?;
        }
        Some(s / self.leads.len() as f64)
    }

    /// Every declared cell is present exactly once and non-negative.
    pub fn validate(&self) -> Result<()> {
        let want = self.models.len() * self.channel_std.len() * self.leads.len();
        if self.rows.len() != want {
            return Err(Error::Invariant(format!("score table has {} rows, expected {}", self.rows.len(), want)));
        }
        for m in &self.models {
            for c in 0..self.channel_std.len() {
                for &l in &self.leads {
                    match self.rmse(m, c, l) {
                        Some(v) if v >= 0.0 && v.is_finite() => {}
                        other => {
                            return Err(Error::Invariant(format!(
                                "cell ({}, {}, {}h) is {:?}",
                                m, c, l, other
                            )))
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Appends rows of another table over the same data.
    pub fn merge(&mut self, other: &ScoreTable) -> Result<()> {
        if other.leads != self.leads || other.channel_std != self.channel_std {
            return Err(Error::Contract("score tables cover different leads or channels".into()));
        }
        for m in &other.models {
            if self.models.contains(m) {
                return Err(Error::Contract(format!("model `{}` already present", m)));
            }
            self.models.push(m.clone());
        }
        self.rows.extend(other.rows.iter().cloned());
        Ok(())
    }

    /// Tab-separated `model, channel, lead_hours, rmse`, preceded by `#`
    /// metadata lines.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# dataset_hash\t{}", self.dataset_hash);
        let _ = writeln!(s, "# checkpoint\t{}", self.checkpoint.as_deref().unwrap_or("-"));
        let _ = writeln!(s, "# weighting\t{}", self.weighting);
        s.push_str("model\tchannel\tlead_hours\trmse\n");
        for r in &self.rows {
            let _ = writeln!(s, "{}\t{}\t{}\t{}", r.model, r.channel, r.lead, r.rmse);
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("score table serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Dataset(format!("score table: {}", e)))
    }

    /// Lead-by-model summary of [`ScoreTable::normalized`].
    pub fn summary(&self) -> String {
        let mut s = String::from("lead");
        for m in &self.models {
            let _ = write!(s, "\t{}", m);
        }
        s.push('\n');
        for &l in &self.leads {
            let _ = write!(s, "{}", l);
            for m in &self.models {
                let _ = write!(s, "\t{:.4}", self.normalized(m, l).unwrap_or(f64::NAN));
            }
            s.push('\n');
        }
        s
    }

    /// Writes `path` (TSV) and `path.json`.
    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic_bytes(path, self.to_tsv().as_bytes())?;
        write_atomic_bytes(&json_path(path), self.to_json().as_bytes())
    }
}

pub fn json_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// `(x - mean) / std` per channel, in f64.
pub(crate) fn standardize_f64(data: &[f32], mean: &[f64], std: &[f64], plane: usize) -> Vec<f64> {
    let c = mean.len();
    data.iter()
        .enumerate()
        .map(|(i, &v)| {
            let ch = (i / plane) % c;
            (v as f64 - mean[ch]) / std[ch]
        })
        .collect()
}

/// Scores the mean baseline, every expert and (optionally) the gate on
/// every `(init, lead)` of `data`. Errors are accumulated in standardized
/// f64 and rescaled per channel, which equals physical-unit RMSE exactly up
/// to rounding.
pub fn score_dataset(
    data: &Dataset,
    gate: Option<&GateNetwork<f32>>,
    weighting: &Weighting,
    jobs: usize,
) -> Result<ScoreTable> {
    let m = data.manifest();
    let (n, c, h, w) = (m.n_experts, m.channels, m.height, m.width);
    let plane = h * w;
    let field = c * plane;
    let rows = weighting.row_weights(h)?;
    let mut models: Vec<String> = Vec::new();
    if gate.is_some() {
        models.push(MOWE.into());
    }
    models.push(MEAN.into());
    models.extend(m.expert_names.iter().cloned());
    let n_models = models.len();

    let tasks: Vec<(usize, usize)> = (0..m.leads.len())
        .flat_map(|k| (0..m.n_inits).step_by(EVAL_BATCH).map(move |i| (k, i)))
        .collect();
    let run = |&(k, first): &(usize, usize)| -> Result<Vec<f64>> {
        let inits: Vec<usize> = (first..(first + EVAL_BATCH).min(m.n_inits)).collect();
        let mut sums = vec![0.0; n_models * c];
        let samples = inits.iter().map(|&i| data.sample_at(i, k)).collect::<Result<Vec<_>>>()?;
        let gated = match gate {
            Some(g) => {
                let standardized: Vec<Tensor<f32>> = samples
                    .iter()
                    .map(|s| {
                        let mut e = s.experts.clone();
                        m.stats.standardize(e.data_mut(), plane);
                        e
                    })
                    .collect();
                let stacks: Vec<&Tensor<f32>> = standardized.iter().collect();
                let leads = vec![m.leads[k] as f64; samples.len()];
                Some(g.forward_batch(&stacks, &leads, None)?)
            }
            None => None,
        };
        for (si, s) in samples.iter().enumerate() {
            let truth = standardize_f64(s.truth.data(), &m.stats.mean, &m.stats.std, plane);
            let experts = standardize_f64(s.experts.data(), &m.stats.mean, &m.stats.std, plane);
            let mut preds: Vec<Vec<f64>> = Vec::with_capacity(n_models);
            if let Some(outs) = &gated {
                let wf = WeightField::from_gate(&outs[si])?;
                let e = Tensor::new(&[n, c, h, w], experts.clone())?;
                preds.push(fuse(&e, &wf.weights.cast::<f64>(), &wf.bias.cast::<f64>())?.into_data());
            }
            let mean: Vec<f64> = (0..field)
                .map(|j| (0..n).map(|i| experts[i * field + j]).sum::<f64>() / n as f64)
                .collect();
            preds.push(mean);
            for i in 0..n {
                preds.push(experts[i * field..(i + 1) * field].to_vec());
            }
            for (mi, p) in preds.iter().enumerate() {
                for (ch, v) in channel_mse_f64(p, &truth, c, w, &rows).into_iter().enumerate() {
                    sums[mi * c + ch] += v;
                }
            }
        }
        Ok(sums)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {}", e)))?;
    let partials: Vec<Vec<f64>> = pool.install(|| tasks.par_iter().map(run).collect::<Result<Vec<_>>>())?;

    let mut totals = vec![0.0; m.leads.len() * n_models * c];
    for (&(k, _), p) in tasks.iter().zip(&partials) {
        for (j, v) in p.iter().enumerate() {
            totals[k * n_models * c + j] += v;
        }
    }
    let mut out = Vec::with_capacity(totals.len());
    for (mi, name) in models.iter().enumerate() {
        for ch in 0..c {
            for (k, &lead) in m.leads.iter().enumerate() {
                let mse = totals[k * n_models * c + mi * c + ch] / m.n_inits as f64;
                out.push(ScoreRow {
                    model: name.clone(),
                    channel: ch,
                    lead,
                    rmse: m.stats.std[ch] * mse.sqrt(),
                });
            }
        }
    }
    let table = ScoreTable {
        dataset_hash: crate::synthdata::hex(&m.family_hash()),
        checkpoint: None,
        weighting: weighting.name().into(),
        channel_std: m.stats.std.clone(),
        leads: m.leads.clone(),
        models,
        rows: out,
    };
    table.validate()?;
    Ok(table)
}

pub(crate) fn channel_mse_f64(pred: &[f64], truth: &[f64], channels: usize, width: usize, rows: &[f64]) -> Vec<f64> {
    let plane = rows.len() * width;
    let total: f64 = rows.iter().sum::<f64>() * width as f64;
    (0..channels)
        .map(|c| {
            let mut acc = 0.0;
            for (i, rw) in rows.iter().enumerate() {
                let mut row = 0.0;
                for j in c * plane + i * width..c * plane + (i + 1) * width {
                    let d = pred[j] - truth[j];
                    row += d * d;
                }
                acc += rw * row;
            }
            acc / total
        })
        .collect()
}
