//! Per-pixel constrained least-squares blend: for every `(lead, channel,
//! pixel)` independently, the unit-sum weights and bias that minimize
//! squared error over the training inits. Eliminating the last weight
//! (`w_N = 1 - Σ_{i<N} wᵢ`) turns the constrained fit into an ordinary ridge
//! regression of `y - e_N` on `(e_1 - e_N, …, e_{N-1} - e_N, 1)`.

use rayon::prelude::*;

use numcore::Tensor;

use super::metrics::{mean_weight_entropy, Weighting};
use super::scores::{channel_mse_f64, standardize_f64, ScoreRow, ScoreTable, ORACLE};
use crate::error::{Error, Result};
use crate::synthdata::{hex, Dataset};

pub const DEFAULT_RIDGE: f64 = 1e-4;

/// Fitted weights `[lead][N][C·H·W]` and bias `[lead][C·H·W]`, standardized.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleFit {
    pub leads: Vec<u32>,
    pub n_experts: usize,
    pub shape: [usize; 3],
    pub ridge: f64,
    weights: Vec<Vec<f64>>,
    bias: Vec<Vec<f64>>,
}

impl OracleFit {
    fn lead_index(&self, lead: u32) -> Result<usize> {
        self.leads
            .iter()
            .position(|&l| l == lead)
            .ok_or_else(|| Error::Domain(format!("oracle was not fitted at lead {}h", lead)))
    }

    /// `[N, C, H, W]`.
    pub fn weights_at(&self, lead: u32) -> Result<Tensor<f64>> {
        let k = self.lead_index(lead)?;
        let [c, h, w] = self.shape;
        Ok(Tensor::new(&[self.n_experts, c, h, w], self.weights[k].clone())?)
    }

    /// `[C, H, W]`.
    pub fn bias_at(&self, lead: u32) -> Result<Tensor<f64>> {
        let k = self.lead_index(lead)?;
        Ok(Tensor::new(&self.shape, self.bias[k].clone())?)
    }

    /// Mean weight of each expert over pixels and channels.
    pub fn spatial_mean_weights(&self, lead: u32) -> Result<Vec<f64>> {
        let k = self.lead_index(lead)?;
        let per = self.weights[k].len() / self.n_experts;
        Ok(self.weights[k].chunks_exact(per).map(|w| w.iter().sum::<f64>() / per as f64).collect())
    }

    /// Mean entropy of the fitted weights, with weights clipped into
    /// `[0, 1]` and renormalized (the unconstrained fit may go negative).
    pub fn mean_entropy(&self, lead: u32) -> Result<f64> {
        let w = self.weights_at(lead)?;
        let n = self.n_experts;
        let per = w.numel() / n;
        let mut clipped = w.data().iter().map(|v| v.clamp(0.0, 1.0) as f32).collect::<Vec<_>>();
        for p in 0..per {
            let s: f32 = (0..n).map(|i| clipped[i * per + p]).sum();
            for i in 0..n {
                clipped[i * per + p] = if s > 0.0 { clipped[i * per + p] / s } else { 1.0 / n as f32 };
            }
        }
        Ok(mean_weight_entropy(&Tensor::new(w.shape(), clipped)?))
    }
}

/// In-place Cholesky solve of the SPD system `a x = b` (`a` row-major
/// `p × p`). Returns `None` if `a` is not numerically positive definite.
fn cholesky_solve(a: &mut [f64], b: &mut [f64], p: usize) -> Option<()> {
    let scale = (0..p).map(|i| a[i * p + i].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    for j in 0..p {
        let mut d = a[j * p + j];
        for k in 0..j {
            d -= a[j * p + k] * a[j * p + k];
        }
        if !(d > 1e-12 * scale) {
            return None;
        }
        let d = d.sqrt();
        a[j * p + j] = d;
        for i in j + 1..p {
            let mut s = a[i * p + j];
            for k in 0..j {
                s -= a[i * p + k] * a[j * p + k];
            }
            a[i * p + j] = s / d;
        }
    }
    for i in 0..p {
        let mut s = b[i];
        for k in 0..i {
            s -= a[i * p + k] * b[k];
        }
        b[i] = s / a[i * p + i];
    }
    for i in (0..p).rev() {
        let mut s = b[i];
        for k in i + 1..p {
            s -= a[k * p + i] * b[k];
        }
        b[i] = s / a[i * p + i];
    }
    Some(())
}

fn fit_lead(train: &Dataset, k: usize, ridge: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let m = train.manifest();
    let n = m.n_experts;
    let field = m.field_len();
    let plane = m.plane();
    let p = n;
    // Packed upper triangle of XᵀX plus Xᵀr per pixel.
    let tri = p * (p + 1) / 2;
    let mut xtx = vec![0.0; field * tri];
    let mut xtr = vec![0.0; field * p];
    let mut x = vec![0.0; p];
    for init in 0..m.n_inits {
        let s = train.sample_at(init, k)?;
        let y = standardize_f64(s.truth.data(), &m.stats.mean, &m.stats.std, plane);
        let e = standardize_f64(s.experts.data(), &m.stats.mean, &m.stats.std, plane);
        for j in 0..field {
            let last = e[(n - 1) * field + j];
            for i in 0..n - 1 {
                x[i] = e[i * field + j] - last;
            }
            x[n - 1] = 1.0;
            let r = y[j] - last;
            let mut t = 0;
            for a in 0..p {
                for b in a..p {
                    xtx[j * tri + t] += x[a] * x[b];
                    t += 1;
                }
                xtr[j * p + a] += x[a] * r;
            }
        }
    }
    let inv_n = 1.0 / m.n_inits as f64;
    let mut weights = vec![0.0; n * field];
    let mut bias = vec![0.0; field];
    let mut a = vec![0.0; p * p];
    let mut rhs = vec![0.0; p];
    for j in 0..field {
        let mut t = 0;
        for r in 0..p {
            for c in r..p {
                let v = xtx[j * tri + t] * inv_n;
                a[r * p + c] = v;
                a[c * p + r] = v;
                t += 1;
            }
            a[r * p + r] += ridge;
            rhs[r] = xtr[j * p + r] * inv_n;
        }
        if cholesky_solve(&mut a, &mut rhs, p).is_none() {
            let (c, pix) = (j / plane, j % plane);
            return Err(Error::Domain(format!(
                "singular normal equations at lead {}h, channel {}, pixel {}; retry with ridge > 0",
                m.leads[k], c, pix
            )));
        }
        let mut rest = 1.0;
        for i in 0..n - 1 {
            weights[i * field + j] = rhs[i];
            rest -= rhs[i];
        }
        weights[(n - 1) * field + j] = rest;
        bias[j] = rhs[n - 1];
    }
    Ok((weights, bias))
}

/// Fits the oracle on every lead of `train`.
pub fn fit_oracle(train: &Dataset, ridge: f64, jobs: usize) -> Result<OracleFit> {
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(Error::Config(format!("ridge must be >= 0, got {}", ridge)));
    }
    let m = train.manifest();
    if m.n_inits == 0 {
        return Err(Error::Dataset("training set has no inits".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {}", e)))?;
    let fits = pool.install(|| {
        (0..m.leads.len())
            .into_par_iter()
            .map(|k| fit_lead(train, k, ridge))
            .collect::<Result<Vec<_>>>()
    })?;
    let (weights, bias) = fits.into_iter().unzip();
    Ok(OracleFit {
        leads: m.leads.clone(),
        n_experts: m.n_experts,
        shape: [m.channels, m.height, m.width],
        ridge,
        weights,
        bias,
    })
}

/// Scores a fitted oracle on `test` as rows of model `oracle`.
pub fn score_oracle(fit: &OracleFit, test: &Dataset, weighting: &Weighting) -> Result<ScoreTable> {
    let m = test.manifest();
    if [m.channels, m.height, m.width] != fit.shape || m.n_experts != fit.n_experts {
        return Err(Error::Config(format!(
            "oracle fitted on N {} {:?}, test data is N {} [{}, {}, {}]",
            fit.n_experts, fit.shape, m.n_experts, m.channels, m.height, m.width
        )));
    }
    let rows = weighting.row_weights(m.height)?;
    let (n, c, field, plane) = (m.n_experts, m.channels, m.field_len(), m.plane());
    let mut out = Vec::new();
    let mut per_lead = Vec::new();
    for (k, &lead) in m.leads.iter().enumerate() {
        let fk = fit.lead_index(lead).map_err(|_| {
            Error::Dataset(format!("test lead {}h missing from the oracle fit {:?}", lead, fit.leads))
        })?;
        let (w, b) = (&fit.weights[fk], &fit.bias[fk]);
        let mut sums = vec![0.0; c];
        for init in 0..m.n_inits {
            let s = test.sample_at(init, k)?;
            let y = standardize_f64(s.truth.data(), &m.stats.mean, &m.stats.std, plane);
            let e = standardize_f64(s.experts.data(), &m.stats.mean, &m.stats.std, plane);
            let pred: Vec<f64> = (0..field)
                .map(|j| (0..n).map(|i| w[i * field + j] * e[i * field + j]).sum::<f64>() + b[j])
                .collect();
            for (ch, v) in channel_mse_f64(&pred, &y, c, m.width, &rows).into_iter().enumerate() {
                sums[ch] += v;
            }
        }
        per_lead.push((lead, sums));
    }
    for ch in 0..c {
        for (lead, sums) in &per_lead {
            out.push(ScoreRow {
                model: ORACLE.into(),
                channel: ch,
                lead: *lead,
                rmse: m.stats.std[ch] * (sums[ch] / m.n_inits as f64).sqrt(),
            });
        }
    }
    let table = ScoreTable {
        dataset_hash: hex(&m.family_hash()),
        checkpoint: None,
        weighting: weighting.name().into(),
        channel_std: m.stats.std.clone(),
        leads: m.leads.clone(),
        models: vec![ORACLE.into()],
        rows: out,
    };
    table.validate()?;
    Ok(table)
}

/// Fits on `train` and scores on `test`; both must share dims and
/// statistics.
pub fn oracle_blend(
    train: &Dataset,
    test: &Dataset,
    ridge: f64,
    weighting: &Weighting,
    jobs: usize,
) -> Result<(OracleFit, ScoreTable)> {
    if train.manifest().family_hash() != test.manifest().family_hash() {
        return Err(Error::Config(
            "train and test datasets differ in dims, leads, experts or statistics".into(),
        ));
    }
    let fit = fit_oracle(train, ridge, jobs)?;
    let table = score_oracle(&fit, test, weighting)?;
    Ok((fit, table))
}
