use serde::{Deserialize, Serialize};

use numcore::Tensor;

use crate::error::{Error, Result};

/// Spatial weighting of squared errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Weighting {
    Uniform,
    /// Cosine of the latitude (degrees) of each grid row.
    CosLat { latitudes: Vec<f64> },
}

impl Weighting {
    /// `"uniform"` or `"coslat"`; the latter needs row latitudes.
    pub fn parse(mode: &str, latitudes: Option<Vec<f64>>) -> Result<Self> {
        match mode {
            "uniform" => Ok(Weighting::Uniform),
            "coslat" => match latitudes {
                Some(latitudes) => Ok(Weighting::CosLat { latitudes }),
                None => Err(Error::Config(
                    "coslat weighting needs a latitude axis; the periodic synthetic grid declares none".into(),
                )),
            },
            other => Err(Error::Config(format!("unknown weighting `{}` (uniform|coslat)", other))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Weighting::Uniform => "uniform",
            Weighting::CosLat { .. } => "coslat",
        }
    }

    /// Row weights for a grid of `height` rows.
    pub fn row_weights(&self, height: usize) -> Result<Vec<f64>> {
        match self {
            Weighting::Uniform => Ok(vec![1.0; height]),
            Weighting::CosLat { latitudes } => {
                if latitudes.len() != height {
                    return Err(Error::Config(format!(
                        "{} latitudes declared for {} grid rows",
                        latitudes.len(),
                        height
                    )));
                }
                if latitudes.iter().any(|l| !(-90.0..=90.0).contains(l)) {
                    return Err(Error::Config("latitudes must lie in [-90, 90]".into()));
                }
                Ok(latitudes.iter().map(|l| l.to_radians().cos().max(0.0)).collect())
            }
        }
    }
}

/// Weighted mean squared error per channel of `[C, H, W]` fields.
pub fn channel_mse(pred: &[f32], truth: &[f32], channels: usize, width: usize, rows: &[f64]) -> Vec<f64> {
    let height = rows.len();
    let plane = height * width;
    let total: f64 = rows.iter().sum::<f64>() * width as f64;
    (0..channels)
        .map(|c| {
            let (p, t) = (&pred[c * plane..(c + 1) * plane], &truth[c * plane..(c + 1) * plane]);
            let mut acc = 0.0;
            for i in 0..height {
                let mut row = 0.0;
                for j in i * width..(i + 1) * width {
                    let d = p[j] as f64 - t[j] as f64;
                    row += d * d;
                }
                acc += rows[i] * row;
            }
            acc / total
        })
        .collect()
}

/// Per-channel RMSE of `[C, H, W]` fields in the units they are given in.
pub fn rmse(pred: &Tensor<f32>, truth: &Tensor<f32>, weighting: &Weighting) -> Result<Vec<f64>> {
    if pred.shape() != truth.shape() || pred.rank() != 3 {
        return Err(Error::Contract(format!(
            "rmse needs matching [C, H, W] fields, got {:?} and {:?}",
            pred.shape(),
            truth.shape()
        )));
    }
    let (c, h, w) = (pred.shape()[0], pred.shape()[1], pred.shape()[2]);
    let rows = weighting.row_weights(h)?;
    Ok(channel_mse(pred.data(), truth.data(), c, w, &rows).into_iter().map(f64::sqrt).collect())
}

/// Percent difference of `a` relative to the reference `b`.
pub fn pct_diff(a: f64, b: f64) -> Result<f64> {
    if !(b > 0.0) {
        return Err(Error::Domain(format!("reference value must be > 0, got {}", b)));
    }
    Ok((a - b) / b * 100.0)
}

/// Mean over pixels and channels of the natural-log entropy of the expert
/// weight distribution, for `[N, C, H, W]` weights.
pub fn mean_weight_entropy(weights: &Tensor<f32>) -> f64 {
    let n = weights.shape()[0];
    let per = weights.numel() / n;
    let d = weights.data();
    let mut total = 0.0;
    for p in 0..per {
        let mut h = 0.0;
        for i in 0..n {
            let w = d[i * per + p] as f64;
            if w > 0.0 {
                h -= w * w.ln();
            }
        }
        total += h;
    }
    total / per as f64
}
