use numcore::Tensor;
use rand::Rng;

use super::format::Dataset;
use crate::error::{Error, Result};

/// Standardized training samples drawn uniformly over `(init, lead)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// Each `[N, C, H, W]`.
    pub experts: Vec<Tensor<f32>>,
    /// Each `[C, H, W]`.
    pub truth: Vec<Tensor<f32>>,
    pub leads: Vec<u32>,
    pub inits: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.leads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leads.is_empty()
    }
}

pub fn sample_batch<R: Rng>(dataset: &Dataset, batch_size: usize, rng: &mut R) -> Result<Batch> {
    if batch_size < 1 {
        return Err(Error::Contract("batch size must be >= 1".into()));
    }
    let m = dataset.manifest();
    if m.n_inits == 0 {
        return Err(Error::Dataset("dataset has no inits".into()));
    }
    let mut b = Batch {
        experts: Vec::with_capacity(batch_size),
        truth: Vec::with_capacity(batch_size),
        leads: Vec::with_capacity(batch_size),
        inits: Vec::with_capacity(batch_size),
    };
    for _ in 0..batch_size {
        let init = rng.gen_range(0..m.n_inits);
        let k = rng.gen_range(0..m.leads.len());
        let s = dataset.standardized_at(init, k)?;
        b.experts.push(s.experts);
        b.truth.push(s.truth);
        b.leads.push(s.lead);
        b.inits.push(init);
    }
    Ok(b)
}
