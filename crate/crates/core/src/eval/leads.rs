use log::warn;

use super::metrics::Weighting;
use super::scores::{score_dataset, ScoreTable};
use crate::error::{Error, Result};
use crate::synthdata::{Dataset, Split};
use crate::training::Checkpoint;

/// Refuses a checkpoint/data pair that differs in dims or data family.
pub fn check_pairing(ckpt: &Checkpoint, data: &Dataset) -> Result<()> {
    let g = &ckpt.config;
    let m = data.manifest();
    let gate = [g.n_experts, g.channels, g.height, g.width];
    let have = [m.n_experts, m.channels, m.height, m.width];
    if gate != have {
        return Err(Error::Config(format!(
            "checkpoint expects [N, C, H, W] = {:?} but {} has {:?}",
            gate,
            data.path().display(),
            have
        )));
    }
    if ckpt.dataset_hash != m.family_hash() {
        return Err(Error::Config(format!(
            "checkpoint was trained on data family {} but {} is family {} (leads, expert names or statistics differ)",
            crate::synthdata::hex(&ckpt.dataset_hash),
            data.path().display(),
            crate::synthdata::hex(&m.family_hash())
        )));
    }
    Ok(())
}

/// Scores the gate, the mean baseline and each expert at every lead of a
/// test split. The gate runs independently at each lead on that lead's
/// stored expert fields.
pub fn evaluate_leads(ckpt: &Checkpoint, test: &Dataset, weighting: &Weighting, jobs: usize) -> Result<ScoreTable> {
    check_pairing(ckpt, test)?;
    let m = test.manifest();
    if m.split != Split::Test {
        return Err(Error::Config(format!(
            "evaluation needs a test split, {} is tagged `{}`",
            test.path().display(),
            m.split.name()
        )));
    }
    let missing: Vec<u32> = ckpt.config.lead_set.iter().copied().filter(|l| !m.leads.contains(l)).collect();
    if !missing.is_empty() {
        return Err(Error::Dataset(format!(
            "test data has no records at trained leads {:?}; refusing to skip them",
            missing
        )));
    }
    if m.leads.iter().any(|l| !ckpt.config.lead_set.contains(l)) {
        warn!("test data contains leads outside the trained set {:?}", ckpt.config.lead_set);
    }
    let net = ckpt.network()?;
    let mut table = score_dataset(test, Some(&net), weighting, jobs)?;
    table.checkpoint = Some(ckpt.id()?);
    Ok(table)
}
