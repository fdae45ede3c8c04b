#![allow(dead_code)]

use std::path::{Path, PathBuf};

use mowe::synthdata::{generate, GeneratorConfig};

pub fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

pub fn smoke_config() -> GeneratorConfig {
    GeneratorConfig::load(&config_path("smoke.toml")).unwrap()
}

pub struct SmokeData {
    pub dir: tempfile::TempDir,
    pub train: PathBuf,
    pub test: PathBuf,
}

pub fn smoke_data() -> SmokeData {
    smoke_data_with(&smoke_config())
}

pub fn smoke_data_with(cfg: &GeneratorConfig) -> SmokeData {
    let dir = tempfile::tempdir().unwrap();
    let paths = generate(cfg, dir.path(), 1).unwrap();
    SmokeData {
        train: paths.train,
        test: paths.test.unwrap(),
        dir,
    }
}

use mowe::gating::GateConfig;
use mowe::stats::ChannelStats;
use mowe::synthdata::{write_dataset, DatasetManifest, Split, DATASET_VERSION};

/// A small gate sized for the smoke dataset.
pub fn tiny_gate(m: &DatasetManifest) -> GateConfig {
    GateConfig {
        n_experts: m.n_experts,
        channels: m.channels,
        height: m.height,
        width: m.width,
        patch_size: 4,
        hidden_size: 16,
        depth: 2,
        heads: 2,
        mlp_ratio: 2.0,
        lead_set: m.leads.clone(),
        noise_dim: 0,
    }
}

/// Writes a standardized-unit dataset (mean 0, std 1) whose records come
/// from `record(init, lead_index) -> (truth, experts)`.
pub fn write_synthetic<F>(
    path: &Path,
    split: Split,
    shape: [usize; 4],
    n_inits: usize,
    leads: &[u32],
    mut record: F,
) -> DatasetManifest
where
    F: FnMut(usize, usize) -> (Vec<f32>, Vec<f32>),
{
    let [n, c, h, w] = shape;
    let m = DatasetManifest {
        version: DATASET_VERSION,
        n_experts: n,
        channels: c,
        height: h,
        width: w,
        n_inits,
        leads: leads.to_vec(),
        expert_names: (0..n).map(|i| format!("e{}", i)).collect(),
        stats: ChannelStats {
            mean: vec![0.0; c],
            std: vec![1.0; c],
        },
        split,
    };
    write_dataset(path, &m, "", |sink| {
        for i in 0..n_inits {
            for k in 0..leads.len() {
                let (t, e) = record(i, k);
                sink.push(&t, &e)?;
            }
        }
        Ok(())
    })
    .unwrap();
    m
}
