//! End-to-end benchmark generation.

use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;

use super::config::GeneratorConfig;
use super::experts::ExpertEmulator;
use super::format::{read_sidecar, write_dataset, DatasetManifest, Split, DATASET_VERSION};
use super::truth::TruthSimulator;
use crate::error::{Error, Result};
use crate::stats::ChannelStats;

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedPaths {
    pub train: PathBuf,
    pub test: Option<PathBuf>,
}

fn to_physical(field: &[f64], cfg: &GeneratorConfig, plane: usize, out: &mut Vec<f32>) {
    for (i, v) in field.iter().enumerate() {
        let c = (i / plane) % cfg.channels.len();
        out.push((cfg.channel_mean[c] + cfg.channel_scale[c] * v) as f32);
    }
}

/// Channel mean and (population) standard deviation of the stored lead-0
/// truth over the training inits.
pub fn compute_stats(cfg: &GeneratorConfig, sim: &TruthSimulator) -> ChannelStats {
    let c = cfg.channels.len();
    let plane = cfg.height * cfg.width;
    let partials: Vec<Vec<(f64, f64)>> = (0..cfg.train_inits as u64)
        .into_par_iter()
        .map(|init| {
            let mut phys = Vec::with_capacity(c * plane);
            to_physical(&sim.initial_condition(cfg.seed, init), cfg, plane, &mut phys);
            phys.chunks_exact(plane)
                .enumerate()
                .map(|(ch, f)| {
                    let centre = cfg.channel_mean[ch];
                    f.iter().fold((0.0, 0.0), |(s1, s2), &v| {
                        let d = v as f64 - centre;
                        (s1 + d, s2 + d * d)
                    })
                })
                .collect()
        })
        .collect();
    let n = (cfg.train_inits * plane) as f64;
    let mut mean = Vec::with_capacity(c);
    let mut std = Vec::with_capacity(c);
    for ch in 0..c {
        let (s1, s2) = partials.iter().fold((0.0, 0.0), |(a, b), p| (a + p[ch].0, b + p[ch].1));
        let m = s1 / n;
        mean.push(cfg.channel_mean[ch] + m);
        std.push((s2 / n - m * m).max(0.0).sqrt());
    }
    ChannelStats { mean, std }
}

/// Largest deviation between `stats` and a fresh recomputation, relative to
/// the recomputed standard deviation.
pub fn verify_stats(cfg: &GeneratorConfig, stats: &ChannelStats) -> Result<f64> {
    let sim = TruthSimulator::new(cfg.height, cfg.width, cfg.channels.len(), cfg.dynamics.clone())?;
    let fresh = compute_stats(cfg, &sim);
    if fresh.channels() != stats.channels() {
        return Err(Error::Dataset("channel count differs from the generator config".into()));
    }
    let mut worst: f64 = 0.0;
    for c in 0..fresh.channels() {
        let s = fresh.std[c];
        worst = worst.max((fresh.mean[c] - stats.mean[c]).abs() / s);
        worst = worst.max((fresh.std[c] - stats.std[c]).abs() / s);
    }
    Ok(worst)
}

/// Relative tolerance for [`check_stats_integrity`].
pub const STATS_TOLERANCE: f64 = 1e-5;

/// Rebuilds the generator from a dataset's sidecar provenance and compares
/// its declared statistics with a recomputation. Deviations beyond
/// [`STATS_TOLERANCE`] are logged as an integrity warning; the deviation is
/// returned either way.
pub fn check_stats_integrity(path: &Path, manifest: &DatasetManifest) -> Result<f64> {
    let prov = read_sidecar(path)?;
    let (_, gen) = prov
        .split_once("[generator]\n")
        .ok_or_else(|| Error::Dataset(format!("{} has no generator provenance", path.display())))?;
    let cfg = GeneratorConfig::from_toml(gen)?;
    let dev = verify_stats(&cfg, &manifest.stats)?;
    if dev > STATS_TOLERANCE {
        warn!(
            "integrity: {} declares channel statistics that deviate from recomputation by {:.3e} (relative)",
            path.display(),
            dev
        );
    }
    Ok(dev)
}

struct Generator<'a> {
    cfg: &'a GeneratorConfig,
    sim: TruthSimulator,
    experts: Vec<ExpertEmulator>,
}

impl Generator<'_> {
    /// All records for one init, in lead order.
    fn records(&self, init: u64) -> Result<Vec<(Vec<f32>, Vec<f32>)>> {
        let cfg = self.cfg;
        let plane = cfg.height * cfg.width;
        let traj = self.sim.simulate(cfg.seed, init, cfg.max_lead());
        cfg.leads
            .iter()
            .map(|&lead| {
                let mut truth = Vec::with_capacity(cfg.channels.len() * plane);
                to_physical(traj.state_at(lead)?, cfg, plane, &mut truth);
                let mut experts = Vec::with_capacity(self.experts.len() * truth.len());
                for e in &self.experts {
                    to_physical(&e.emulate(self.sim.spectral(), &traj, lead)?, cfg, plane, &mut experts);
                }
                Ok((truth, experts))
            })
            .collect()
    }
}

/// Generates `train.mowe` (and `test.mowe` when `test_inits > 0`) in
/// `out_dir`. Inits are processed in parallel on `jobs` threads; output is
/// identical for any thread count.
pub fn generate(cfg: &GeneratorConfig, out_dir: &Path, jobs: usize) -> Result<GeneratedPaths> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {}", e)))?;
    pool.install(|| {
        let sim = TruthSimulator::new(cfg.height, cfg.width, cfg.channels.len(), cfg.dynamics.clone())?;
        let experts = cfg
            .profiles()
            .into_iter()
            .map(|p| ExpertEmulator::new(p, sim.spectral(), cfg.channels.len(), &cfg.leads))
            .collect::<Result<Vec<_>>>()?;
        let stats = compute_stats(cfg, &sim);
        stats.validate()?;
        info!("channel statistics: mean {:?} std {:?}", stats.mean, stats.std);
        let gen = Generator { cfg, sim, experts };
        let chunk = 4 * jobs.max(1);

        let write_split = |split: Split, first: usize, count: usize| -> Result<PathBuf> {
            let path = out_dir.join(format!("{}.mowe", split.name()));
            let manifest = DatasetManifest {
                version: DATASET_VERSION,
                n_experts: cfg.experts.len(),
                channels: cfg.channels.len(),
                height: cfg.height,
                width: cfg.width,
                n_inits: count,
                leads: cfg.leads.clone(),
                expert_names: cfg.experts.clone(),
                stats: stats.clone(),
                split,
            };
            let provenance = format!(
                "base_seed = {}\nfirst_init = {}\n\n[generator]\n{}",
                cfg.seed,
                first,
                cfg.to_toml()
            );
            write_dataset(&path, &manifest, &provenance, |sink| {
                let inits: Vec<u64> = (first as u64..(first + count) as u64).collect();
                for (k, block) in inits.chunks(chunk).enumerate() {
                    let recs = block.par_iter().map(|&i| gen.records(i)).collect::<Result<Vec<_>>>()?;
                    for (truth, experts) in recs.iter().flatten() {
                        sink.push(truth, experts)?;
                    }
                    if (k + 1) * chunk % 50 < chunk {
                        info!("{}: {} / {} inits", split.name(), ((k + 1) * chunk).min(count), count);
                    }
                }
                Ok(())
            })?;
            Ok(path)
        };

        let train = write_split(Split::Train, 0, cfg.train_inits)?;
        let test = if cfg.test_inits > 0 {
            Some(write_split(Split::Test, cfg.train_inits, cfg.test_inits)?)
        } else {
            None
        };
        Ok(GeneratedPaths { train, test })
    })
}
