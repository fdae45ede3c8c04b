//! Synthetic multi-expert forecast testbed.

mod batch;
mod config;
mod experts;
mod format;
mod generate;
pub mod spectral;
mod truth;

pub use batch::{sample_batch, Batch};
pub use config::{ChannelSpec, GeneratorConfig};
pub use experts::{bias_pattern, lead_position, ExpertEmulator, ExpertProfile, MaskSpec, Ramp};
pub use format::{
    hex, read_sidecar, sidecar_path, write_dataset, Dataset, DatasetManifest, RecordSink, Sample, Split, DATASET_MAGIC,
    DATASET_VERSION,
};
pub use generate::{check_stats_integrity, compute_stats, generate, verify_stats, GeneratedPaths, STATS_TOLERANCE};
pub use truth::{DynamicsConfig, TruthSimulator, TruthTrajectory};

/// Mixes a base seed with tags into an independent stream seed.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    tags.iter().fold(mix(base), |acc, &t| mix(acc ^ mix(t)))
}
