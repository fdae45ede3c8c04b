//! Binary dataset layout (little-endian):
//!
//! ```text
//! "MOWEDS\0\0"  u32 version  u32 N, C, H, W, n_inits, n_leads
//! n_leads × u32 lead hours
//! N × (u16 length, name bytes)
//! C × f64 mean, C × f64 std
//! u8 split (0 train, 1 test)
//! records [init][lead]: truth C·H·W f32, then experts [N][C·H·W] f32
//! ```
//!
//! A sibling `.manifest` text file mirrors the header and records how the
//! file was generated.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{Read, Write};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};

use numcore::Tensor;
use sha2::{Digest, Sha256};

use crate::binio::{to_u32, write_atomic, write_atomic_bytes, Decoder, Encoder};
use crate::error::{Error, Result};
use crate::stats::ChannelStats;

pub const DATASET_MAGIC: &[u8; 8] = b"MOWEDS\0\0";
pub const DATASET_VERSION: u32 = 1;
const MAX_HEADER: u64 = 1 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn tag(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Test => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub version: u32,
    pub n_experts: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub n_inits: usize,
    pub leads: Vec<u32>,
    pub expert_names: Vec<String>,
    pub stats: ChannelStats,
    pub split: Split,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.n_experts == 0 || self.channels == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::Dataset("dataset dimensions must be nonzero".into()));
        }
        if self.expert_names.len() != self.n_experts {
            return Err(Error::Dataset(format!(
                "{} expert names for {} experts",
                self.expert_names.len(),
                self.n_experts
            )));
        }
        if self.leads.is_empty() {
            return Err(Error::Dataset("lead set is empty".into()));
        }
        if self.stats.channels() != self.channels {
            return Err(Error::Dataset(format!(
                "statistics cover {} channels, dataset has {}",
                self.stats.channels(),
                self.channels
            )));
        }
        self.stats.validate()
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    /// Floats in one `C × H × W` field.
    pub fn field_len(&self) -> usize {
        self.channels * self.plane()
    }

    /// Floats in one `(init, lead)` record.
    pub fn record_len(&self) -> usize {
        (1 + self.n_experts) * self.field_len()
    }

    pub fn header_len(&self) -> u64 {
        let names: usize = self.expert_names.iter().map(|n| 2 + n.len()).sum();
        (8 + 4 * 7 + 4 * self.leads.len() + names + 16 * self.channels + 1) as u64
    }

    pub fn file_len(&self) -> u64 {
        self.header_len() + (self.n_inits * self.leads.len() * self.record_len() * 4) as u64
    }

    pub fn record_offset(&self, init: usize, lead_index: usize) -> u64 {
        self.header_len() + ((init * self.leads.len() + lead_index) * self.record_len() * 4) as u64
    }

    pub fn lead_index(&self, lead: u32) -> Result<usize> {
        self.leads
            .iter()
            .position(|&l| l == lead)
            .ok_or_else(|| Error::Domain(format!("lead {}h is not in the dataset lead set {:?}", lead, self.leads)))
    }

    /// Digest of everything that must agree between a checkpoint and the data
    /// it is applied to: dims, leads, expert names and statistics. The init
    /// count and split are excluded, so train and test files share it.
    pub fn family_hash(&self) -> [u8; 32] {
        let mut e = Encoder::new();
        for v in [self.n_experts, self.channels, self.height, self.width, self.leads.len()] {
            e.u32(v as u32);
        }
        for &l in &self.leads {
            e.u32(l);
        }
        for n in &self.expert_names {
            e.name(n).expect("validated names");
        }
        for &m in &self.stats.mean {
            e.f64(m);
        }
        for &s in &self.stats.std {
            e.f64(s);
        }
        Sha256::digest(&e.bytes).into()
    }

    pub fn encode_header(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut e = Encoder::new();
        e.raw(DATASET_MAGIC);
        e.u32(self.version);
        for (v, what) in [
            (self.n_experts, "N"),
            (self.channels, "C"),
            (self.height, "H"),
            (self.width, "W"),
            (self.n_inits, "n_inits"),
            (self.leads.len(), "n_leads"),
        ] {
            e.u32(to_u32(v, what)?);
        }
        for &l in &self.leads {
            e.u32(l);
        }
        for n in &self.expert_names {
            e.name(n)?;
        }
        for &m in &self.stats.mean {
            e.f64(m);
        }
        for &s in &self.stats.std {
            e.f64(s);
        }
        e.u8(self.split.tag());
        Ok(e.bytes)
    }

    pub fn decode_header(bytes: &[u8]) -> Result<Self> {
        let mut d = Decoder::new(bytes);
        let magic = d.take(8, "magic")?;
        if magic != DATASET_MAGIC {
            return Err(Error::format(0, format!("bad magic {:?}, not a dataset file", magic)));
        }
        let version = d.u32("version")?;
        if version != DATASET_VERSION {
            return Err(Error::format(8, format!("unsupported dataset version {}", version)));
        }
        let mut dims = [0usize; 6];
        for (v, what) in dims.iter_mut().zip(["N", "C", "H", "W", "n_inits", "n_leads"]) {
            *v = d.u32(what)? as usize;
        }
        let [n, c, h, w, n_inits, n_leads] = dims;
        if n_leads > d.remaining() / 4 {
            return Err(Error::format(d.offset(), format!("implausible lead count {}", n_leads)));
        }
        let leads = (0..n_leads).map(|_| d.u32("lead hours")).collect::<Result<Vec<_>>>()?;
        if n > d.remaining() / 2 {
            return Err(Error::format(d.offset(), format!("implausible expert count {}", n)));
        }
        let expert_names = (0..n).map(|_| d.name("expert name")).collect::<Result<Vec<_>>>()?;
        if c > d.remaining() / 16 {
            return Err(Error::format(d.offset(), format!("implausible channel count {}", c)));
        }
        let mean = (0..c).map(|_| d.f64("channel mean")).collect::<Result<Vec<_>>>()?;
        let std = (0..c).map(|_| d.f64("channel std")).collect::<Result<Vec<_>>>()?;
        let split_at = d.offset();
        let split = match d.u8("split tag")? {
            0 => Split::Train,
            1 => Split::Test,
            t => return Err(Error::format(split_at, format!("unknown split tag {}", t))),
        };
        let m = DatasetManifest {
            version,
            n_experts: n,
            channels: c,
            height: h,
            width: w,
            n_inits,
            leads,
            expert_names,
            stats: ChannelStats { mean, std },
            split,
        };
        m.validate()?;
        Ok(m)
    }

    /// Human-readable mirror of the header.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "format_version = {}", self.version);
        let _ = writeln!(s, "split = {}", self.split.name());
        let _ = writeln!(
            s,
            "dims = N {} C {} H {} W {}",
            self.n_experts, self.channels, self.height, self.width
        );
        let _ = writeln!(s, "n_inits = {}", self.n_inits);
        let _ = writeln!(s, "leads = {:?}", self.leads);
        let _ = writeln!(s, "experts = {:?}", self.expert_names);
        let _ = writeln!(s, "channel_mean = {:?}", self.stats.mean);
        let _ = writeln!(s, "channel_std = {:?}", self.stats.std);
        let _ = writeln!(s, "family_hash = {}", hex(&self.family_hash()));
        s
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{:02x}", b)).collect()
}

/// Receives records in `[init][lead]` order while a dataset is written.
pub struct RecordSink<'a> {
    out: &'a mut dyn Write,
    field_len: usize,
    n_experts: usize,
    expected: usize,
    written: usize,
}

impl RecordSink<'_> {
    pub fn push(&mut self, truth: &[f32], experts: &[f32]) -> Result<()> {
        if truth.len() != self.field_len || experts.len() != self.n_experts * self.field_len {
            return Err(Error::Contract(format!(
                "record has {} truth / {} expert values, expected {} / {}",
                truth.len(),
                experts.len(),
                self.field_len,
                self.n_experts * self.field_len
            )));
        }
        if self.written == self.expected {
            return Err(Error::Contract(format!("more than {} records pushed", self.expected)));
        }
        let mut e = Encoder::new();
        e.f32s(truth);
        e.f32s(experts);
        self.out.write_all(&e.bytes)?;
        self.written += 1;
        Ok(())
    }
}

/// Writes header and records (produced by `fill`) atomically, then the
/// sidecar manifest with `provenance` appended.
pub fn write_dataset<F>(path: &Path, manifest: &DatasetManifest, provenance: &str, fill: F) -> Result<()>
where
    F: FnOnce(&mut RecordSink<'_>) -> Result<()>,
{
    let header = manifest.encode_header()?;
    write_atomic(path, |w| {
        w.write_all(&header)?;
        let mut sink = RecordSink {
            out: w,
            field_len: manifest.field_len(),
            n_experts: manifest.n_experts,
            expected: manifest.n_inits * manifest.leads.len(),
            written: 0,
        };
        fill(&mut sink)?;
        if sink.written != sink.expected {
            return Err(Error::Contract(format!(
                "{} records written, header declares {}",
                sink.written, sink.expected
            )));
        }
        Ok(())
    })?;
    let mut side = manifest.summary();
    if !provenance.is_empty() {
        side.push_str("\n[provenance]\n");
        side.push_str(provenance);
    }
    write_atomic_bytes(&sidecar_path(path), side.as_bytes())
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

/// Provenance section of a dataset's sidecar manifest.
pub fn read_sidecar(path: &Path) -> Result<String> {
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side)
        .map_err(|e| Error::Dataset(format!("cannot read manifest {}: {}", side.display(), e)))?;
    Ok(text.split_once("[provenance]\n").map(|(_, p)| p.to_string()).unwrap_or_default())
}

/// One `(init, lead)` record as tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub init: usize,
    pub lead: u32,
    /// `[C, H, W]`.
    pub truth: Tensor<f32>,
    /// `[N, C, H, W]`.
    pub experts: Tensor<f32>,
}

/// Read-only, random-access view of a sealed dataset file.
pub struct Dataset {
    path: PathBuf,
    file: File,
    manifest: DatasetManifest,
}

impl Dataset {
    pub fn open(path: &Path) -> Result<Self> {
        let mut file = File::open(path)
            .map_err(|e| Error::Dataset(format!("cannot open dataset {}: {}", path.display(), e)))?;
        let len = file.metadata()?.len();
        let mut head = Vec::new();
        (&mut file).take(MAX_HEADER.min(len)).read_to_end(&mut head)?;
        let manifest = DatasetManifest::decode_header(&head)?;
        let want = manifest.file_len();
        if len < want {
            let per_record = (manifest.record_len() * 4) as u64;
            let complete = len.saturating_sub(manifest.header_len()) / per_record;
            let at = manifest.header_len() + complete * per_record;
            return Err(Error::format(
                at,
                format!(
                    "truncated dataset: {} bytes, expected {} ({} of {} records complete)",
                    len,
                    want,
                    complete,
                    manifest.n_inits * manifest.leads.len()
                ),
            ));
        }
        if len > want {
            return Err(Error::format(want, format!("{} unexpected trailing bytes", len - want)));
        }
        Ok(Dataset {
            path: path.to_path_buf(),
            file,
            manifest,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    /// Raw record floats for `(init, lead_index)`: truth then experts.
    pub fn read_record(&self, init: usize, lead_index: usize) -> Result<Vec<f32>> {
        let m = &self.manifest;
        if init >= m.n_inits || lead_index >= m.leads.len() {
            return Err(Error::Domain(format!(
                "record ({}, {}) outside {} inits x {} leads",
                init,
                lead_index,
                m.n_inits,
                m.leads.len()
            )));
        }
        let offset = m.record_offset(init, lead_index);
        let mut bytes = vec![0u8; m.record_len() * 4];
        self.file.read_exact_at(&mut bytes, offset).map_err(|e| {
            Error::format(offset, format!("cannot read record (init {}, lead {}h): {}", init, m.leads[lead_index], e))
        })?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    /// Physical-unit sample for `(init, lead hours)`.
    pub fn sample(&self, init: usize, lead: u32) -> Result<Sample> {
        let k = self.manifest.lead_index(lead)?;
        self.sample_at(init, k)
    }

    pub fn sample_at(&self, init: usize, lead_index: usize) -> Result<Sample> {
        let m = &self.manifest;
        let mut raw = self.read_record(init, lead_index)?;
        let experts = raw.split_off(m.field_len());
        Ok(Sample {
            init,
            lead: m.leads[lead_index],
            truth: Tensor::new(&[m.channels, m.height, m.width], raw)?,
            experts: Tensor::new(&[m.n_experts, m.channels, m.height, m.width], experts)?,
        })
    }

    /// Like [`Dataset::sample_at`], standardized with the manifest statistics.
    pub fn standardized_at(&self, init: usize, lead_index: usize) -> Result<Sample> {
        let mut s = self.sample_at(init, lead_index)?;
        let plane = self.manifest.plane();
        self.manifest.stats.standardize(s.truth.data_mut(), plane);
        self.manifest.stats.standardize(s.experts.data_mut(), plane);
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(n_inits: usize) -> DatasetManifest {
        DatasetManifest {
            version: DATASET_VERSION,
            n_experts: 2,
            channels: 2,
            height: 2,
            width: 4,
            n_inits,
            leads: vec![6, 12, 18],
            expert_names: vec!["a".into(), "bee".into()],
            stats: ChannelStats {
                mean: vec![1.0, -2.0],
                std: vec![0.5, 3.0],
            },
            split: Split::Train,
        }
    }

    #[test]
    fn header_round_trip_and_length() {
        let m = manifest(4);
        let h = m.encode_header().unwrap();
        assert_eq!(h.len() as u64, m.header_len());
        assert_eq!(DatasetManifest::decode_header(&h).unwrap(), m);
    }

    #[test]
    fn family_hash_ignores_split_and_count() {
        let a = manifest(4);
        let mut b = manifest(9);
        b.split = Split::Test;
        assert_eq!(a.family_hash(), b.family_hash());
        b.stats.std[1] = 3.5;
        assert_ne!(a.family_hash(), b.family_hash());
    }

    #[test]
    fn bad_magic_and_version() {
        let m = manifest(1);
        let mut h = m.encode_header().unwrap();
        h[8] = 9;
        assert!(matches!(DatasetManifest::decode_header(&h), Err(Error::Format { offset: 8, .. })));
        h[0] = b'X';
        assert!(matches!(DatasetManifest::decode_header(&h), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn zero_std_is_rejected() {
        let mut m = manifest(1);
        m.stats.std[0] = 0.0;
        assert!(matches!(m.encode_header(), Err(Error::Dataset(_))));
    }
}
