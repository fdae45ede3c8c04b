//! Little-endian encoding helpers shared by the dataset and checkpoint
//! formats, plus write-to-temp-then-rename output.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use numcore::Tensor;

use crate::error::{Error, Result};

/// Appends little-endian values to a byte buffer.
#[derive(Default)]
pub struct Encoder {
    pub bytes: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn raw(&mut self, b: &[u8]) {
        self.bytes.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.bytes.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.raw(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.raw(&v.to_le_bytes());
    }

    pub fn f32(&mut self, v: f32) {
        self.raw(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.raw(&v.to_le_bytes());
    }

    pub fn f32s(&mut self, vs: &[f32]) {
        self.bytes.reserve(vs.len() * 4);
        for v in vs {
            self.f32(*v);
        }
    }

    /// `u16` length then UTF-8 bytes.
    pub fn name(&mut self, s: &str) -> Result<()> {
        let len = u16::try_from(s.len()).map_err(|_| Error::Contract(format!("name `{}` too long", s)))?;
        self.u16(len);
        self.raw(s.as_bytes());
        Ok(())
    }

    /// Named tensor: name, `u8` rank, `u32` extents, f32 data.
    pub fn tensor(&mut self, name: &str, t: &Tensor<f32>) -> Result<()> {
        self.name(name)?;
        let rank = u8::try_from(t.rank()).map_err(|_| Error::Contract(format!("tensor `{}` rank too large", name)))?;
        self.u8(rank);
        for &e in t.shape() {
            self.u32(to_u32(e, name)?);
        }
        self.f32s(t.data());
        Ok(())
    }
}

pub fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Contract(format!("{} = {} does not fit in u32", what, v)))
}

/// Reads little-endian values from a byte slice, reporting absolute offsets
/// in errors.
pub struct Decoder<'a> {
    bytes: &'a [u8],
    pos: usize,
    base: u64,
}

impl<'a> Decoder<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Decoder { bytes, pos: 0, base: 0 }
    }

    /// `bytes` starts at absolute file offset `base`.
    pub fn at(bytes: &'a [u8], base: u64) -> Self {
        Decoder { bytes, pos: 0, base }
    }

    pub fn offset(&self) -> u64 {
        self.base + self.pos as u64
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::format(
                self.offset(),
                format!("truncated while reading {} ({} bytes needed, {} left)", what, n, self.remaining()),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut a = [0u8; N];
        a.copy_from_slice(self.take(N, what)?);
        Ok(a)
    }

    pub fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array(what)?))
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    pub fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array(what)?))
    }

    pub fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array(what)?))
    }

    pub fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).unwrap_or(usize::MAX), what)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
    }

    pub fn name(&mut self, what: &str) -> Result<String> {
        let start = self.offset();
        let len = self.u16(what)? as usize;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::format(start, format!("{} is not valid UTF-8", what)))
    }

    /// Inverse of [`Encoder::tensor`]; errors name the tensor once known.
    pub fn tensor(&mut self, what: &str) -> Result<(String, Tensor<f32>)> {
        let name = self.name(what)?;
        let ctx = format!("{} `{}`", what, name);
        let rank = self.u8(&ctx)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u32(&ctx)? as usize);
        }
        let n = shape.iter().try_fold(1usize, |a, &e| a.checked_mul(e));
        let n = n.ok_or_else(|| Error::format(self.offset(), format!("{} has absurd extents {:?}", ctx, shape)))?;
        let data = self.f32s(n, &ctx)?;
        Ok((name, Tensor::new(&shape, data)?))
    }
}

/// Writes `path` via a sibling temporary file that is renamed into place only
/// if `body` succeeds; on error nothing appears at `path`.
pub fn write_atomic<F>(path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<&mut fs::File>) -> Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::Builder::new()
        .prefix(".mowe-partial-")
        .tempfile_in(dir)?;
    {
        let mut w = BufWriter::with_capacity(1 << 20, tmp.as_file_mut());
        body(&mut w)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn write_atomic_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic(path, |w| Ok(w.write_all(bytes)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalars_round_trip() {
        let mut e = Encoder::new();
        e.u8(7);
        e.u16(65000);
        e.u32(123456789);
        e.f32(-1.5);
        e.f64(std::f64::consts::PI);
        e.name("blocks.0.attn.q.weight").unwrap();
        let mut d = Decoder::new(&e.bytes);
        assert_eq!(d.u8("a").unwrap(), 7);
        assert_eq!(d.u16("b").unwrap(), 65000);
        assert_eq!(d.u32("c").unwrap(), 123456789);
        assert_eq!(d.f32("d").unwrap(), -1.5);
        assert_eq!(d.f64("e").unwrap(), std::f64::consts::PI);
        assert_eq!(d.name("f").unwrap(), "blocks.0.attn.q.weight");
        assert_eq!(d.remaining(), 0);
    }

    #[test]
    fn truncation_reports_offset_and_name() {
        let t = Tensor::<f32>::from_fn(&[2, 3], |i| i as f32);
        let mut e = Encoder::new();
        e.tensor("head", &t).unwrap();
        let cut = &e.bytes[..e.bytes.len() - 2];
        match Decoder::at(cut, 100).tensor("tensor") {
            Err(Error::Format { offset, detail }) => {
                assert!(detail.contains("head"), "{detail}");
                assert!(offset > 100);
            }
            other => panic!("expected format error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn failed_atomic_write_leaves_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.bin");
        let r = write_atomic(&p, |w| {
            w.write_all(b"partial")?;
            Err(Error::Invariant("boom".into()))
        });
        assert!(r.is_err());
        assert!(!p.exists());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
        write_atomic_bytes(&p, b"ok").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"ok");
    }
}
