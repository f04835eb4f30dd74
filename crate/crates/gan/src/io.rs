//! `SNAPGAN1` parameter files.
//!
//! Layout, little-endian:
//!
//! ```text
//! magic    "SNAPGAN1"
//! u32      format version (1)
//! u32 × 6  nz, ngf, ndf, channels, image_size, blocks
//! u32      tensor count
//! manifest per tensor: u32 name_len, name (utf-8), u32 rank, u32 × rank dims
//! data     raw f32 values of every tensor, manifest order
//! ```
//!
//! Tensors are the learnable parameters (generator first) followed by the
//! batch-norm running statistics.

use std::fs;
use std::path::Path;

use crate::model::{DcganConfig, DcganParams};
use crate::GanError;

pub const MAGIC: &[u8; 8] = b"SNAPGAN1";
pub const FORMAT_VERSION: u32 = 1;

type Manifest = Vec<(String, Vec<usize>)>;

fn manifest(model: &mut DcganParams) -> Manifest {
    let mut out: Manifest = model
        .params_mut()
        .into_iter()
        .map(|p| (p.name, p.shape))
        .collect();
    out.extend(
        model
            .buffers_mut()
            .into_iter()
            .map(|(name, buf)| (name, vec![buf.len()])),
    );
    out
}

fn flat_values(model: &mut DcganParams) -> Vec<f32> {
    let mut out = Vec::new();
    for p in model.params_mut() {
        out.extend_from_slice(p.value);
    }
    for (_, b) in model.buffers_mut() {
        out.extend_from_slice(b);
    }
    out
}

pub fn encode_params(model: &DcganParams) -> Vec<u8> {
    let mut model = model.clone();
    let cfg = *model.config();
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for v in [cfg.nz, cfg.ngf, cfg.ndf, cfg.channels, cfg.image_size, cfg.blocks] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    let man = manifest(&mut model);
    buf.extend_from_slice(&(man.len() as u32).to_le_bytes());
    for (name, shape) in &man {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for d in shape {
            buf.extend_from_slice(&(*d as u32).to_le_bytes());
        }
    }
    for v in flat_values(&mut model) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn save_params(model: &DcganParams, path: impl AsRef<Path>) -> Result<(), GanError> {
    fs::write(path, encode_params(model))?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], GanError> {
        let end = self.pos.checked_add(n).ok_or(GanError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(GanError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, GanError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_params(bytes: &[u8]) -> Result<DcganParams, GanError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(GanError::Format("bad magic, not a SNAPGAN1 file".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(GanError::Format(format!("unsupported format version {version}")));
    }
    let mut dims = [0usize; 6];
    for d in &mut dims {
        *d = r.u32()? as usize;
    }
    let config = DcganConfig {
        nz: dims[0],
        ngf: dims[1],
        ndf: dims[2],
        channels: dims[3],
        image_size: dims[4],
        blocks: dims[5],
    };
    config.validate()?;
    let mut model = DcganParams::new(config)?;
    let expected = manifest(&mut model);

    let count = r.u32()? as usize;
    if count != expected.len() {
        return Err(GanError::Shape(format!(
            "manifest lists {count} tensors, architecture has {}",
            expected.len()
        )));
    }
    for (name, shape) in &expected {
        let len = r.u32()? as usize;
        let got_name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| GanError::Format("tensor name is not utf-8".into()))?;
        let rank = r.u32()? as usize;
        let mut got_shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            got_shape.push(r.u32()? as usize);
        }
        if got_name != name || &got_shape != shape {
            return Err(GanError::Shape(format!(
                "manifest entry {got_name}{got_shape:?} does not match {name}{shape:?}"
            )));
        }
    }

    let total: usize = expected.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
    let raw = r.take(total * 4)?;
    if r.pos != bytes.len() {
        return Err(GanError::Format(format!(
            "{} trailing bytes after parameter data",
            bytes.len() - r.pos
        )));
    }
    let mut values = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    for p in model.params_mut() {
        for v in p.value.iter_mut() {
            *v = values.next().expect("sized above");
        }
    }
    for (_, b) in model.buffers_mut() {
        for v in b.iter_mut() {
            *v = values.next().expect("sized above");
        }
    }
    Ok(model)
}

pub fn load_params(path: impl AsRef<Path>) -> Result<DcganParams, GanError> {
    decode_params(&fs::read(path)?)
}
