//! Collection files: `"SNAPVEC1"`, `u32 dimension`, `u64 count`, then
//! `count × dimension` packed f32, then per entry `u64 entry_id`,
//! `u32 region`, `u32 len` + doc id bytes, `u32 len` + class label bytes
//! (`u32::MAX` and no bytes when absent). All little-endian. The ANN index is
//! not stored; rebuild it after loading.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::collection::{Collection, EmbeddingEntry};
use crate::VectorError;

pub const MAGIC: &[u8; 8] = b"SNAPVEC1";
const NONE: u32 = u32::MAX;

fn put_str(w: &mut impl Write, s: Option<&str>) -> std::io::Result<()> {
    match s {
        Some(s) => {
            w.write_all(&(s.len() as u32).to_le_bytes())?;
            w.write_all(s.as_bytes())
        }
        None => w.write_all(&NONE.to_le_bytes()),
    }
}

fn u32_of(r: &mut impl Read) -> Result<u32, VectorError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn u64_of(r: &mut impl Read) -> Result<u64, VectorError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}

fn str_of(r: &mut impl Read) -> Result<Option<String>, VectorError> {
    match u32_of(r)? {
        NONE => Ok(None),
        n => {
            let mut b = vec![0u8; n as usize];
            r.read_exact(&mut b).map_err(truncated)?;
            String::from_utf8(b).map(Some).map_err(|e| VectorError::Format(e.to_string()))
        }
    }
}

fn truncated(e: std::io::Error) -> VectorError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        VectorError::Format("truncated".into())
    } else {
        VectorError::Io(e)
    }
}

impl Collection {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), VectorError> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(MAGIC)?;
        w.write_all(&(self.dimension() as u32).to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        for m in &self.meta {
            w.write_all(&m.entry_id.to_le_bytes())?;
            w.write_all(&m.region.to_le_bytes())?;
            put_str(&mut w, Some(&m.doc_id))?;
            put_str(&mut w, m.class_label.as_deref())?;
        }
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    /// Loads a collection file; the collection is named after the file stem.
    pub fn load(path: impl AsRef<Path>) -> Result<Collection, VectorError> {
        let path = path.as_ref();
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("collection");
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != MAGIC {
            return Err(VectorError::Format("bad magic".into()));
        }
        let dim = u32_of(&mut r)? as usize;
        let count = u64_of(&mut r)? as usize;
        let mut raw = vec![0u8; dim.checked_mul(count).and_then(|n| n.checked_mul(4)).ok_or_else(|| VectorError::Format("size overflow".into()))?];
        r.read_exact(&mut raw).map_err(truncated)?;
        let data: Vec<f32> = raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        let mut c = Collection::new(name, dim)?;
        for i in 0..count {
            let entry_id = u64_of(&mut r)?;
            let region = u32_of(&mut r)?;
            let doc_id = str_of(&mut r)?.ok_or_else(|| VectorError::Format("missing doc id".into()))?;
            let class_label = str_of(&mut r)?;
            c.insert(EmbeddingEntry {
                entry_id,
                doc_id,
                region,
                vector: data[i * dim..(i + 1) * dim].to_vec(),
                class_label,
            })?;
        }
        Ok(c)
    }
}
