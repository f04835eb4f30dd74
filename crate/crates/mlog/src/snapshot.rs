//! Partition files: `[u32 payload_len][u32 key_len][key][payload]` repeated,
//! little-endian. A keyless record stores `key_len = u32::MAX` and no key
//! bytes, which keeps it distinct from an empty key.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use crate::{LogError, Record};

const NO_KEY: u32 = u32::MAX;

pub fn write_partition_file<'a>(
    path: impl AsRef<Path>,
    records: impl IntoIterator<Item = &'a Record>,
) -> Result<(), LogError> {
    let tmp = path.as_ref().with_extension("tmp");
    let mut w = BufWriter::new(File::create(&tmp)?);
    for r in records {
        let len = |n: usize| u32::try_from(n).map_err(|_| LogError::Corrupt("record over 4 GiB".into()));
        w.write_all(&len(r.payload.len())?.to_le_bytes())?;
        match &r.key {
            Some(k) => {
                w.write_all(&len(k.len())?.to_le_bytes())?;
                w.write_all(k)?;
            }
            None => w.write_all(&NO_KEY.to_le_bytes())?,
        }
        w.write_all(&r.payload)?;
    }
    w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
    std::fs::rename(tmp, path)?;
    Ok(())
}

type KeyPayload = (Option<Vec<u8>>, Vec<u8>);

pub fn read_partition_file(path: impl AsRef<Path>) -> Result<Vec<KeyPayload>, LogError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    loop {
        let mut head = [0u8; 4];
        match r.read_exact(&mut head) {
            Ok(()) => {}
            Err(e) if e.kind() == ErrorKind::UnexpectedEof => return Ok(out),
            Err(e) => return Err(e.into()),
        }
        let payload_len = u32::from_le_bytes(head) as usize;
        let truncated = |_| LogError::Corrupt(format!("truncated after {} records", out.len()));
        r.read_exact(&mut head).map_err(truncated)?;
        let key = match u32::from_le_bytes(head) {
            NO_KEY => None,
            n => {
                let mut k = vec![0; n as usize];
                r.read_exact(&mut k).map_err(truncated)?;
                Some(k)
            }
        };
        let mut payload = vec![0; payload_len];
        r.read_exact(&mut payload).map_err(truncated)?;
        out.push((key, payload));
    }
}
