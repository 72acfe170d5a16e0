//! Versioned little-endian binary format for [`LshIndex`].
//!
//! ```text
//! magic    8 bytes  "VPLSHIX\0"
//! version  u32      1
//! params   u32 shingle, u32 signature_len, u32 bands, u32 rows, u64 seed
//! entries  u32 count, then per entry: u32 id_len, id bytes (UTF-8),
//!          u8 sentinel flag, signature_len x u64 slots
//! buckets  per band: u32 bucket count, then per bucket:
//!          u64 band hash, u32 member count, member count x u32 entry positions
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{LshIndex, LshParams, MinHashSignature, SimIndexError};

pub const MAGIC: &[u8; 8] = b"VPLSHIX\0";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum PersistError {
    #[error("index I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("not an index file (bad magic)")]
    BadMagic,
    #[error("unsupported index version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt index: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Params(#[from] SimIndexError),
}

fn to_u32(n: usize) -> Result<u32, PersistError> {
    u32::try_from(n).map_err(|_| PersistError::Corrupt(format!("value {n} exceeds u32")))
}

pub fn write_index<W: Write>(index: &LshIndex, mut w: W) -> Result<(), PersistError> {
    let p = index.params();
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u32::<LittleEndian>(to_u32(p.shingle)?)?;
    w.write_u32::<LittleEndian>(to_u32(p.signature_len)?)?;
    w.write_u32::<LittleEndian>(to_u32(p.bands)?)?;
    w.write_u32::<LittleEndian>(to_u32(p.rows)?)?;
    w.write_u64::<LittleEndian>(p.seed)?;

    w.write_u32::<LittleEndian>(to_u32(index.len())?)?;
    for (id, sig) in index.ids().iter().zip(index.signatures()) {
        w.write_u32::<LittleEndian>(to_u32(id.len())?)?;
        w.write_all(id.as_bytes())?;
        w.write_u8(u8::from(sig.is_sentinel()))?;
        for slot in sig.slots() {
            w.write_u64::<LittleEndian>(*slot)?;
        }
    }

    for band in index.buckets() {
        w.write_u32::<LittleEndian>(to_u32(band.len())?)?;
        for (key, members) in band {
            w.write_u64::<LittleEndian>(*key)?;
            w.write_u32::<LittleEndian>(to_u32(members.len())?)?;
            for m in members {
                w.write_u32::<LittleEndian>(*m)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_index<R: Read>(mut r: R) -> Result<LshIndex, PersistError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(PersistError::BadMagic);
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(PersistError::UnsupportedVersion(version));
    }
    let params = LshParams {
        shingle: r.read_u32::<LittleEndian>()? as usize,
        signature_len: r.read_u32::<LittleEndian>()? as usize,
        bands: r.read_u32::<LittleEndian>()? as usize,
        rows: r.read_u32::<LittleEndian>()? as usize,
        seed: r.read_u64::<LittleEndian>()?,
    };
    params.validate()?;

    let count = r.read_u32::<LittleEndian>()? as usize;
    let mut ids = Vec::with_capacity(count.min(1 << 20));
    let mut signatures = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let len = r.read_u32::<LittleEndian>()? as usize;
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf)?;
        let id = String::from_utf8(buf)
            .map_err(|_| PersistError::Corrupt("entry id is not UTF-8".into()))?;
        let sentinel = r.read_u8()? != 0;
        let mut slots = Vec::with_capacity(params.signature_len);
        for _ in 0..params.signature_len {
            slots.push(r.read_u64::<LittleEndian>()?);
        }
        ids.push(id);
        signatures.push(MinHashSignature::from_parts(slots, params.seed, sentinel));
    }

    let mut stored = Vec::with_capacity(params.bands);
    for _ in 0..params.bands {
        let n = r.read_u32::<LittleEndian>()? as usize;
        let mut band = BTreeMap::new();
        for _ in 0..n {
            let key = r.read_u64::<LittleEndian>()?;
            let members = r.read_u32::<LittleEndian>()? as usize;
            let mut list = Vec::with_capacity(members.min(count));
            for _ in 0..members {
                list.push(r.read_u32::<LittleEndian>()?);
            }
            band.insert(key, list);
        }
        stored.push(band);
    }

    let index = LshIndex::from_signatures(params, ids, signatures)?;
    if index.buckets() != stored.as_slice() {
        return Err(PersistError::Corrupt(
            "bucket table does not match stored signatures".into(),
        ));
    }
    Ok(index)
}
