//! Binary checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "NPS1"
//! 4       4     u32 entry count
//! then per entry, in order:
//!         2     u16 name length L
//!         L     name bytes (UTF-8)
//!         1     u8 rank (1 or 2)
//!         4*r   u32 dims (length for rank 1; rows, cols for rank 2)
//!         8*n   f64 little-endian values, row-major
//! ```
//!
//! Entries are a flat ordered list of (name, shape, values); values
//! round-trip bit-exactly. Trainers store parameters first, then optimizer
//! state under `opt.*` names and the résumé epoch under `train.epoch`.

use crate::array::Array;
use crate::error::{CoreError, Result};
use crate::optim::ParamStore;
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"NPS1";

pub fn save_entries(path: &Path, entries: &[(String, Array)]) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, value) in entries {
        let name_bytes = name.as_bytes();
        assert!(name_bytes.len() <= u16::MAX as usize, "checkpoint entry name too long");
        buf.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        buf.extend_from_slice(name_bytes);
        buf.push(value.rank());
        if value.rank() == 1 {
            buf.extend_from_slice(&(value.cols() as u32).to_le_bytes());
        } else {
            buf.extend_from_slice(&(value.rows() as u32).to_le_bytes());
            buf.extend_from_slice(&(value.cols() as u32).to_le_bytes());
        }
        for v in value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    f.write_all(&buf).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    Ok(())
}

pub fn load_entries(path: &Path) -> Result<Vec<(String, Array)>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| CoreError::io(path.display().to_string(), e))?
        .read_to_end(&mut bytes)
        .map_err(|e| CoreError::io(path.display().to_string(), e))?;
    let fail = |detail: &str| CoreError::Format { path: path.display().to_string(), detail: detail.to_string() };
    if bytes.len() < 8 || &bytes[0..4] != MAGIC {
        return Err(fail("missing NPS1 magic header"));
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let mut pos = 8usize;
    let take = |n: usize, pos: &mut usize| -> Result<std::ops::Range<usize>> {
        if *pos + n > bytes.len() {
            return Err(fail("truncated file"));
        }
        let r = *pos..*pos + n;
        *pos += n;
        Ok(r)
    };
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let r = take(2, &mut pos)?;
        let name_len = u16::from_le_bytes(bytes[r].try_into().unwrap()) as usize;
        let r = take(name_len, &mut pos)?;
        let name = std::str::from_utf8(&bytes[r]).map_err(|_| fail("entry name is not UTF-8"))?.to_string();
        let r = take(1, &mut pos)?;
        let rank = bytes[r][0];
        let (rows, cols) = match rank {
            1 => {
                let r = take(4, &mut pos)?;
                (1usize, u32::from_le_bytes(bytes[r].try_into().unwrap()) as usize)
            }
            2 => {
                let r1 = take(4, &mut pos)?;
                let rows = u32::from_le_bytes(bytes[r1].try_into().unwrap()) as usize;
                let r2 = take(4, &mut pos)?;
                let cols = u32::from_le_bytes(bytes[r2].try_into().unwrap()) as usize;
                (rows, cols)
            }
            other => return Err(fail(&format!("unsupported rank {other}"))),
        };
        let n = rows * cols;
        let r = take(8 * n, &mut pos)?;
        let data: Vec<f64> = bytes[r].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let value = if rank == 1 { Array::vector(data) } else { Array::matrix(rows, cols, data) };
        entries.push((name, value));
    }
    Ok(entries)
}

/// Save parameters followed by any extra named entries (optimizer state,
/// epoch counters).
pub fn save_model(path: &Path, store: &ParamStore, extras: &[(String, Array)]) -> Result<()> {
    let mut entries: Vec<(String, Array)> = store.iter().map(|(n, v)| (n.to_string(), v.clone())).collect();
    entries.extend_from_slice(extras);
    save_entries(path, &entries)
}

/// Split loaded entries into parameter values and extras.
pub fn partition_entries(entries: Vec<(String, Array)>, store: &ParamStore) -> (Vec<(String, Array)>, Vec<(String, Array)>) {
    let mut params = Vec::new();
    let mut extras = Vec::new();
    for (name, value) in entries {
        if store.lookup(&name).is_some() {
            params.push((name, value));
        } else {
            extras.push((name, value));
        }
    }
    (params, extras)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Mix64;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.nps1");
        let mut rng = Mix64::new(123);
        let entries = vec![
            ("a.weight".to_string(), Array::uniform_fanin(3, 4, 4, &mut rng)),
            ("a.bias".to_string(), Array::vector(vec![0.25, -1e-300, f64::MAX, 0.1])),
            ("step".to_string(), Array::scalar(17.0)),
        ];
        save_entries(&path, &entries).unwrap();
        let loaded = load_entries(&path).unwrap();
        assert_eq!(loaded.len(), entries.len());
        for ((n1, v1), (n2, v2)) in entries.iter().zip(loaded.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(v1.shape(), v2.shape());
            for (a, b) in v1.data().iter().zip(v2.data().iter()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.nps1");
        std::fs::write(&path, b"XXXX\x00\x00\x00\x00").unwrap();
        assert!(load_entries(&path).is_err());
    }
}
