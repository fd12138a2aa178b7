//! Single-file checkpoint container: a length-prefixed name table with
//! 64-bit little-endian array payloads and a config hash. Save followed by
//! load reproduces every array bit-exactly.

use crate::autodiff::Matrix;
use crate::nn::ParamStore;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

const MAGIC: &[u8; 4] = b"HQCP";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("config hash mismatch: checkpoint {found:#018x}, expected {expected:#018x} (model configuration differs)")]
    ConfigHashMismatch { found: u64, expected: u64 },
}

pub fn save(store: &ParamStore, config_hash: u64, path: &Path) -> Result<(), CheckpointError> {
    let mut w: Vec<u8> = Vec::new();
    w.extend_from_slice(MAGIC);
    w.extend_from_slice(&VERSION.to_le_bytes());
    w.extend_from_slice(&config_hash.to_le_bytes());
    w.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, value) in store.iter() {
        w.extend_from_slice(&(name.len() as u32).to_le_bytes());
        w.extend_from_slice(name.as_bytes());
        w.extend_from_slice(&(value.nrows() as u32).to_le_bytes());
        w.extend_from_slice(&(value.ncols() as u32).to_le_bytes());
        for v in value.iter() {
            w.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&w)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(ParamStore, u64), CheckpointError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut at = 0usize;
    let take = |at: &mut usize, n: usize| -> Result<&[u8], CheckpointError> {
        if *at + n > bytes.len() {
            return Err(CheckpointError::Corrupt("truncated file".into()));
        }
        let out = &bytes[*at..*at + n];
        *at += n;
        Ok(out)
    };
    if take(&mut at, 4)? != MAGIC {
        return Err(CheckpointError::Corrupt("bad magic".into()));
    }
    let version = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(CheckpointError::Corrupt(format!("unsupported version {version}")));
    }
    let config_hash = u64::from_le_bytes(take(&mut at, 8)?.try_into().unwrap());
    let n_entries = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap()) as usize;
    let mut store = ParamStore::new();
    for _ in 0..n_entries {
        let name_len = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut at, name_len)?.to_vec())
            .map_err(|e| CheckpointError::Corrupt(format!("non-utf8 name: {e}")))?;
        let rows = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap()) as usize;
        let payload = take(&mut at, rows * cols * 8)?;
        let mut m = Matrix::zeros((rows, cols));
        for (slot, chunk) in m.iter_mut().zip(payload.chunks_exact(8)) {
            *slot = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        store.insert_raw(name, m);
    }
    if at != bytes.len() {
        return Err(CheckpointError::Corrupt("trailing bytes".into()));
    }
    Ok((store, config_hash))
}

/// Loads and verifies the stored config hash against the expected one.
pub fn load_validated(path: &Path, expected: u64) -> Result<ParamStore, CheckpointError> {
    let (store, found) = load(path)?;
    if found != expected {
        return Err(CheckpointError::ConfigHashMismatch { found, expected });
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Init;

    fn toy_store() -> ParamStore {
        let mut store = ParamStore::new();
        store.register("encoder.tok_emb", (5, 3), Init::Normal { scale: 0.3 }, 9);
        store.register("heads.score.w", (3, 1), Init::Normal { scale: 0.3 }, 9);
        store.register("heads.score.b", (1, 1), Init::Zeros, 9);
        store
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let store = toy_store();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        save(&store, 0xdead_beef, &p1).unwrap();
        let (loaded, hash) = load(&p1).unwrap();
        assert_eq!(hash, 0xdead_beef);
        assert_eq!(loaded, store);
        save(&loaded, hash, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn hash_mismatch_is_rejected() {
        let store = toy_store();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        save(&store, 1, &path).unwrap();
        assert!(load_validated(&path, 1).is_ok());
        assert!(matches!(
            load_validated(&path, 2),
            Err(CheckpointError::ConfigHashMismatch { found: 1, expected: 2 })
        ));
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(matches!(load(&path), Err(CheckpointError::Corrupt(_))));
        let store = toy_store();
        let good = dir.path().join("good.ckpt");
        save(&store, 7, &good).unwrap();
        let mut bytes = std::fs::read(&good).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(load(&path), Err(CheckpointError::Corrupt(_))));
    }
}
