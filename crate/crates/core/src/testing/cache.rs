//! Content fingerprints, the in-memory null cache, and null persistence.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{NullDistribution, NullKey, NullMethod};
use crate::corpus::{Pool, PromptDistribution, SpaceMode};
use crate::error::{Error, Result};

/// Content hash of everything about a pool that affects test behavior:
/// the symbol space, the prompt table, and the per-prompt completions.
/// Labels and metadata are excluded.
pub fn pool_fingerprint(pool: &Pool) -> String {
    let mut h = Sha256::new();
    h.update(match pool.space().mode() {
        SpaceMode::Token => [0u8],
        SpaceMode::Char => [1u8],
    });
    h.update(pool.space().vocab_size().to_le_bytes());
    h.update((pool.space().max_length() as u64).to_le_bytes());
    h.update((pool.prompt_count() as u64).to_le_bytes());
    for (i, prompt) in pool.prompts().iter().enumerate() {
        update_str(&mut h, &prompt.id);
        update_str(&mut h, &prompt.text);
        let list = pool.completions_for(i);
        h.update((list.len() as u64).to_le_bytes());
        for completion in list {
            h.update((completion.len() as u64).to_le_bytes());
            for &id in completion.symbols() {
                h.update(id.to_le_bytes());
            }
        }
    }
    hex(h.finalize().as_slice())
}

/// Content hash of a prompt distribution: ids, texts, and exact weight bits.
pub fn pi_fingerprint(pi: &PromptDistribution) -> String {
    let mut h = Sha256::new();
    h.update((pi.len() as u64).to_le_bytes());
    for (prompt, &w) in pi.prompts().iter().zip(pi.weights()) {
        update_str(&mut h, &prompt.id);
        update_str(&mut h, &prompt.text);
        h.update(w.to_bits().to_le_bytes());
    }
    hex(h.finalize().as_slice())
}

fn update_str(h: &mut Sha256, s: &str) {
    h.update((s.len() as u64).to_le_bytes());
    h.update(s.as_bytes());
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Read-mostly shared cache of simulated nulls, keyed by content. Insertion
/// is single-writer: the first computed value for a key wins and later
/// computations for the same key are dropped in favor of the cached one.
#[derive(Default)]
pub struct NullCache {
    inner: RwLock<HashMap<NullKey, Arc<NullDistribution>>>,
}

impl NullCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, key: &NullKey) -> Option<Arc<NullDistribution>> {
        self.inner.read().expect("cache lock poisoned").get(key).cloned()
    }

    pub fn len(&self) -> usize {
        self.inner.read().expect("cache lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get_or_insert_with<F>(&self, key: &NullKey, compute: F) -> Result<Arc<NullDistribution>>
    where
        F: FnOnce() -> Result<NullDistribution>,
    {
        if let Some(found) = self.get(key) {
            return Ok(found);
        }
        let computed = Arc::new(compute()?);
        let mut guard = self.inner.write().expect("cache lock poisoned");
        Ok(guard.entry(key.clone()).or_insert(computed).clone())
    }
}

#[derive(Serialize, Deserialize)]
struct NullFileHeader {
    format_version: u32,
    record_type: String,
}

#[derive(Serialize, Deserialize)]
struct NullFileRecord {
    key: NullKey,
    method: NullMethod,
    values: Vec<f64>,
}

/// Persist a null distribution in the same line-delimited JSON envelope as
/// pools: a header line, then one record with the key and sorted values.
pub fn save_null(null: &NullDistribution, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let header = NullFileHeader {
        format_version: crate::corpus::io_format_version(),
        record_type: "null_distribution".into(),
    };
    serde_json::to_writer(&mut w, &header).map_err(to_io)?;
    w.write_all(b"\n")?;
    let record = NullFileRecord {
        key: null.key().clone(),
        method: null.method(),
        values: null.values().to_vec(),
    };
    serde_json::to_writer(&mut w, &record).map_err(to_io)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_null(path: impl AsRef<Path>) -> Result<NullDistribution> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header_line = lines
        .next()
        .transpose()?
        .ok_or_else(|| Error::MalformedRecord {
            line: 1,
            reason: "empty null-distribution file".into(),
        })?;
    let header: NullFileHeader =
        serde_json::from_str(&header_line).map_err(|e| Error::MalformedRecord {
            line: 1,
            reason: e.to_string(),
        })?;
    if header.record_type != "null_distribution" {
        return Err(Error::MalformedRecord {
            line: 1,
            reason: format!("expected a null_distribution file, found '{}'", header.record_type),
        });
    }
    let record_line = lines
        .next()
        .transpose()?
        .ok_or_else(|| Error::MalformedRecord {
            line: 2,
            reason: "missing null-distribution record".into(),
        })?;
    let record: NullFileRecord =
        serde_json::from_str(&record_line).map_err(|e| Error::MalformedRecord {
            line: 2,
            reason: e.to_string(),
        })?;
    Ok(NullDistribution::new(record.key, record.method, record.values))
}

fn to_io(e: serde_json::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}
