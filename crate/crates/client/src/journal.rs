//! Append-only collection journal.
//!
//! The journal shares the pool line-delimited JSON format plus a `status`
//! field: `done` records carry a completion, `pending` records mark a slot
//! still owed after a permanently failed request (with the last error). A
//! restarted collection replays the journal and only issues requests for
//! slots not yet `done`.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use eqtest_core::corpus::{
    io_format_version, Completion, Pool, PromptDistribution, SpaceMode, SymbolSpace,
};

use crate::error::{ClientError, Result};

#[derive(Serialize, Deserialize)]
struct JournalHeader {
    format_version: u32,
    space: JournalSpace,
    source: String,
    #[serde(default)]
    meta: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct JournalSpace {
    mode: SpaceMode,
    vocab_size: u32,
    max_length: usize,
}

#[derive(Serialize, Deserialize)]
struct JournalRecord {
    prompt_id: String,
    prompt_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prompt_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    completion_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source: Option<String>,
    status: JournalStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum JournalStatus {
    Done,
    Pending,
}

struct JournalState {
    per_prompt: Vec<Vec<Completion>>,
    last_error: Vec<Option<String>>,
    seen_text: Vec<bool>,
}

/// Single-writer append journal with the replayed state in memory.
pub struct CollectionJournal {
    path: PathBuf,
    space: SymbolSpace,
    source: String,
    target_per_prompt: usize,
    writer: Mutex<BufWriter<File>>,
    state: Mutex<JournalState>,
}

impl CollectionJournal {
    /// Open an existing journal (replaying its records) or create a fresh
    /// one with a header. An existing journal must match the current space
    /// and source, so two configurations can never interleave in one file.
    pub fn open_or_create(
        path: impl AsRef<Path>,
        pi: &PromptDistribution,
        char_cap: usize,
        source: &str,
        target_per_prompt: usize,
    ) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let space = SymbolSpace::character(char_cap).map_err(ClientError::Core)?;
        let mut state = JournalState {
            per_prompt: vec![Vec::new(); pi.len()],
            last_error: vec![None; pi.len()],
            seen_text: vec![false; pi.len()],
        };

        let exists = path.exists() && std::fs::metadata(&path)?.len() > 0;
        if exists {
            let reader = BufReader::new(File::open(&path)?);
            let mut lines = reader.lines().enumerate();
            let (_, header_line) = lines
                .next()
                .map(|(i, l)| Ok::<_, std::io::Error>((i, l?)))
                .transpose()?
                .ok_or_else(|| ClientError::Journal {
                    line: 1,
                    reason: "missing header".into(),
                })?;
            let header: JournalHeader =
                serde_json::from_str(&header_line).map_err(|e| ClientError::Journal {
                    line: 1,
                    reason: e.to_string(),
                })?;
            if header.space.max_length != char_cap || header.space.mode != SpaceMode::Char {
                return Err(ClientError::JournalMismatch {
                    path: path.display().to_string(),
                    reason: format!(
                        "journal cap {} vs configured {char_cap}",
                        header.space.max_length
                    ),
                });
            }
            if header.source != source {
                return Err(ClientError::JournalMismatch {
                    path: path.display().to_string(),
                    reason: format!("journal source '{}' vs configured '{source}'", header.source),
                });
            }
            for (i, line) in lines {
                let line_no = i + 1;
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: JournalRecord =
                    serde_json::from_str(&line).map_err(|e| ClientError::Journal {
                        line: line_no,
                        reason: e.to_string(),
                    })?;
                let idx = record.prompt_index;
                if idx >= pi.len() || pi.prompts()[idx].id != record.prompt_id {
                    return Err(ClientError::JournalMismatch {
                        path: path.display().to_string(),
                        reason: format!(
                            "line {line_no}: prompt '{}' at index {idx} does not match the prompt distribution",
                            record.prompt_id
                        ),
                    });
                }
                match record.status {
                    JournalStatus::Done => {
                        let text = record.completion_text.ok_or_else(|| ClientError::Journal {
                            line: line_no,
                            reason: "done record without completion_text".into(),
                        })?;
                        if state.per_prompt[idx].len() < target_per_prompt {
                            state.per_prompt[idx].push(Completion::from_text(&text));
                        }
                        state.seen_text[idx] = true;
                    }
                    JournalStatus::Pending => {
                        state.last_error[idx] = record.error;
                    }
                }
            }
        }

        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        let mut writer = BufWriter::new(file);
        if !exists {
            let header = JournalHeader {
                format_version: io_format_version(),
                space: JournalSpace {
                    mode: SpaceMode::Char,
                    vocab_size: space.vocab_size(),
                    max_length: char_cap,
                },
                source: source.to_string(),
                meta: BTreeMap::new(),
            };
            serde_json::to_writer(&mut writer, &header)
                .map_err(|e| ClientError::Io(std::io::Error::other(e)))?;
            writer.write_all(b"\n")?;
            writer.flush()?;
        }

        Ok(Self {
            path,
            space,
            source: source.to_string(),
            target_per_prompt,
            writer: Mutex::new(writer),
            state: Mutex::new(state),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Completions already collected for a prompt.
    pub fn collected(&self, prompt_index: usize) -> usize {
        self.state.lock().expect("journal lock").per_prompt[prompt_index].len()
    }

    /// Record one finished completion; the text is truncated at the
    /// character cap before encoding. Returns the stored completion.
    pub fn record_done(
        &self,
        prompt_index: usize,
        prompt_id: &str,
        prompt_text: &str,
        text: &str,
    ) -> Result<Completion> {
        let completion = Completion::from_text(text).truncated(self.space.max_length());
        let mut state = self.state.lock().expect("journal lock");
        if state.per_prompt[prompt_index].len() >= self.target_per_prompt {
            // At-most-target even across racing workers and resumes.
            return Ok(completion);
        }
        let first = !state.seen_text[prompt_index];
        state.seen_text[prompt_index] = true;
        state.per_prompt[prompt_index].push(completion.clone());
        drop(state);
        let record = JournalRecord {
            prompt_id: prompt_id.to_string(),
            prompt_index,
            prompt_text: first.then(|| prompt_text.to_string()),
            completion_text: completion.to_text(),
            source: Some(self.source.clone()),
            status: JournalStatus::Done,
            error: None,
        };
        self.append(&record)?;
        Ok(completion)
    }

    /// Record a permanently failed slot with its last error.
    pub fn record_pending(&self, prompt_index: usize, prompt_id: &str, error: &str) -> Result<()> {
        {
            let mut state = self.state.lock().expect("journal lock");
            state.last_error[prompt_index] = Some(error.to_string());
        }
        let record = JournalRecord {
            prompt_id: prompt_id.to_string(),
            prompt_index,
            prompt_text: None,
            completion_text: None,
            source: Some(self.source.clone()),
            status: JournalStatus::Pending,
            error: Some(error.to_string()),
        };
        self.append(&record)
    }

    fn append(&self, record: &JournalRecord) -> Result<()> {
        let mut writer = self.writer.lock().expect("journal lock");
        serde_json::to_writer(&mut *writer, record)
            .map_err(|e| ClientError::Io(std::io::Error::other(e)))?;
        writer.write_all(b"\n")?;
        // One record per line, flushed immediately: a crash loses at most the
        // in-flight request.
        writer.flush()?;
        Ok(())
    }

    pub fn total_collected(&self) -> usize {
        self.state
            .lock()
            .expect("journal lock")
            .per_prompt
            .iter()
            .map(Vec::len)
            .sum()
    }

    pub fn last_errors(&self) -> Vec<Option<String>> {
        self.state.lock().expect("journal lock").last_error.clone()
    }

    /// Build the collected pool. Metadata records the source configuration
    /// handed in by the caller.
    pub fn into_pool(
        self,
        pi: &PromptDistribution,
        metadata: BTreeMap<String, String>,
    ) -> Result<Pool> {
        let state = self.state.into_inner().expect("journal lock");
        let pool = Pool::new(
            self.space,
            pi.prompts().to_vec(),
            state.per_prompt,
            self.source.clone(),
        )
        .map_err(ClientError::Core)?;
        Ok(pool.with_metadata(metadata))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use eqtest_core::corpus::Prompt;

    fn pi() -> PromptDistribution {
        PromptDistribution::uniform(vec![Prompt::new("p0", "zero"), Prompt::new("p1", "one")]).unwrap()
    }

    #[test]
    fn journal_replays_done_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("j.jsonl");
        {
            let j = CollectionJournal::open_or_create(&path, &pi(), 100, "model-x", 3).unwrap();
            j.record_done(0, "p0", "zero", "hello").unwrap();
            j.record_done(1, "p1", "one", "world").unwrap();
            j.record_pending(1, "p1", "boom").unwrap();
        }
        let j = CollectionJournal::open_or_create(&path, &pi(), 100, "model-x", 3).unwrap();
        assert_eq!(j.collected(0), 1);
        assert_eq!(j.collected(1), 1);
        assert_eq!(j.last_errors()[1].as_deref(), Some("boom"));
    }

    #[test]
    fn at_most_target_is_enforced() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("j.jsonl");
        let j = CollectionJournal::open_or_create(&path, &pi(), 100, "m", 2).unwrap();
        for _ in 0..5 {
            j.record_done(0, "p0", "zero", "x").unwrap();
        }
        assert_eq!(j.collected(0), 2);
        drop(j);
        let j = CollectionJournal::open_or_create(&path, &pi(), 100, "m", 2).unwrap();
        assert_eq!(j.collected(0), 2);
    }

    #[test]
    fn mismatched_configuration_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("j.jsonl");
        drop(CollectionJournal::open_or_create(&path, &pi(), 100, "m", 2).unwrap());
        assert!(matches!(
            CollectionJournal::open_or_create(&path, &pi(), 50, "m", 2),
            Err(ClientError::JournalMismatch { .. })
        ));
        assert!(matches!(
            CollectionJournal::open_or_create(&path, &pi(), 100, "other", 2),
            Err(ClientError::JournalMismatch { .. })
        ));
    }

    #[test]
    fn truncation_at_char_cap() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("j.jsonl");
        let j = CollectionJournal::open_or_create(&path, &pi(), 4, "m", 1).unwrap();
        let stored = j.record_done(0, "p0", "zero", "abcdefgh").unwrap();
        assert_eq!(stored, Completion::from_text("abcd"));
        j.record_done(1, "p1", "one", "ok").unwrap();
        let pool = j.into_pool(&pi(), BTreeMap::new()).unwrap();
        assert_eq!(pool.completions_for(0)[0].len(), 4);
    }
}
