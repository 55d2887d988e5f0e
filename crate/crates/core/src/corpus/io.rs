//! Line-delimited JSON pool files.
//!
//! First line is a header record with the format version, the symbol space,
//! the source label, pool metadata, and the full prompt table. Every
//! following line is one completion record. Character-space records store
//! `completion_text`; token-space records store `completion_tokens`; exactly
//! one of the two is allowed per record. `prompt_text` may be omitted after
//! the first record for a prompt.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Completion, Pool, Prompt, SpaceMode, SymbolSpace};
use crate::error::{Error, Result};

pub(crate) const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct SpaceRecord {
    mode: SpaceMode,
    vocab_size: u32,
    max_length: usize,
}

#[derive(Serialize, Deserialize)]
struct PromptRecord {
    id: String,
    text: String,
}

#[derive(Serialize, Deserialize)]
struct HeaderRecord {
    format_version: u32,
    space: SpaceRecord,
    #[serde(default)]
    source: Option<String>,
    #[serde(default)]
    meta: BTreeMap<String, String>,
    /// Full prompt table in index order; lets pools with prompts that have
    /// no completions round-trip exactly.
    #[serde(default)]
    prompts: Option<Vec<PromptRecord>>,
}

#[derive(Serialize, Deserialize)]
struct CompletionRecord {
    prompt_id: String,
    prompt_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prompt_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    completion_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    completion_tokens: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    meta: Option<serde_json::Value>,
}

pub fn save_pool(pool: &Pool, path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    write_pool(pool, &mut w)?;
    w.flush()?;
    Ok(())
}

pub(crate) fn write_pool<W: Write>(pool: &Pool, w: &mut W) -> Result<()> {
    let header = HeaderRecord {
        format_version: FORMAT_VERSION,
        space: SpaceRecord {
            mode: pool.space().mode(),
            vocab_size: pool.space().vocab_size(),
            max_length: pool.space().max_length(),
        },
        source: Some(pool.source_label().to_string()),
        meta: pool.metadata().clone(),
        prompts: Some(
            pool.prompts()
                .iter()
                .map(|p| PromptRecord {
                    id: p.id.clone(),
                    text: p.text.clone(),
                })
                .collect(),
        ),
    };
    serde_json::to_writer(&mut *w, &header).map_err(io_err)?;
    w.write_all(b"\n")?;
    for (prompt_index, prompt) in pool.prompts().iter().enumerate() {
        for (k, completion) in pool.completions_for(prompt_index).iter().enumerate() {
            let record = CompletionRecord {
                prompt_id: prompt.id.clone(),
                prompt_index,
                prompt_text: (k == 0).then(|| prompt.text.clone()),
                completion_text: match pool.space().mode() {
                    SpaceMode::Char => Some(completion.to_text().ok_or_else(|| {
                        Error::InvalidConfig(
                            "character-space completion holds a non-scalar symbol".into(),
                        )
                    })?),
                    SpaceMode::Token => None,
                },
                completion_tokens: match pool.space().mode() {
                    SpaceMode::Token => Some(completion.symbols().to_vec()),
                    SpaceMode::Char => None,
                },
                source: Some(pool.source_label().to_string()),
                meta: None,
            };
            serde_json::to_writer(&mut *w, &record).map_err(io_err)?;
            w.write_all(b"\n")?;
        }
    }
    Ok(())
}

pub fn load_pool(path: impl AsRef<Path>) -> Result<Pool> {
    let file = File::open(&path)?;
    read_pool(BufReader::new(file))
}

pub(crate) fn read_pool<R: BufRead>(reader: R) -> Result<Pool> {
    let mut lines = reader.lines().enumerate();

    let (_, header_line) = loop {
        match lines.next() {
            Some((i, line)) => {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                break (i, line);
            }
            None => return Err(Error::EmptyPool("file has no header record".into())),
        }
    };
    let header: HeaderRecord = serde_json::from_str(&header_line).map_err(|e| Error::MalformedRecord {
        line: 1,
        reason: format!("bad header: {e}"),
    })?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::MalformedRecord {
            line: 1,
            reason: format!("unsupported format_version {}", header.format_version),
        });
    }
    let space = SymbolSpace::with_mode(
        header.space.vocab_size,
        header.space.max_length,
        header.space.mode,
    )?;

    // Prompt table: from the header when present, otherwise built up from
    // first-occurrence records.
    let mut prompts: Vec<Option<Prompt>> = match &header.prompts {
        Some(table) => table
            .iter()
            .map(|p| Some(Prompt::new(p.id.clone(), p.text.clone())))
            .collect(),
        None => Vec::new(),
    };
    let mut completions: Vec<Vec<Completion>> = vec![Vec::new(); prompts.len()];
    let mut source: Option<String> = header.source.clone();
    let mut total = 0usize;

    for (i, line) in lines {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: CompletionRecord =
            serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
                line: line_no,
                reason: e.to_string(),
            })?;
        let idx = record.prompt_index;
        if idx >= prompts.len() {
            prompts.resize(idx + 1, None);
            completions.resize(idx + 1, Vec::new());
        }
        match &prompts[idx] {
            Some(existing) => {
                if existing.id != record.prompt_id {
                    return Err(Error::MalformedRecord {
                        line: line_no,
                        reason: format!(
                            "prompt_index {idx} maps to id '{}' but record says '{}'",
                            existing.id, record.prompt_id
                        ),
                    });
                }
            }
            None => {
                let text = record.prompt_text.clone().ok_or_else(|| Error::MalformedRecord {
                    line: line_no,
                    reason: format!(
                        "first occurrence of prompt '{}' must carry prompt_text",
                        record.prompt_id
                    ),
                })?;
                prompts[idx] = Some(Prompt::new(record.prompt_id.clone(), text));
            }
        }
        let completion = match (&record.completion_text, &record.completion_tokens) {
            (Some(text), None) => {
                if space.mode() != SpaceMode::Char {
                    return Err(Error::MalformedRecord {
                        line: line_no,
                        reason: "completion_text in a token-space pool".into(),
                    });
                }
                Completion::from_text(text)
            }
            (None, Some(tokens)) => {
                if space.mode() != SpaceMode::Token {
                    return Err(Error::MalformedRecord {
                        line: line_no,
                        reason: "completion_tokens in a character-space pool".into(),
                    });
                }
                Completion::new(tokens.clone())
            }
            _ => {
                return Err(Error::MalformedRecord {
                    line: line_no,
                    reason: "need exactly one of completion_text / completion_tokens".into(),
                });
            }
        };
        if completion.len() > space.max_length() {
            return Err(Error::LengthExceeded {
                line: line_no,
                len: completion.len(),
                max: space.max_length(),
            });
        }
        if let Some(&id) = completion.symbols().iter().find(|&&id| id >= space.vocab_size()) {
            return Err(Error::SymbolOutOfRange {
                line: line_no,
                id,
                vocab_size: space.vocab_size(),
            });
        }
        if source.is_none() {
            source = record.source.clone();
        }
        completions[idx].push(completion);
        total += 1;
    }

    if total == 0 {
        return Err(Error::EmptyPool("file contains no completion records".into()));
    }
    let prompts = prompts
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            p.ok_or_else(|| Error::MalformedRecord {
                line: 0,
                reason: format!("prompt_index {i} never appears and is not in the header table"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let pool = Pool::new(space, prompts, completions, source.unwrap_or_default())?;
    Ok(pool.with_metadata(header.meta))
}

fn io_err(e: serde_json::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}
