//! Data model for prompts, completions, pools, and samples.
//!
//! A [`Pool`] is a pre-collected per-prompt set of completions from one
//! source. Tests never query the source directly: they draw finite samples
//! from pools with replacement, which makes every experiment replayable
//! from a seed.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::RandomStream;

mod io;
pub use io::{load_pool, save_pool};

/// Version tag shared by all line-delimited JSON artifacts.
pub fn io_format_version() -> u32 {
    io::FORMAT_VERSION
}

/// Upper bound of the Unicode scalar value range. Character-space pools use
/// this as their vocabulary size rather than counting assigned code points,
/// which changes between Unicode versions.
pub const CHAR_VOCAB_SIZE: u32 = 0x110000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpaceMode {
    Token,
    Char,
}

/// The space completions live in: a vocabulary of `vocab_size` symbol codes
/// and a maximum length. The padding symbol is `vocab_size` itself — one past
/// the vocabulary — and never appears in stored completions; it exists only
/// inside kernel evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SymbolSpace {
    vocab_size: u32,
    max_length: usize,
    mode: SpaceMode,
}

impl SymbolSpace {
    pub fn token(vocab_size: u32, max_length: usize) -> Result<Self> {
        if vocab_size == 0 || max_length == 0 {
            return Err(Error::InvalidConfig(
                "vocabulary size and maximum length must be positive".into(),
            ));
        }
        Ok(Self {
            vocab_size,
            max_length,
            mode: SpaceMode::Token,
        })
    }

    pub fn character(max_length: usize) -> Result<Self> {
        if max_length == 0 {
            return Err(Error::InvalidConfig("maximum length must be positive".into()));
        }
        Ok(Self {
            vocab_size: CHAR_VOCAB_SIZE,
            max_length,
            mode: SpaceMode::Char,
        })
    }

    pub(crate) fn with_mode(vocab_size: u32, max_length: usize, mode: SpaceMode) -> Result<Self> {
        match mode {
            SpaceMode::Token => Self::token(vocab_size, max_length),
            SpaceMode::Char => {
                if vocab_size != CHAR_VOCAB_SIZE {
                    return Err(Error::InvalidConfig(format!(
                        "character space must use vocab_size {CHAR_VOCAB_SIZE}, got {vocab_size}"
                    )));
                }
                Self::character(max_length)
            }
        }
    }

    pub fn vocab_size(&self) -> u32 {
        self.vocab_size
    }

    pub fn max_length(&self) -> usize {
        self.max_length
    }

    pub fn mode(&self) -> SpaceMode {
        self.mode
    }

    /// The reserved padding symbol, outside `[0, vocab_size)`.
    pub fn pad_id(&self) -> u32 {
        self.vocab_size
    }

    /// Same space with a different maximum length (used by length sweeps).
    pub fn with_max_length(&self, max_length: usize) -> Result<Self> {
        Self::with_mode(self.vocab_size, max_length, self.mode)
    }

    pub fn check_completion(&self, completion: &Completion) -> Result<()> {
        if completion.len() > self.max_length {
            return Err(Error::SpaceMismatch(format!(
                "completion length {} exceeds maximum {}",
                completion.len(),
                self.max_length
            )));
        }
        for &id in completion.symbols() {
            if id >= self.vocab_size {
                return Err(Error::SpaceMismatch(format!(
                    "symbol {id} out of range for vocabulary size {}",
                    self.vocab_size
                )));
            }
        }
        Ok(())
    }
}

/// A bounded sequence of symbol codes: token IDs in token space, Unicode
/// scalar values in character space.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Completion(Vec<u32>);

impl Completion {
    pub fn new(symbols: Vec<u32>) -> Self {
        Self(symbols)
    }

    /// Character-space completion from text, one symbol per scalar value.
    pub fn from_text(text: &str) -> Self {
        Self(text.chars().map(|c| c as u32).collect())
    }

    /// Back to text. `None` if any symbol is not a valid scalar value.
    pub fn to_text(&self) -> Option<String> {
        self.0.iter().map(|&id| char::from_u32(id)).collect()
    }

    pub fn symbols(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn truncated(&self, max_len: usize) -> Completion {
        Completion(self.0.iter().copied().take(max_len).collect())
    }
}

impl From<&str> for Completion {
    fn from(text: &str) -> Self {
        Completion::from_text(text)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Prompt {
    pub id: String,
    pub text: String,
}

impl Prompt {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
        }
    }
}

/// A weighted set of prompts. Prompt identity is positional: operations gate
/// on `prompt_index`, never on text equality.
#[derive(Clone, Debug)]
pub struct PromptDistribution {
    prompts: Vec<Prompt>,
    weights: Vec<f64>,
    cumulative: Vec<f64>,
    last_positive: usize,
}

impl PromptDistribution {
    /// Weights must be non-negative and sum to 1 within 1e-12. Zero weights
    /// are allowed; an all-zero vector is rejected.
    pub fn new(prompts: Vec<Prompt>, weights: Vec<f64>) -> Result<Self> {
        if prompts.is_empty() {
            return Err(Error::InvalidConfig("need at least one prompt".into()));
        }
        if prompts.len() != weights.len() {
            return Err(Error::InvalidConfig(format!(
                "{} prompts but {} weights",
                prompts.len(),
                weights.len()
            )));
        }
        let mut seen = HashSet::new();
        for p in &prompts {
            if !seen.insert(p.id.as_str()) {
                return Err(Error::InvalidConfig(format!("duplicate prompt id '{}'", p.id)));
            }
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidConfig("weights must be non-negative and finite".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!("weights sum to {sum}, expected 1")));
        }
        let mut cumulative = Vec::with_capacity(weights.len());
        let mut acc = 0.0;
        for &w in &weights {
            acc += w;
            cumulative.push(acc);
        }
        let last_positive = weights
            .iter()
            .rposition(|&w| w > 0.0)
            .ok_or_else(|| Error::InvalidConfig("all prompt weights are zero".into()))?;
        Ok(Self {
            prompts,
            weights,
            cumulative,
            last_positive,
        })
    }

    pub fn uniform(prompts: Vec<Prompt>) -> Result<Self> {
        let m = prompts.len();
        if m == 0 {
            return Err(Error::InvalidConfig("need at least one prompt".into()));
        }
        let w = 1.0 / m as f64;
        let mut weights = vec![w; m];
        // Make the sum exactly 1 regardless of rounding.
        let partial: f64 = weights[..m - 1].iter().sum();
        weights[m - 1] = 1.0 - partial;
        Self::new(prompts, weights)
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    pub fn prompts(&self) -> &[Prompt] {
        &self.prompts
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, index: usize) -> f64 {
        self.weights[index]
    }

    pub fn index_of(&self, prompt_id: &str) -> Option<usize> {
        self.prompts.iter().position(|p| p.id == prompt_id)
    }

    /// Draw one prompt index by inverse CDF. Consumes one `f64` draw.
    /// Zero-weight prompts are never returned.
    pub fn draw_index(&self, rng: &mut RandomStream) -> usize {
        let u: f64 = rng.random();
        let idx = self.cumulative.partition_point(|&c| c <= u);
        idx.min(self.last_positive)
    }
}

/// One drawn item: a prompt index paired with a completion.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PromptCompletion {
    pub prompt_index: usize,
    pub completion: Completion,
}

impl PromptCompletion {
    pub fn new(prompt_index: usize, completion: impl Into<Completion>) -> Self {
        Self {
            prompt_index,
            completion: completion.into(),
        }
    }
}

/// A pre-collected per-prompt set of completions from one source, sampled
/// with replacement to form test samples. Immutable after construction.
#[derive(Clone, Debug, PartialEq)]
pub struct Pool {
    space: SymbolSpace,
    prompts: Vec<Prompt>,
    completions: Vec<Vec<Completion>>,
    source_label: String,
    metadata: BTreeMap<String, String>,
}

impl Pool {
    /// `completions[i]` is the list for prompt index `i`; an empty list means
    /// the prompt has no entries (drawing against it with positive weight is
    /// an error).
    pub fn new(
        space: SymbolSpace,
        prompts: Vec<Prompt>,
        completions: Vec<Vec<Completion>>,
        source_label: impl Into<String>,
    ) -> Result<Self> {
        if prompts.len() != completions.len() {
            return Err(Error::InvalidConfig(format!(
                "{} prompts but {} completion lists",
                prompts.len(),
                completions.len()
            )));
        }
        for list in &completions {
            for c in list {
                space.check_completion(c)?;
            }
        }
        Ok(Self {
            space,
            prompts,
            completions,
            source_label: source_label.into(),
            metadata: BTreeMap::new(),
        })
    }

    pub fn space(&self) -> &SymbolSpace {
        &self.space
    }

    pub fn prompts(&self) -> &[Prompt] {
        &self.prompts
    }

    pub fn prompt_count(&self) -> usize {
        self.prompts.len()
    }

    /// Completions for a prompt index; empty slice if out of range or absent.
    pub fn completions_for(&self, prompt_index: usize) -> &[Completion] {
        self.completions
            .get(prompt_index)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn total_completions(&self) -> usize {
        self.completions.iter().map(Vec::len).sum()
    }

    pub fn source_label(&self) -> &str {
        &self.source_label
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn with_metadata(mut self, metadata: BTreeMap<String, String>) -> Self {
        self.metadata = metadata;
        self
    }

    pub fn insert_metadata(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.metadata.insert(key.into(), value.into());
    }

    /// Uniform prompt distribution over this pool's prompts.
    pub fn uniform_distribution(&self) -> Result<PromptDistribution> {
        PromptDistribution::uniform(self.prompts.clone())
    }

    /// Reorder this pool's prompts to match `pi` by prompt id. Errors if a
    /// positive-weight prompt of `pi` is missing here.
    pub fn align_to(&self, pi: &PromptDistribution) -> Result<Pool> {
        let by_id: HashMap<&str, usize> = self
            .prompts
            .iter()
            .enumerate()
            .map(|(i, p)| (p.id.as_str(), i))
            .collect();
        let mut prompts = Vec::with_capacity(pi.len());
        let mut completions = Vec::with_capacity(pi.len());
        for (j, prompt) in pi.prompts().iter().enumerate() {
            match by_id.get(prompt.id.as_str()) {
                Some(&i) => {
                    prompts.push(self.prompts[i].clone());
                    completions.push(self.completions[i].clone());
                }
                None if pi.weight(j) > 0.0 => {
                    return Err(Error::MissingPrompt {
                        prompt_index: j,
                        weight: pi.weight(j),
                        pool: self.source_label.clone(),
                    });
                }
                None => {
                    prompts.push(prompt.clone());
                    completions.push(Vec::new());
                }
            }
        }
        let mut pool = Pool::new(self.space, prompts, completions, self.source_label.clone())?;
        pool.metadata = self.metadata.clone();
        Ok(pool)
    }

    /// Copy of this pool with every completion truncated to `max_length` and
    /// the space's maximum length reduced to match.
    pub fn truncated(&self, max_length: usize) -> Result<Pool> {
        if max_length == 0 || max_length > self.space.max_length() {
            return Err(Error::InvalidConfig(format!(
                "truncation length {max_length} outside 1..={}",
                self.space.max_length()
            )));
        }
        let space = self.space.with_max_length(max_length)?;
        let completions = self
            .completions
            .iter()
            .map(|list| list.iter().map(|c| c.truncated(max_length)).collect())
            .collect();
        let mut pool = Pool::new(space, self.prompts.clone(), completions, self.source_label.clone())?;
        pool.metadata = self.metadata.clone();
        Ok(pool)
    }

    /// Split into two disjoint halves per prompt (even/odd interleave).
    /// Errors if any non-empty prompt list has fewer than 2 completions.
    pub fn split_halves(&self) -> Result<(Pool, Pool)> {
        let mut left = Vec::with_capacity(self.completions.len());
        let mut right = Vec::with_capacity(self.completions.len());
        for list in &self.completions {
            if !list.is_empty() && list.len() < 2 {
                return Err(Error::PoolTooSmallToSplit(self.source_label.clone()));
            }
            let (a, b): (Vec<_>, Vec<_>) = list
                .iter()
                .cloned()
                .enumerate()
                .partition(|(i, _)| i % 2 == 0);
            left.push(a.into_iter().map(|(_, c)| c).collect());
            right.push(b.into_iter().map(|(_, c)| c).collect());
        }
        let a = Pool::new(
            self.space,
            self.prompts.clone(),
            left,
            format!("{}[a]", self.source_label),
        )?;
        let b = Pool::new(
            self.space,
            self.prompts.clone(),
            right,
            format!("{}[b]", self.source_label),
        )?;
        Ok((a, b))
    }
}

/// N prompt-completion pairs drawn from one source.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    items: Vec<PromptCompletion>,
}

impl Sample {
    pub fn new(items: Vec<PromptCompletion>) -> Self {
        Self { items }
    }

    pub fn items(&self) -> &[PromptCompletion] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Exact multiset counts of the items in a sample.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CountTable {
    counts: HashMap<PromptCompletion, usize>,
    total: usize,
}

impl CountTable {
    pub fn get(&self, item: &PromptCompletion) -> usize {
        self.counts.get(item).copied().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&PromptCompletion, usize)> {
        self.counts.iter().map(|(k, &v)| (k, v))
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    /// Total count; equals the size of the originating sample.
    pub fn total(&self) -> usize {
        self.total
    }
}

/// Multiset counts of `sample`, keyed by (prompt index, completion).
pub fn counts(sample: &Sample) -> CountTable {
    let mut counts: HashMap<PromptCompletion, usize> = HashMap::new();
    for item in sample.items() {
        *counts.entry(item.clone()).or_insert(0) += 1;
    }
    CountTable {
        counts,
        total: sample.len(),
    }
}

/// Draw `n` items with replacement: prompt indices i.i.d. from `pi`, then a
/// uniform choice from the pool's list for that prompt. Identical inputs and
/// seed give an identical sample. Consumes one prompt draw plus one index
/// draw per item.
pub fn draw_sample(
    pool: &Pool,
    pi: &PromptDistribution,
    n: usize,
    rng: &mut RandomStream,
) -> Result<Sample> {
    if n == 0 {
        return Err(Error::EmptyDraw);
    }
    for (i, &w) in pi.weights().iter().enumerate() {
        if w > 0.0 && pool.completions_for(i).is_empty() {
            return Err(Error::MissingPrompt {
                prompt_index: i,
                weight: w,
                pool: pool.source_label().to_string(),
            });
        }
    }
    let mut items = Vec::with_capacity(n);
    for _ in 0..n {
        let prompt_index = pi.draw_index(rng);
        let list = pool.completions_for(prompt_index);
        let j = rng.random_range(0..list.len());
        items.push(PromptCompletion {
            prompt_index,
            completion: list[j].clone(),
        });
    }
    Ok(Sample::new(items))
}

/// Convert a token-space pool to character space: decode each token through
/// `decode_table`, drop `special_ids`, concatenate, and re-encode as scalar
/// values. The result uses a character space capped at `char_cap`.
pub fn decode_to_characters(
    pool: &Pool,
    decode_table: &HashMap<u32, String>,
    special_ids: &HashSet<u32>,
    char_cap: usize,
) -> Result<Pool> {
    if pool.space().mode() != SpaceMode::Token {
        return Err(Error::SpaceMismatch(
            "decode_to_characters requires a token-space pool".into(),
        ));
    }
    let space = SymbolSpace::character(char_cap)?;
    let mut completions = Vec::with_capacity(pool.prompt_count());
    for i in 0..pool.prompt_count() {
        let mut decoded_list = Vec::with_capacity(pool.completions_for(i).len());
        for completion in pool.completions_for(i) {
            let mut text = String::new();
            for &id in completion.symbols() {
                if special_ids.contains(&id) {
                    continue;
                }
                match decode_table.get(&id) {
                    Some(piece) => text.push_str(piece),
                    None => return Err(Error::UnknownToken { id }),
                }
            }
            let decoded = Completion::from_text(&text);
            if decoded.len() > char_cap {
                return Err(Error::DecodedTooLong {
                    len: decoded.len(),
                    cap: char_cap,
                });
            }
            decoded_list.push(decoded);
        }
        completions.push(decoded_list);
    }
    let mut out = Pool::new(space, pool.prompts().to_vec(), completions, pool.source_label())?;
    out.metadata = pool.metadata.clone();
    Ok(out)
}
