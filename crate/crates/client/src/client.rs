//! Sample collection over OpenAI-compatible chat-completion endpoints.
//!
//! Requests go out one completion at a time (`n` = 1), bounded by
//! `max_in_flight` worker threads and a shared sliding-window rate limiter.
//! Every completion is appended to the journal the moment it arrives, so a
//! killed collection resumes by issuing only the missing requests.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use rand::Rng;
use serde::{Deserialize, Serialize};

use eqtest_core::corpus::{load_pool, Pool, PromptDistribution};
use eqtest_core::rng::RandomStream;

use crate::config::{EndpointConfig, SamplingParams};
use crate::error::{ClientError, Result};
use crate::journal::CollectionJournal;
use crate::limiter::RateLimiter;

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    n: u32,
    temperature: f64,
    max_tokens: usize,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatResponseMessage,
}

#[derive(Deserialize)]
struct ChatResponseMessage {
    content: String,
}

enum AttemptError {
    /// 429 / 5xx / transport / malformed body: back off and retry.
    Retryable(String),
    /// 401 / 403: abort the whole collection.
    Fatal(u16),
    /// Other client errors: give up on this slot.
    Permanent(String),
}

fn send_one(
    http: &reqwest::blocking::Client,
    cfg: &EndpointConfig,
    params: &SamplingParams,
    api_key: Option<&str>,
    prompt_text: &str,
) -> std::result::Result<String, AttemptError> {
    let request = ChatRequest {
        model: &cfg.model_name,
        messages: [ChatMessage {
            role: "user",
            content: prompt_text,
        }],
        n: 1,
        temperature: params.temperature,
        max_tokens: params.max_tokens,
    };
    let mut builder = http.post(cfg.completions_url()).json(&request);
    if let Some(key) = api_key {
        builder = builder.bearer_auth(key);
    }
    let response = builder
        .send()
        .map_err(|e| AttemptError::Retryable(format!("transport: {e}")))?;
    let status = response.status();
    if status.as_u16() == 401 || status.as_u16() == 403 {
        return Err(AttemptError::Fatal(status.as_u16()));
    }
    if status.as_u16() == 429 || status.is_server_error() {
        return Err(AttemptError::Retryable(format!("HTTP {status}")));
    }
    if !status.is_success() {
        return Err(AttemptError::Permanent(format!("HTTP {status}")));
    }
    let body: ChatResponse = response
        .json()
        .map_err(|e| AttemptError::Retryable(format!("malformed response body: {e}")))?;
    match body.choices.into_iter().next() {
        Some(choice) => Ok(choice.message.content),
        None => Err(AttemptError::Retryable("response carried no choices".into())),
    }
}

struct Collector<'a> {
    cfg: &'a EndpointConfig,
    params: &'a SamplingParams,
    api_key: Option<String>,
    limiter: RateLimiter,
    journal: &'a CollectionJournal,
    fatal: AtomicBool,
    fatal_status: Mutex<Option<u16>>,
}

impl Collector<'_> {
    /// Issue one request with retries; journal success or permanent failure.
    fn collect_slot(
        &self,
        http: &reqwest::blocking::Client,
        prompt_index: usize,
        prompt_id: &str,
        prompt_text: &str,
        rng: &mut RandomStream,
    ) -> Result<()> {
        let backoff = &self.cfg.backoff;
        let mut last_error = String::new();
        for attempt in 0..backoff.max_attempts {
            if self.fatal.load(Ordering::Relaxed) {
                return Ok(());
            }
            self.limiter.acquire();
            match send_one(http, self.cfg, self.params, self.api_key.as_deref(), prompt_text) {
                Ok(text) => {
                    self.journal.record_done(prompt_index, prompt_id, prompt_text, &text)?;
                    return Ok(());
                }
                Err(AttemptError::Fatal(status)) => {
                    self.fatal.store(true, Ordering::Relaxed);
                    *self.fatal_status.lock().expect("status lock") = Some(status);
                    return Ok(());
                }
                Err(AttemptError::Permanent(reason)) => {
                    self.journal.record_pending(prompt_index, prompt_id, &reason)?;
                    return Ok(());
                }
                Err(AttemptError::Retryable(reason)) => {
                    last_error = reason;
                    if attempt + 1 < backoff.max_attempts {
                        let delay = backoff.raw_delay(attempt);
                        let slept = if backoff.jitter {
                            delay.mul_f64(rng.random::<f64>())
                        } else {
                            delay
                        };
                        std::thread::sleep(slept);
                    }
                }
            }
        }
        // Retries exhausted: record and skip.
        self.journal.record_pending(prompt_index, prompt_id, &last_error)
    }
}

/// Collect `per_prompt` completions for every positive-weight prompt of `pi`
/// into a character-space pool, resuming from `journal_path` when a partial
/// journal exists. Returns [`ClientError::Incomplete`] when some slots could
/// not be filled; the journal is kept either way.
pub fn sample_endpoint(
    cfg: &EndpointConfig,
    params: &SamplingParams,
    pi: &PromptDistribution,
    per_prompt: usize,
    journal_path: impl AsRef<Path>,
    rng: &mut RandomStream,
) -> Result<Pool> {
    cfg.validate()?;
    params.validate()?;
    if per_prompt == 0 {
        return Err(ClientError::Config("per_prompt must be positive".into()));
    }
    let api_key = if cfg.api_key_env.is_empty() {
        None
    } else {
        Some(std::env::var(&cfg.api_key_env).map_err(|_| ClientError::MissingApiKey {
            env: cfg.api_key_env.clone(),
        })?)
    };

    let char_cap = params.effective_char_cap();
    let journal = CollectionJournal::open_or_create(
        &journal_path,
        pi,
        char_cap,
        &cfg.model_name,
        per_prompt,
    )?;

    // Only the missing slots become tasks.
    let mut tasks: Vec<usize> = Vec::new();
    let mut expected = 0usize;
    for (i, &w) in pi.weights().iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        expected += per_prompt;
        for _ in journal.collected(i)..per_prompt {
            tasks.push(i);
        }
    }

    let collector = Collector {
        cfg,
        params,
        api_key,
        limiter: RateLimiter::new(cfg.requests_per_minute as usize, cfg.rate_window),
        journal: &journal,
        fatal: AtomicBool::new(false),
        fatal_status: Mutex::new(None),
    };

    if !tasks.is_empty() {
        let queue = Mutex::new(tasks.into_iter().collect::<std::collections::VecDeque<usize>>());
        let root = rng.derive_child();
        let workers = cfg.max_in_flight.min(expected.max(1));
        std::thread::scope(|scope| -> Result<()> {
            let mut handles = Vec::with_capacity(workers);
            for w in 0..workers {
                let mut worker_rng = root.split(w as u64);
                let queue = &queue;
                let collector = &collector;
                let pi = &pi;
                handles.push(scope.spawn(move || -> Result<()> {
                    let http = reqwest::blocking::Client::builder()
                        .timeout(collector.cfg.request_timeout)
                        .build()
                        .map_err(|e| ClientError::Config(format!("http client: {e}")))?;
                    loop {
                        if collector.fatal.load(Ordering::Relaxed) {
                            return Ok(());
                        }
                        let next = queue.lock().expect("queue lock").pop_front();
                        let Some(prompt_index) = next else {
                            return Ok(());
                        };
                        let prompt = &pi.prompts()[prompt_index];
                        collector.collect_slot(
                            &http,
                            prompt_index,
                            &prompt.id,
                            &prompt.text,
                            &mut worker_rng,
                        )?;
                    }
                }));
            }
            for handle in handles {
                handle.join().expect("collection worker panicked")?;
            }
            Ok(())
        })?;
    }

    if let Some(status) = *collector.fatal_status.lock().expect("status lock") {
        return Err(ClientError::Auth { status });
    }

    let collected = journal.total_collected();
    let mut metadata = BTreeMap::new();
    metadata.insert("model".into(), cfg.model_name.clone());
    metadata.insert("temperature".into(), params.temperature.to_string());
    metadata.insert("max_tokens".into(), params.max_tokens.to_string());
    metadata.insert("char_cap".into(), char_cap.to_string());
    metadata.insert("collected_at_unix".into(), unix_now().to_string());
    if collected < expected {
        return Err(ClientError::Incomplete { collected, expected });
    }
    journal.into_pool(pi, metadata)
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .unwrap_or(Duration::ZERO)
        .as_secs()
}

/// Where the reference side of a paired collection comes from: a local pool
/// file or another endpoint.
pub enum ReferenceSource {
    PoolFile(std::path::PathBuf),
    Endpoint(EndpointConfig),
}

/// Produce the two pools an audit consumes, sharing the prompt distribution,
/// sampling parameters, and symbol space. Configuration mismatches between a
/// reference pool file and the requested parameters fail before any request
/// goes out.
pub fn paired_collection(
    reference: &ReferenceSource,
    cfg_api: &EndpointConfig,
    params: &SamplingParams,
    pi: &PromptDistribution,
    per_prompt: usize,
    journal_dir: impl AsRef<Path>,
    rng: &mut RandomStream,
) -> Result<(Pool, Pool)> {
    let journal_dir = journal_dir.as_ref();
    std::fs::create_dir_all(journal_dir)?;

    let reference_pool = match reference {
        ReferenceSource::PoolFile(path) => {
            let pool = load_pool(path)?;
            if let Some(recorded) = pool.metadata().get("max_tokens") {
                if recorded != &params.max_tokens.to_string() {
                    return Err(ClientError::Config(format!(
                        "reference pool was collected with max_tokens {recorded}, requested {}",
                        params.max_tokens
                    )));
                }
            }
            if pool.space().max_length() != params.effective_char_cap() {
                return Err(ClientError::Config(format!(
                    "reference pool caps completions at {} characters, requested {}",
                    pool.space().max_length(),
                    params.effective_char_cap()
                )));
            }
            pool.align_to(pi)?
        }
        ReferenceSource::Endpoint(cfg_ref) => {
            let journal = journal_dir.join(format!("{}.ref.journal", sanitize(&cfg_ref.model_name)));
            sample_endpoint(cfg_ref, params, pi, per_prompt, journal, rng)?
        }
    };

    let journal = journal_dir.join(format!("{}.api.journal", sanitize(&cfg_api.model_name)));
    let api_pool = sample_endpoint(cfg_api, params, pi, per_prompt, journal, rng)?;
    Ok((reference_pool, api_pool))
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}
