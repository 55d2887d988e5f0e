//! Collection of completion samples from OpenAI-compatible chat-completion
//! endpoints into [`eqtest_core::corpus::Pool`]s, with sliding-window rate
//! limiting, exponential-backoff retries, and a resumable append-only
//! journal. The [`mock`] module hosts a scriptable in-process server for
//! testing configurations without touching a real endpoint.

mod client;
mod config;
mod error;
mod journal;
mod limiter;
pub mod mock;

pub use client::{paired_collection, sample_endpoint, ReferenceSource};
pub use config::{BackoffConfig, EndpointConfig, SamplingParams};
pub use error::{ClientError, Result};
pub use journal::CollectionJournal;
pub use limiter::RateLimiter;
