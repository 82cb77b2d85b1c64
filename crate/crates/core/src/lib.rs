//! Event-aware evidence retrieval for fact checking.
//!
//! Claims and evidence are reduced to event summaries ([`event`]), scored
//! lexically ([`sparse`]) and densely ([`encoder`]), retrieved with a
//! recall-then-rerank pipeline ([`pipeline`]) and trained with a contrastive
//! loop whose loss mixture and hard-negative ratio follow the model's own
//! discrimination margin ([`trainer`]).

pub mod config;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod event;
pub mod parallel;
pub mod pipeline;
pub mod sparse;
pub mod summarizer;
pub mod trainer;

pub use error::{Error, Result};
