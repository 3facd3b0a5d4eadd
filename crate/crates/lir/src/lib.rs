//! Lifelong interest representations for CTR models.
//!
//! Unbounded per-user behavior streams are partitioned incrementally; each
//! sealed partition is distilled by a chat model into an interest summary
//! and, cascaded against its predecessor, an interest shift. The texts are
//! embedded, reduced with a fitted principal-component projection, cached
//! in an append-only store, and fused by self-attention pooling into a
//! long-term interest vector that a small CTR model consumes as an extra
//! feature. The expensive model runs once per partition instead of once
//! per impression, and never at prediction time.
//!
//! Modules follow the data path: [`stream`] (partitioning state machine) →
//! [`prompt`] (cascaded prompts) → [`encoding`] (embedding + projection) →
//! [`fusion`] (attention pooling) → [`ctr`] (prediction head), with
//! [`pipeline`] orchestrating, [`store`] caching, [`ledger`] accounting,
//! [`client`] talking to backends, and [`data`] loading or synthesizing
//! datasets.

pub mod binio;
pub mod client;
pub mod ctr;
pub mod data;
pub mod encoding;
pub mod error;
pub mod fusion;
pub mod ledger;
pub mod matrix;
pub mod metrics;
pub mod pipeline;
pub mod prompt;
pub mod store;
pub mod stream;

pub use error::{Error, Result};
