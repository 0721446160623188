//! Toolkit for LLM-assisted repository mining.
//!
//! The pipeline turns an initial dataset of repository items into an enhanced,
//! validated dataset in four stages:
//!
//! 1. [`prompt`]: author, lint and version prompt templates.
//! 2. [`pilot`]: dual annotation of a sample, Cohen's kappa and the agreement gate.
//! 3. [`bench`]: oracle-based evaluation and ranking of several models.
//! 4. [`validate`]: format, duplication, grounding and expectation checks.
//!
//! [`ingest`] builds the initial dataset, [`llm`] talks to providers, and
//! [`provenance`] keeps the audit trail and the replay manifest.

pub mod bench;
pub mod config;
pub mod digest;
pub mod error;
pub mod ingest;
pub mod jsonl;
pub mod labeling;
pub mod llm;
pub mod model;
pub mod pilot;
pub mod pipeline;
pub mod prompt;
pub mod provenance;
mod util;
pub mod validate;

pub use error::{Error, Result};
pub use model::{
    compute_item_id, Annotation, Annotator, DataItem, EnhancedRecord, LabelSchema, ProvenanceRecord, SourceLocator, Task,
    TokenUsage,
};
